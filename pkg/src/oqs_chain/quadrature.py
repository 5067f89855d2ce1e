"""Quadrature helpers: composite Gauss-Legendre panels and principal values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from numpy.typing import NDArray
from scipy import integrate


class QuadratureError(RuntimeError):
    """Raised when a quadrature cannot reach the requested tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budgets shared by every quadrature in the package.

    Parameters
    ----------
    rel_tol, abs_tol : float
        Target relative / absolute accuracy of each integral.
    max_panels : int
        Largest number of Gauss-Legendre panels a single integral may use.
    pv_excision : float
        Largest half-width of the symmetric excision around a pole.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-13
    max_panels: int = 200_000
    pv_excision: float = 1e-2

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.pv_excision > 0):
            raise ValueError("tolerances and excision width must be positive")
        if self.max_panels < 64:
            raise ValueError("max_panels must be at least 64")


_CHUNK = 200_000


def _gauss_sum(func, a, b, order):
    nodes, weights = leggauss(order)
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    total = None
    per_chunk = max(1, _CHUNK // order)
    for start in range(0, len(a), per_chunk):
        sl = slice(start, start + per_chunk)
        x = (mid[sl, None] + half[sl, None] * nodes).ravel()
        w = (half[sl, None] * weights).ravel()
        part = func(x) @ w
        total = part if total is None else total + part
    return total


def panel_integrate(
    func: Callable[[NDArray[np.float64]], NDArray],
    breaks: NDArray[np.float64],
    spec: QuadratureSpec,
    order: int = 12,
    max_order: int = 96,
) -> NDArray:
    """Integrate a vector-valued ``func`` over consecutive panels.

    ``func`` maps a 1-D array of abscissae of length n to an array of shape
    (..., n). Each panel gets an ``order``-point Gauss-Legendre rule; the
    order is doubled on all panels until two successive results agree to
    the tolerances in ``spec``.
    """
    breaks = np.asarray(breaks, dtype=float)
    n_panels = len(breaks) - 1
    if n_panels > spec.max_panels:
        raise QuadratureError(
            f"integral needs {n_panels} panels but the budget is {spec.max_panels}; "
            f"raise max_panels to at least {n_panels}"
        )
    a, b = breaks[:-1], breaks[1:]
    coarse = _gauss_sum(func, a, b, order)
    while True:
        order *= 2
        fine = _gauss_sum(func, a, b, order)
        err = np.max(np.abs(fine - coarse))
        scale = np.max(np.abs(fine))
        if err <= max(spec.abs_tol, spec.rel_tol * scale):
            return fine
        if order >= max_order:
            raise QuadratureError(
                f"panel quadrature stalled at order {order}: estimated error {err:.3e}, "
                f"target {max(spec.abs_tol, spec.rel_tol * scale):.3e}"
            )
        coarse = fine


def refine_breaks(breaks: NDArray[np.float64], max_width: float) -> NDArray[np.float64]:
    """Split every panel wider than ``max_width`` into equal parts."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    widths = np.diff(breaks)
    pieces = np.maximum(1, np.ceil(widths / max_width - 1e-12).astype(int))
    if np.all(pieces == 1):
        return breaks
    out = [breaks[:1]]
    for left, width, k in zip(breaks[:-1], widths, pieces):
        out.append(left + width * np.arange(1, k + 1) / k)
    out = np.concatenate(out)
    out[-1] = breaks[-1]
    return out


def _quad(func, a, b, spec):
    if b <= a:
        return 0.0
    value, err = integrate.quad(func, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=500)
    if not np.isfinite(value) or err > 1e3 * max(spec.abs_tol, spec.rel_tol * abs(value)):
        raise QuadratureError(f"quad on [{a}, {b}] reached error {err:.3e}")
    return value


def principal_value(
    func: Callable[[float], float],
    pole: float,
    lower: float,
    upper: float,
    spec: QuadratureSpec,
) -> float:
    """Cauchy principal value of the integral of func(w) / (pole - w) on [lower, upper].

    Inside the largest interval symmetric about the pole the integrand is
    folded onto u = |w - pole|, giving the smooth function
    (f(pole - u) - f(pole + u)) / u. The interval [0, delta] next to the pole
    is excised for delta, delta/2, delta/4 and the result is Richardson
    extrapolated to delta -> 0 (the excision error is odd in delta).
    """
    if not lower < upper:
        raise ValueError("lower must be below upper")
    if pole <= lower or pole >= upper:
        return _quad(lambda w: func(w) / (pole - w), lower, upper, spec)
    reach = min(pole - lower, upper - pole)
    delta = min(spec.pv_excision, 0.25 * reach)

    def folded(u):
        return (func(pole - u) - func(pole + u)) / u

    outer = _quad(lambda w: func(w) / (pole - w), lower, pole - reach, spec)
    outer += _quad(lambda w: func(w) / (pole - w), pole + reach, upper, spec)
    core = _quad(folded, delta, reach, spec)
    # partial integrals over [delta/4, delta/2] and [delta/2, delta]
    inner_far = _quad(folded, delta / 2, delta, spec)
    inner_near = _quad(folded, delta / 4, delta / 2, spec)
    r1 = core
    r2 = core + inner_far
    r3 = core + inner_far + inner_near
    e1 = 2.0 * r2 - r1
    e2 = 2.0 * r3 - r2
    return outer + (8.0 * e2 - e1) / 7.0
