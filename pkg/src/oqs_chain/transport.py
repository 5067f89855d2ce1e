"""Transport observables and the two continuity equations.

Energy (excitation number) bookkeeping through the middle site:

    d<n_2>/dt = A <J_12 - J_23> + q_left + q_right,

with <J_jk> = i(<a_j a_k^dag> - <a_j^dag a_k>). For the closed chain, the
exact dynamics and the local generator A = -g and q = 0. Any other generator
in the normal form of ``generators`` is split the same way: the part of the
middle-site rate that is a difference of the two bond currents goes into A,
everything else into the sink/source term of the bath it came from.

Probability bookkeeping on the line: with the position marginals pdf_l of
the three sites, rho(x) = (1/3) sum_l pdf_l(x) obeys

    d rho/dt + d/dx (j_unitary + j_dissipative + q_term + d/dx p_term) = 0,

where the fields are Gaussian conditional moments of the linear drift and
diffusion of the Wigner function (see ``probability_currents``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dynamics import CovarianceState, build_drift_diffusion
from .generators import (
    GeneratorCoefficients,
    bath_lamb_shift,
    build_global,
    build_tcg,
    to_site_basis,
)
from .model import ChainParams, mean_photon, normal_modes, spectral_density
from .quadrature import QuadratureSpec

SQRT2 = math.sqrt(2.0)


def _site(i: int) -> int:
    if i not in (1, 2, 3):
        raise ValueError(f"site must be 1, 2 or 3, got {i!r}")
    return i - 1


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


# ---------------------------------------------------------------- observables


def occupation(state: CovarianceState, i: int) -> float:
    """<a_i^dag a_i> = (C_ii - 1) / 2 + |d_i|^2 (site label 1..3)."""
    k = _site(i)
    return float(np.real(state.to_site_basis().second_moments()[k, k]))


def excitation_current(state: CovarianceState, j: int, k: int) -> float:
    """<J_jk> = i(<a_j a_k^dag> - <a_j^dag a_k>) for sites j != k.

    With H_S as in ``model``, d<n_1>/dt|_H = g <J_12>.
    """
    if j == k:
        raise ValueError("current needs two distinct sites")
    p = state.to_site_basis().second_moments()
    a, b = _site(j), _site(k)
    return float(np.real(1j * (p[a, b] - p[b, a])))


def bond_coherence(state: CovarianceState, j: int, k: int) -> float:
    """<Q_jk> = <a_j^dag a_k + a_j a_k^dag> for sites j != k."""
    if j == k:
        raise ValueError("coherence needs two distinct sites")
    p = state.to_site_basis().second_moments()
    a, b = _site(j), _site(k)
    return float(np.real(p[a, b] + p[b, a]))


# ---------------------------------------------------------------- energy balance


@dataclass(frozen=True)
class EnergyBalance:
    """Middle-site rate split as a_coeff <J_12 - J_23> + sum of sink/source terms."""

    a_coeff: float
    q_terms: dict[str, float]
    rhs: float

    @property
    def q_left(self) -> float:
        return self.q_terms.get("left", 0.0)

    @property
    def q_right(self) -> float:
        return self.q_terms.get("right", 0.0)


def _middle_site_pieces(m_hat: NDArray, gamma_minus: NDArray) -> dict[str, float]:
    """Coefficients of one drift piece in d<n_2>/dt.

    (Mh P + P Mh^dag + gamma_minus)_22 = a12 J12 + a23 J23 + b12 Q12
    + b23 Q23 + d n2 + f, using P_12 = (Q12 - i J12)/2 and P_32 = (Q23 + i J23)/2.
    """
    return {
        "a12": float(np.imag(m_hat[1, 0])),
        "a23": float(-np.imag(m_hat[1, 2])),
        "b12": float(np.real(m_hat[1, 0])),
        "b23": float(np.real(m_hat[1, 2])),
        "d": float(2.0 * np.real(m_hat[1, 1])),
        "f": float(np.real(gamma_minus[1, 1])),
    }


def energy_balance(state: CovarianceState, coeffs: GeneratorCoefficients) -> EnergyBalance:
    """Split d<n_2>/dt for an arbitrary generator into divergence and sink/source parts.

    ``coeffs`` may be in either basis; it is mapped to the site basis. The
    per-bath decomposition needs ``coeffs.bath_terms``; without them the
    whole dissipative remainder is reported under the key ``"baths"``.
    """
    site = to_site_basis(coeffs)
    j12 = excitation_current(state, 1, 2)
    j23 = excitation_current(state, 2, 3)
    q12 = bond_coherence(state, 1, 2)
    q23 = bond_coherence(state, 2, 3)
    n2 = occupation(state, 2)

    pieces = {"system": _middle_site_pieces(-1j * np.asarray(site.h_system), np.zeros((3, 3)))}
    if site.bath_terms:
        for term in site.bath_terms:
            m_hat = -1j * term.h_shift - 0.5 * (term.gamma_plus.T - term.gamma_minus)
            pieces[term.name] = _middle_site_pieces(m_hat, term.gamma_minus)
    else:
        h_bath = site.h_eff - site.h_system
        m_hat = -1j * h_bath - 0.5 * (site.gamma_plus.T - site.gamma_minus)
        pieces["baths"] = _middle_site_pieces(m_hat, site.gamma_minus)

    a_coeff = 0.0
    q_terms = {}
    for name, c in pieces.items():
        a_coeff += 0.5 * (c["a12"] - c["a23"])
        q = (
            0.5 * (c["a12"] + c["a23"]) * (j12 + j23)
            + c["b12"] * q12
            + c["b23"] * q23
            + c["d"] * n2
            + c["f"]
        )
        if name == "system":
            # H_S has no symmetric, coherence or on-site part for a real hopping matrix
            if abs(q) > 1e-12 * max(1.0, abs(n2)):
                raise ValueError("system Hamiltonian produced a sink/source term")
            continue
        q_terms[name] = q
    rhs = a_coeff * (j12 - j23) + sum(q_terms.values())
    return EnergyBalance(a_coeff=a_coeff, q_terms=q_terms, rhs=rhs)


def middle_site_rate(state: CovarianceState, coeffs: GeneratorCoefficients) -> float:
    """d<n_2>/dt under ``coeffs`` straight from the moment equation."""
    site = to_site_basis(coeffs)
    dd = build_drift_diffusion(site)
    p = state.to_site_basis().second_moments()
    rate = dd.m_hat @ p + p @ dd.m_hat.conj().T + site.gamma_minus
    return float(np.real(rate[1, 1]))


def energy_rhs_exact_or_local(state: CovarianceState, params: ChainParams) -> float:
    """-g <J_12 - J_23>: the full middle-site rate of the exact and local dynamics."""
    return -params.g * (excitation_current(state, 1, 2) - excitation_current(state, 2, 3))


def energy_rhs_global(
    state: CovarianceState, params: ChainParams, quad: QuadratureSpec | None = None
) -> tuple[float, float, float]:
    """Closed-form middle-site balance of the global generator.

    Returns (rhs, q_left, q_right) with

        rhs = -g' <J_12 - J_23> + q_left + q_right,
        g'  = g - (sqrt2 lam^2 / 4)(S(eps_1) - S(eps_3)),
        q_a = (sqrt2 pi lam^2 / 16)(J(eps_1) - J(eps_3)) <Q_12 + Q_23>
              - (pi lam^2 / 4) sum_{i=1,3} J(eps_i)(<n_2> - n_a(eps_i)),

    where S is the Lamb shift used by ``build_global``. A mode with
    non-positive energy is dropped from every sum.
    """
    quad = quad or QuadratureSpec()
    eps = normal_modes(params).epsilon
    lam2 = params.lam**2
    active = [i for i in (0, 2) if eps[i] > 0]
    jv = {i: float(spectral_density(eps[i], params.omega_c)) for i in active}
    shift = {i: 0.0 for i in (0, 2)}
    if lam2 > 0:
        for i in active:
            shift[i] = 2.0 * bath_lamb_shift(eps[i], params.omega_c, quad)
    g_eff = params.g - (SQRT2 * lam2 / 4.0) * (shift[0] - shift[2])
    j12 = excitation_current(state, 1, 2)
    j23 = excitation_current(state, 2, 3)
    qsum = bond_coherence(state, 1, 2) + bond_coherence(state, 2, 3)
    n2 = occupation(state, 2)
    b = (SQRT2 * math.pi * lam2 / 16.0) * (jv.get(0, 0.0) - jv.get(2, 0.0))
    qs = []
    for temp in params.temperatures:
        q = b * qsum
        for i in active:
            nbar = float(mean_photon(eps[i], temp))
            q -= (math.pi * lam2 / 4.0) * jv[i] * (n2 - nbar)
        qs.append(q)
    rhs = -g_eff * (j12 - j23) + qs[0] + qs[1]
    return rhs, qs[0], qs[1]


def energy_rhs_tcg(
    state: CovarianceState,
    params: ChainParams,
    delta_t: float,
    quad: QuadratureSpec | None = None,
    coeffs: GeneratorCoefficients | None = None,
) -> tuple[float, float, float, float]:
    """Middle-site balance of the coarse-grained generator.

    Returns (rhs, q_left, q_right, a_coeff) with
    rhs = a_coeff <J_12 - J_23> + q_left + q_right. ``coeffs`` may pass a
    prebuilt ``build_tcg(params, delta_t)`` result.
    """
    if coeffs is None:
        coeffs = build_tcg(params, delta_t, quad)
    bal = energy_balance(state, coeffs)
    return bal.rhs, bal.q_left, bal.q_right, bal.a_coeff


@dataclass(frozen=True)
class EnergyTransportReport:
    """One row of the energy-transport table."""

    approach: str
    delta_t: float | None
    t: float
    j12: float
    j23: float
    q_left: float
    q_right: float
    n2_rate: float
    residual: float

    CSV_COLUMNS = (
        "approach", "delta_t", "t", "j12", "j23", "q_left", "q_right", "n2_rate", "residual",
    )

    def csv_row(self) -> list[str]:
        return [self.approach] + [_fmt(getattr(self, c)) for c in self.CSV_COLUMNS[1:]]


def write_reports_csv(path, reports: list[EnergyTransportReport]) -> None:
    """Write reports with the column order of ``EnergyTransportReport.CSV_COLUMNS``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EnergyTransportReport.CSV_COLUMNS)
        for r in reports:
            writer.writerow(r.csv_row())


def _central_difference(values: NDArray, times: NDArray) -> NDArray:
    """Second-order derivative estimates at the interior sample times."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    return (
        -h1 / (h0 * (h0 + h1)) * v[:-2]
        + (h1 - h0) / (h0 * h1) * v[1:-1]
        + h0 / (h1 * (h0 + h1)) * v[2:]
    )


def _rhs_function(approach, params, quad, delta_t, coeffs):
    if approach in ("exact", "local"):
        def rhs(s):
            return energy_rhs_exact_or_local(s, params), 0.0, 0.0
    elif approach == "global":
        # the closed form needs two principal values; evaluate them once
        glb = coeffs if coeffs is not None else build_global(params, quad)

        def rhs(s):
            bal = energy_balance(s, glb)
            return bal.rhs, bal.q_left, bal.q_right
    elif approach == "tcg":
        if coeffs is None:
            if delta_t is None:
                raise ValueError("the tcg approach needs delta_t")
            coeffs = build_tcg(params, delta_t, quad)

        def rhs(s):
            bal = energy_balance(s, coeffs)
            return bal.rhs, bal.q_left, bal.q_right
    else:
        raise ValueError(f"unknown approach {approach!r}")
    return rhs


def energy_reports(
    states: list[CovarianceState],
    approach: str,
    params: ChainParams,
    quad: QuadratureSpec | None = None,
    delta_t: float | None = None,
    coeffs: GeneratorCoefficients | None = None,
) -> list[EnergyTransportReport]:
    """Reports at the interior sample times, with n2_rate from central differences.

    The residual column is |n2_rate - rhs| for the approach's continuity
    equation. ``coeffs`` (global or tcg) avoids rebuilding the generator; for
    the global approach the per-bath split of ``energy_balance`` is used,
    which coincides with ``energy_rhs_global``.
    """
    quad = quad or QuadratureSpec()
    if len(states) < 3:
        raise ValueError("central differences need at least three samples")
    times = np.array([s.t for s in states])
    if np.any(np.diff(times) <= 0):
        raise ValueError("sample times must be strictly increasing")
    n2 = np.array([occupation(s, 2) for s in states])
    rates = _central_difference(n2, times)
    rhs_fn = _rhs_function(approach, params, quad, delta_t, coeffs)
    label_dt = delta_t if approach == "tcg" else None
    if approach == "tcg" and label_dt is None and coeffs is not None:
        label_dt = coeffs.delta_t
    out = []
    for s, rate in zip(states[1:-1], rates):
        rhs, ql, qr = rhs_fn(s)
        out.append(
            EnergyTransportReport(
                approach=approach,
                delta_t=label_dt,
                t=s.t,
                j12=excitation_current(s, 1, 2),
                j23=excitation_current(s, 2, 3),
                q_left=ql,
                q_right=qr,
                n2_rate=float(rate),
                residual=abs(float(rate) - rhs),
            )
        )
    return out


def energy_continuity_residual(
    states: list[CovarianceState],
    approach: str,
    params: ChainParams,
    quad: QuadratureSpec | None = None,
    delta_t: float | None = None,
    coeffs: GeneratorCoefficients | None = None,
    relaxation_rate: float | None = None,
) -> float:
    """Largest |finite-difference d<n_2>/dt - RHS| over the interior samples.

    If ``relaxation_rate`` (|max Re eig| of the drift) is given, samples must
    be at least five per relaxation time.
    """
    if relaxation_rate is not None and len(states) > 1:
        step = max(np.diff([s.t for s in states]))
        if step * relaxation_rate > 0.2:
            raise ValueError(
                f"trajectory too sparse: step {step:.3g} exceeds 1/(5 * {relaxation_rate:.3g})"
            )
    reports = energy_reports(states, approach, params, quad, delta_t, coeffs)
    return max(r.residual for r in reports)


# ---------------------------------------------------------------- probability on the line


def _quadrature_map(omega0: float) -> NDArray[np.complex128]:
    """S with xi = S z, z = (x_1, x_2, x_3, p_1, p_2, p_3)."""
    a = math.sqrt(omega0 / 2.0)
    b = 1.0 / math.sqrt(2.0 * omega0)
    eye = np.eye(3)
    return np.block([[a * eye, 1j * b * eye], [a * eye, -1j * b * eye]])


def quadrature_covariance(
    state: CovarianceState, omega0: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Symmetrized covariance V and mean of (x_1, x_2, x_3, p_1, p_2, p_3).

    With a_i = sqrt(omega0/2) x_i + i p_i / sqrt(2 omega0), C = 2 S V S^dag.
    """
    state = state.to_site_basis()
    s_inv = np.linalg.inv(_quadrature_map(omega0))
    v = 0.5 * s_inv @ state.c @ s_inv.conj().T
    mean = s_inv @ state.d
    v = np.real(0.5 * (v + v.conj().T))
    return v, np.real(mean)


def drift_in_quadratures(
    coeffs: GeneratorCoefficients, omega0: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Real drift A and diffusion D with dV/dt = A V + V A^T + D for site-basis coeffs."""
    if coeffs.basis != "site":
        raise ValueError("probability currents need site-basis coefficients; use to_site_basis")
    s = _quadrature_map(omega0)
    s_inv = np.linalg.inv(s)
    dd = build_drift_diffusion(coeffs)
    a = s_inv @ dd.m @ s
    d = 0.5 * s_inv @ dd.n @ s_inv.conj().T
    return np.real(a), np.real(0.5 * (d + d.conj().T))


@dataclass(frozen=True)
class SpatialField:
    """Density and current fields on a position grid.

    Fields left as ``None`` were not requested (``probability_density``
    fills only the density).
    """

    grid: NDArray[np.float64]
    density: NDArray[np.float64]
    j_unitary: NDArray[np.float64] | None = None
    j_dissipative: NDArray[np.float64] | None = None
    q_term: NDArray[np.float64] | None = None
    p_term: NDArray[np.float64] | None = None
    t: float = 0.0

    CSV_COLUMNS = ("x", "density", "j_unitary", "j_dissipative", "q_term", "p_term")

    def total_flux(self) -> NDArray[np.float64]:
        """j_unitary + j_dissipative + q_term + d p_term / dx (second-order differences)."""
        dp = np.gradient(self.p_term, self.grid, edge_order=2)
        return self.j_unitary + self.j_dissipative + self.q_term + dp

    def to_csv(self, path) -> None:
        cols = [self.grid, self.density, self.j_unitary, self.j_dissipative, self.q_term, self.p_term]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_COLUMNS)
            for i in range(len(self.grid)):
                writer.writerow([_fmt(None if c is None else c[i]) for c in cols])


def _marginals(v, mean, grid):
    """pdf_l(x) for the three positions, shape (3, len(grid))."""
    var = np.diag(v)[:3]
    mu = mean[:3]
    x = np.asarray(grid, dtype=float)
    return np.exp(-0.5 * (x[None, :] - mu[:, None]) ** 2 / var[:, None]) / np.sqrt(
        2 * math.pi * var[:, None]
    )


def default_grid(states: list[CovarianceState], omega0: float, points: int = 1024) -> NDArray[np.float64]:
    """Uniform grid covering every position marginal to 8 standard deviations."""
    lo, hi = math.inf, -math.inf
    for s in states:
        v, mean = quadrature_covariance(s, omega0)
        sd = np.sqrt(np.diag(v)[:3])
        lo = min(lo, float(np.min(mean[:3] - 8 * sd)))
        hi = max(hi, float(np.max(mean[:3] + 8 * sd)))
    return np.linspace(lo, hi, points)


def _check_coverage(v, mean, grid):
    sd = np.sqrt(np.diag(v)[:3])
    if np.min(mean[:3] - 8 * sd) < grid[0] or np.max(mean[:3] + 8 * sd) > grid[-1]:
        warnings.warn("grid does not cover 8 standard deviations of every marginal", RuntimeWarning,
                      stacklevel=3)


def probability_density(state: CovarianceState, grid, omega0: float) -> SpatialField:
    """rho(x) = (1/3) sum_l N(x; <x_l>, Var x_l)."""
    grid = np.asarray(grid, dtype=float)
    v, mean = quadrature_covariance(state, omega0)
    _check_coverage(v, mean, grid)
    pdf = _marginals(v, mean, grid)
    return SpatialField(grid=grid, density=pdf.mean(axis=0), t=state.t)


def conditional_moment(
    state: CovarianceState, omega0: float, k: int, site: int, grid
) -> NDArray[np.float64]:
    """<(1/2){z_k, delta(x - x_site)}> = pdf_site(x) E[z_k | x_site = x].

    ``k`` indexes z = (x_1, x_2, x_3, p_1, p_2, p_3) from 0; ``site`` is 1..3.
    """
    v, mean = quadrature_covariance(state, omega0)
    l = _site(site)
    x = np.asarray(grid, dtype=float)
    pdf = _marginals(v, mean, x)[l]
    cond = mean[k] + v[k, l] / v[l, l] * (x - mean[l])
    return pdf * cond


def probability_currents(
    state: CovarianceState,
    coeffs: GeneratorCoefficients,
    grid,
    params: ChainParams,
) -> SpatialField:
    """All current fields of the probability continuity equation.

    For site l the marginal current is
    pdf_l sum_m A_lm E[z_m | x_l] - (1/2) D_ll d pdf_l / dx, with A, D the
    quadrature drift and diffusion. Averaging over l gives
    j_unitary (momentum terms of the bare chain Hamiltonian), j_dissipative
    (remaining momentum terms), q_term (position terms) and
    p_term = -(1/6) sum_l D_ll pdf_l.
    """
    grid = np.asarray(grid, dtype=float)
    w0 = params.omega0
    v, mean = quadrature_covariance(state, w0)
    _check_coverage(v, mean, grid)
    a_full, d = drift_in_quadratures(coeffs, w0)
    bare = replace_hamiltonian_only(coeffs)
    a_bare, _ = drift_in_quadratures(bare, w0)
    pdf = _marginals(v, mean, grid)
    fields_ = {"unitary": np.zeros_like(grid), "dissipative": np.zeros_like(grid),
               "q": np.zeros_like(grid)}
    for l in range(3):
        for m in range(6):
            cond = pdf[l] * (mean[m] + v[m, l] / v[l, l] * (grid - mean[l]))
            if m < 3:
                fields_["q"] += a_full[l, m] * cond
            else:
                fields_["unitary"] += a_bare[l, m] * cond
                fields_["dissipative"] += (a_full[l, m] - a_bare[l, m]) * cond
    p_term = -np.einsum("l,lx->x", np.diag(d)[:3], pdf) / 6.0
    return SpatialField(
        grid=grid,
        density=pdf.mean(axis=0),
        j_unitary=fields_["unitary"] / 3.0,
        j_dissipative=fields_["dissipative"] / 3.0,
        q_term=fields_["q"] / 3.0,
        p_term=p_term,
        t=state.t,
    )


def replace_hamiltonian_only(coeffs: GeneratorCoefficients) -> GeneratorCoefficients:
    """The closed-chain part of ``coeffs``: h_system alone, all rates zero."""
    zero = np.zeros((3, 3), dtype=complex)
    return GeneratorCoefficients(
        label=coeffs.label,
        basis=coeffs.basis,
        h_eff=np.asarray(coeffs.h_system, dtype=complex),
        gamma_plus=zero,
        gamma_minus=zero,
        h_system=coeffs.h_system,
    )


def _field_divergence(fld: SpatialField, h: float) -> NDArray[np.float64]:
    """Central-difference d/dx of the total flux at interior grid points."""
    flux = fld.j_unitary + fld.j_dissipative + fld.q_term
    p = fld.p_term
    d_flux = (flux[2:] - flux[:-2]) / (2 * h)
    d2_p = (p[2:] - 2 * p[1:-1] + p[:-2]) / (h * h)
    return d_flux + d2_p


def probability_continuity_residual(
    states: list[CovarianceState],
    coeffs: GeneratorCoefficients,
    grid,
    params: ChainParams,
) -> float:
    """Max |d rho/dt + d/dx(j_U + j_D + Q + dP/dx)| over interior grid and time points.

    Time derivatives are central differences between neighbouring samples
    (uniform spacing required), space derivatives central differences on the
    uniform ``grid``; the residual is second order in both steps.
    """
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    times = np.array([s.t for s in states])
    if len(states) < 3:
        raise ValueError("need at least three time samples")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("time samples must be uniformly spaced")
    site = to_site_basis(coeffs)
    dens = [probability_density(s, grid, params.omega0).density for s in states]
    worst = 0.0
    for n in range(1, len(states) - 1):
        drho = (dens[n + 1] - dens[n - 1]) / (2 * dt[0])
        fld = probability_currents(states[n], site, grid, params)
        res = drho[1:-1] + _field_divergence(fld, h[0])
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def convergence_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """Observed order p from residuals at steps h and h / ratio."""
    if coarse <= 0 or fine <= 0:
        return math.inf
    return math.log(coarse / fine) / math.log(ratio)


__all__ = [
    "EnergyBalance",
    "EnergyTransportReport",
    "SpatialField",
    "bond_coherence",
    "conditional_moment",
    "convergence_order",
    "default_grid",
    "drift_in_quadratures",
    "energy_balance",
    "energy_continuity_residual",
    "energy_reports",
    "energy_rhs_exact_or_local",
    "energy_rhs_global",
    "energy_rhs_tcg",
    "excitation_current",
    "middle_site_rate",
    "occupation",
    "probability_continuity_residual",
    "probability_currents",
    "probability_density",
    "quadrature_covariance",
    "write_reports_csv",
]
