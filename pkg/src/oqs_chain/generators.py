"""GKSL coefficient sets for the local, global and time-coarse-grained equations.

Every generator is stored in one normal form. With mode operators b_i of the
declared basis (site operators a_i or normal modes c_i = sum_k T_ik a_k),

    L[rho] = -i [H, rho]
             + sum_ij gamma_plus_ij  (b_i rho b_j^dag - 1/2 {b_j^dag b_i, rho})
             + sum_ij gamma_minus_ij (b_i^dag rho b_j - 1/2 {b_j b_i^dag, rho}),

with H = sum_ij h_eff_ij b_i^dag b_j. All coupling prefactors are folded into
h_eff and the rate matrices, so downstream code never branches on the label.
The contribution of each bath is also kept separately (``bath_terms``) so
that transport code can attribute sink and source terms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .model import ChainParams, bath_weight, bogolubov_matrix, normal_modes, spectral_density
from .quadrature import QuadratureSpec, panel_integrate, principal_value, refine_breaks

# Global-equation mode weights: sum over baths of T_{i,site}^2 / 2.
MODE_WEIGHTS = np.array([0.25, 0.5, 0.25])

# The coarse-grained rates (dt / 8 pi) int f sinc sinc tend to f(eps) / 4 for
# large dt; multiplying by 2 pi lambda^2 reproduces the global rates exactly.
TCG_CALIBRATION = 2.0 * math.pi

# Upper limit of the Lamb-shift integral in units of omega_c.
PV_TAIL = 40.0

BATH_SITES = {"left": 0, "right": 2}


@dataclass(frozen=True)
class BathTerm:
    """Contribution of one bath to a generator (same basis as its parent)."""

    name: str
    h_shift: NDArray[np.complex128]
    gamma_plus: NDArray[np.complex128]
    gamma_minus: NDArray[np.complex128]


@dataclass(frozen=True)
class GeneratorCoefficients:
    """Effective Hamiltonian and rate matrices of a quadratic GKSL generator."""

    label: str
    basis: str
    h_eff: NDArray[np.complex128]
    gamma_plus: NDArray[np.complex128]
    gamma_minus: NDArray[np.complex128]
    h_system: NDArray[np.complex128]
    bath_terms: tuple[BathTerm, ...] = field(default=())
    delta_t: float | None = None
    calibration: float | None = None

    def conjugated(self, u: NDArray, basis: str) -> "GeneratorCoefficients":
        """Return the coefficients for operators b' with b = u b' (u real orthogonal)."""

        def conj(x):
            return u.T @ x @ u

        terms = tuple(
            BathTerm(t.name, conj(t.h_shift), conj(t.gamma_plus), conj(t.gamma_minus))
            for t in self.bath_terms
        )
        return replace(
            self,
            basis=basis,
            h_eff=conj(self.h_eff),
            gamma_plus=conj(self.gamma_plus),
            gamma_minus=conj(self.gamma_minus),
            h_system=conj(self.h_system),
            bath_terms=terms,
        )

    def to_dict(self) -> dict:
        def pairs(x):
            return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(x)]

        return {
            "label": self.label,
            "basis": self.basis,
            "delta_t": self.delta_t,
            "calibration": self.calibration,
            "h_eff": pairs(self.h_eff),
            "gamma_plus": pairs(self.gamma_plus),
            "gamma_minus": pairs(self.gamma_minus),
            "h_system": pairs(self.h_system),
            "bath_terms": [
                {
                    "name": t.name,
                    "h_shift": pairs(t.h_shift),
                    "gamma_plus": pairs(t.gamma_plus),
                    "gamma_minus": pairs(t.gamma_minus),
                }
                for t in self.bath_terms
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_complex(x) -> NDArray[np.complex128]:
    return np.asarray(x, dtype=complex)


def _from_pairs(rows) -> NDArray[np.complex128]:
    arr = np.asarray(rows, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def coefficients_from_dict(data: dict) -> GeneratorCoefficients:
    """Inverse of ``GeneratorCoefficients.to_dict``.

    ``h_system`` and ``bath_terms`` are optional; without them the per-bath
    split is empty and ``h_system`` is set to ``h_eff``.
    """
    h = _from_pairs(data["h_eff"])
    terms = tuple(
        BathTerm(
            t["name"],
            _from_pairs(t["h_shift"]),
            _from_pairs(t["gamma_plus"]),
            _from_pairs(t["gamma_minus"]),
        )
        for t in data.get("bath_terms", ())
    )
    return GeneratorCoefficients(
        label=data["label"],
        basis=data["basis"],
        h_eff=h,
        gamma_plus=_from_pairs(data["gamma_plus"]),
        gamma_minus=_from_pairs(data["gamma_minus"]),
        h_system=_from_pairs(data["h_system"]) if "h_system" in data else h,
        bath_terms=terms,
        delta_t=data.get("delta_t"),
        calibration=data.get("calibration"),
    )


def _assemble(label, basis, h_system, terms, delta_t=None, calibration=None):
    h_system = _as_complex(h_system)
    return GeneratorCoefficients(
        label=label,
        basis=basis,
        h_eff=h_system + sum(t.h_shift for t in terms),
        gamma_plus=sum(t.gamma_plus for t in terms),
        gamma_minus=sum(t.gamma_minus for t in terms),
        h_system=h_system,
        bath_terms=tuple(terms),
        delta_t=delta_t,
        calibration=calibration,
    )


# ---------------------------------------------------------------- Lamb shift


def bath_lamb_shift(
    epsilon: float,
    omega_c: float,
    quad: QuadratureSpec,
    lower: float = 0.0,
    upper: float | None = None,
) -> float:
    """Principal value of int J(w) / (epsilon - w) dw for a single bath.

    The default range is [0, 40 omega_c]; the neglected tail is below
    exp(-40) relative to the integrand scale.
    """
    if upper is None:
        upper = PV_TAIL * omega_c
    return principal_value(
        lambda w: float(spectral_density(w, omega_c)), float(epsilon), lower, upper, quad
    )


def lamb_shift_pv(epsilon: float, params: ChainParams, quad: QuadratureSpec) -> float:
    """S(epsilon) = sum over both baths of the single-bath principal value."""
    return 2.0 * bath_lamb_shift(epsilon, params.omega_c, quad)


# ---------------------------------------------------------------- local / global


def build_local(params: ChainParams, quad: QuadratureSpec | None = None) -> GeneratorCoefficients:
    """Local generator: each bath acts on its end site at frequency omega0."""
    quad = quad or QuadratureSpec()
    w0 = params.omega0
    lam2 = params.lam**2
    shift = bath_lamb_shift(w0, params.omega_c, quad) if lam2 > 0 else 0.0
    terms = []
    for (name, site), temp in zip(BATH_SITES.items(), params.temperatures):
        h = np.zeros((3, 3), dtype=complex)
        gp = np.zeros((3, 3), dtype=complex)
        gm = np.zeros((3, 3), dtype=complex)
        h[site, site] = lam2 * shift
        gp[site, site] = 2 * math.pi * lam2 * float(bath_weight(w0, temp, params.omega_c, True))
        gm[site, site] = 2 * math.pi * lam2 * float(bath_weight(w0, temp, params.omega_c, False))
        terms.append(BathTerm(name, h, gp, gm))
    return _assemble("local", "site", params.site_hamiltonian(), terms)


def build_global(params: ChainParams, quad: QuadratureSpec | None = None) -> GeneratorCoefficients:
    """Global generator in the normal-mode basis.

    Mode i decays with weight (1/4, 1/2, 1/4)_i at its own energy. A mode with
    non-positive energy (only mode 1, when g >= omega0 / sqrt2) gets neither
    rates nor a Lamb shift.
    """
    quad = quad or QuadratureSpec()
    eps = normal_modes(params).epsilon
    lam2 = params.lam**2
    active = eps > 0
    shifts = np.zeros(3)
    if lam2 > 0:
        for i in np.flatnonzero(active):
            shifts[i] = bath_lamb_shift(eps[i], params.omega_c, quad)
    terms = []
    eps_safe = np.where(active, eps, 1.0)
    for name, temp in zip(BATH_SITES, params.temperatures):
        gp = 2 * math.pi * lam2 * MODE_WEIGHTS * bath_weight(eps_safe, temp, params.omega_c, True)
        gm = 2 * math.pi * lam2 * MODE_WEIGHTS * bath_weight(eps_safe, temp, params.omega_c, False)
        gp = np.where(active, gp, 0.0)
        gm = np.where(active, gm, 0.0)
        terms.append(BathTerm(name, _as_complex(np.diag(lam2 * shifts)), _as_complex(np.diag(gp)),
                              _as_complex(np.diag(gm))))
    return _assemble("global", "normal", np.diag(eps), terms)


# ---------------------------------------------------------------- coarse-grained


def _sinc(v):
    return np.sinc(v / np.pi)


def _sinc_dd(v):
    """Second derivative of sin(v)/v."""
    v = np.asarray(v, dtype=float)
    small = np.abs(v) < 0.1
    vs = np.where(small, 1.0, v)
    closed = -np.sin(vs) / vs - 2 * np.cos(vs) / vs**2 + 2 * np.sin(vs) / vs**3
    v2 = v * v
    series = -1.0 / 3.0 + v2 / 10.0 - v2 * v2 / 168.0 + v2**3 / 6480.0
    return np.where(small, series, closed)


def shift_kernel(x, y, half):
    """F(x, y) = (2h / x)[sinc((x-y)h) + sinc((x+y)h) - 2 cos(xh) sinc(yh)], h = half.

    F(0, y) = 0; for |x h| < 1e-3 the leading term 2 h^3 (sinc'' + sinc)(yh) x
    of the Taylor series replaces the cancelling closed form.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    small = np.abs(x * half) < 1e-3
    xs = np.where(small, 1.0, x)
    closed = (2 * half / xs) * (
        _sinc((xs - y) * half) + _sinc((xs + y) * half) - 2 * np.cos(xs * half) * _sinc(y * half)
    )
    series = 2 * half**3 * (_sinc_dd(y * half) + _sinc(y * half)) * x
    return np.where(small, series, closed)


_PAIRS = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]


def _tcg_breaks(eps, omega_c, delta_t, lower, upper):
    spacing = 2 * math.pi / delta_t
    pts = [np.array([lower, upper, 0.0]), eps]
    for e in eps:
        n_lo = math.ceil((lower - e) / spacing)
        n_hi = math.floor((upper - e) / spacing)
        if n_hi - n_lo > 50_000_000:
            raise ValueError("delta_t too large for the sinc-zero panel grid")
        pts.append(e + spacing * np.arange(n_lo, n_hi + 1))
    breaks = np.concatenate(pts)
    breaks = breaks[(breaks >= lower) & (breaks <= upper)]
    return refine_breaks(breaks, min((upper - lower) / 64, spacing / 2))


def tcg_integrals(
    params: ChainParams,
    delta_t: float,
    quad: QuadratureSpec,
    lower: float | None = None,
    upper: float | None = None,
):
    """Real kernel integrals behind the coarse-grained coefficients.

    Returns a dict of symmetric 3x3 real matrices:
    ``rate[bath][sign]`` = int w_bath^sign(w) sinc(x_i h) sinc(x_j h) dw,
    ``shift[bath]`` = int J(w) n_bath(w) Phi_ij(w) dw, and
    ``shift_j`` = int J(w) Phi_ij(w) dw, with x_i = eps_i - w, h = dt/2 and
    Phi_ij = F(x_i, x_j) + F(x_j, x_i). The integration range defaults to
    [0, omega_c]: with an excitation-conserving coupling the bath correlation
    functions have no spectral weight at negative frequency. Passing
    ``lower=-omega_c`` evaluates the continued J and n there instead, which
    makes the generator amplifying for small dt.
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    eps = normal_modes(params).epsilon
    lower = 0.0 if lower is None else lower
    upper = params.omega_c if upper is None else upper
    half = 0.5 * delta_t
    temps = params.temperatures
    wc = params.omega_c

    def integrand(w):
        x = eps[:, None] - w[None, :]
        s = _sinc(x * half)
        weights = []
        for temp in temps:
            weights.append(bath_weight(w, temp, wc, False))
        jw = spectral_density(w, wc)
        rows = []
        for i, j in _PAIRS:
            ss = s[i] * s[j]
            phi = shift_kernel(x[i], x[j], half) + shift_kernel(x[j], x[i], half)
            for wm in weights:
                rows.append(wm * ss)  # absorption
                rows.append((wm + jw) * ss)  # emission
                rows.append(wm * phi)
            rows.append(jw * phi)
        return np.array(rows)

    breaks = _tcg_breaks(eps, wc, delta_t, lower, upper)
    vals = panel_integrate(integrand, breaks, quad)
    per_pair = 3 * len(temps) + 1
    names = list(BATH_SITES)
    rate = {n: {"+": np.zeros((3, 3)), "-": np.zeros((3, 3))} for n in names}
    shift = {n: np.zeros((3, 3)) for n in names}
    shift_j = np.zeros((3, 3))
    for p, (i, j) in enumerate(_PAIRS):
        block = vals[p * per_pair:(p + 1) * per_pair]
        for b, n in enumerate(names):
            for target, value in (
                (rate[n]["-"], block[3 * b]),
                (rate[n]["+"], block[3 * b + 1]),
                (shift[n], block[3 * b + 2]),
            ):
                target[i, j] = target[j, i] = value
        shift_j[i, j] = shift_j[j, i] = block[-1]
    return {"rate": rate, "shift": shift, "shift_j": shift_j, "epsilon": eps}


def _phase(eps, delta_t):
    """Matrix exp(i (eps_i - eps_j) dt / 2)."""
    return np.exp(0.5j * delta_t * (eps[:, None] - eps[None, :]))


def _coupling_weights():
    """Per bath, the matrix 4 T_i,site T_j,site (the f_ij / w_bath pattern)."""
    t = bogolubov_matrix()
    return {n: 4.0 * np.outer(t[:, s], t[:, s]) for n, s in BATH_SITES.items()}


def f_matrix(omega: float, params: ChainParams, sign: str) -> NDArray[np.float64]:
    """The 3x3 weight f^sign_ij(w) entering the coarse-grained rates.

    Diagonal: tau(w)(1 + delta_i2); |i-j| = 2: tau(w); |i-j| = 1:
    sqrt2 (J n_L - J n_R), the same for both signs.
    """
    emission = sign == "+"
    out = np.zeros((3, 3))
    for name, weights in _coupling_weights().items():
        temp = params.temp_left if name == "left" else params.temp_right
        out += weights * float(bath_weight(omega, temp, params.omega_c, emission))
    return out


def _tcg_parts(params, delta_t, quad, lower=None, upper=None):
    data = tcg_integrals(params, delta_t, quad, lower, upper)
    eps = data["epsilon"]
    phase = _phase(eps, delta_t)
    weights = _coupling_weights()
    parts = {}
    for name in BATH_SITES:
        w = weights[name]
        # normalisation (dt / 8 pi) int f sinc sinc, with f = w * bath weight
        gp = (delta_t / (8 * math.pi)) * phase.conj() * w * data["rate"][name]["+"]
        gm = (delta_t / (8 * math.pi)) * phase * w * data["rate"][name]["-"]
        s_minus = -(1.0 / (8 * delta_t)) * phase.conj() * w * data["shift"][name]
        parts[name] = (gp, gm, s_minus)
    shift_total = (1.0 / (8 * delta_t)) * phase * sum(weights.values()) * data["shift_j"]
    return parts, shift_total, eps, data


def tcg_rates(
    params: ChainParams, delta_t: float, quad: QuadratureSpec | None = None
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Coarse-grained rate matrices (dt / 8 pi) int f sinc sinc, without lambda^2.

    gamma_plus carries the phase exp(i(eps_j - eps_i) dt / 2) and multiplies
    c_i rho c_j^dag; gamma_minus multiplies c_i^dag rho c_j and therefore
    carries the conjugate phase.
    """
    parts, _, _, _ = _tcg_parts(params, delta_t, quad or QuadratureSpec())
    gp = sum(p[0] for p in parts.values())
    gm = sum(p[1] for p in parts.values())
    return gp, gm


def tcg_lamb_shift(
    params: ChainParams, delta_t: float, quad: QuadratureSpec | None = None
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Lamb-shift coefficient matrices (s_plus, s_minus), without lambda^2.

    H_LS = sum_ij (s_minus_ij c_i c_j^dag + s_plus_ij c_i^dag c_j); the
    normal-ordered single-particle matrix is s_plus + s_minus^T.
    """
    parts, shift_total, _, _ = _tcg_parts(params, delta_t, quad or QuadratureSpec())
    s_minus = sum(p[2] for p in parts.values())
    s_plus = shift_total - s_minus.T
    return s_plus, s_minus


def build_tcg(
    params: ChainParams,
    delta_t: float,
    quad: QuadratureSpec | None = None,
    lower: float | None = None,
    upper: float | None = None,
) -> GeneratorCoefficients:
    """Time-coarse-grained generator for averaging window ``delta_t``.

    Rates are lambda^2 * TCG_CALIBRATION times the ``tcg_rates`` matrices;
    the Lamb shift is lambda^2 (s_plus + s_minus^T). ``lower``/``upper``
    override the frequency range of the bath integrals.
    """
    quad = quad or QuadratureSpec()
    lam2 = params.lam**2
    eps = normal_modes(params).epsilon
    if lam2 == 0:
        zero = np.zeros((3, 3), dtype=complex)
        terms = [BathTerm(n, zero, zero, zero) for n in BATH_SITES]
        return _assemble("tcg", "normal", np.diag(eps), terms, delta_t, TCG_CALIBRATION)
    parts, _, _, data = _tcg_parts(params, delta_t, quad, lower, upper)
    phase = _phase(eps, delta_t)
    weights = _coupling_weights()
    terms = []
    for name, (gp, gm, _) in parts.items():
        h_shift = (lam2 / (8 * delta_t)) * phase * weights[name] * data["shift_j"]
        terms.append(
            BathTerm(name, h_shift, lam2 * TCG_CALIBRATION * gp, lam2 * TCG_CALIBRATION * gm)
        )
    return _assemble("tcg", "normal", np.diag(eps), terms, delta_t, TCG_CALIBRATION)


# ---------------------------------------------------------------- basis changes


def to_site_basis(coeffs: GeneratorCoefficients) -> GeneratorCoefficients:
    """Express normal-mode coefficients in terms of the site operators a = T^T c."""
    if coeffs.basis == "site":
        return coeffs
    return coeffs.conjugated(bogolubov_matrix(), "site")


def to_normal_basis(coeffs: GeneratorCoefficients) -> GeneratorCoefficients:
    """Inverse of ``to_site_basis``."""
    if coeffs.basis == "normal":
        return coeffs
    return coeffs.conjugated(bogolubov_matrix().T, "normal")


# ---------------------------------------------------------------- checks


def min_rate_eigenvalue(coeffs: GeneratorCoefficients) -> float:
    """Smallest eigenvalue over the Hermitian parts of both rate matrices."""
    vals = []
    for g in (coeffs.gamma_plus, coeffs.gamma_minus):
        vals.append(np.linalg.eigvalsh(0.5 * (g + g.conj().T)).min())
    return float(min(vals))


def hermiticity_defect(coeffs: GeneratorCoefficients) -> float:
    """Largest |X - X^dag| entry over h_eff, gamma_plus and gamma_minus."""
    return float(
        max(np.max(np.abs(x - x.conj().T)) for x in (coeffs.h_eff, coeffs.gamma_plus, coeffs.gamma_minus))
    )
