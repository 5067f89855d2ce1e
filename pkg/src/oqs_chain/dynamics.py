"""Gaussian covariance dynamics, steady states and the discretized-bath reference.

States are stored through the 6x6 matrix

    C_ij = <xi_i xi_j^dag + xi_j^dag xi_i> - 2 <xi_i><xi_j^dag>,
    xi = (a_1, a_2, a_3, a_1^dag, a_2^dag, a_3^dag),

which has the block form [[C1, C2], [C2^dag, C1^T]] with
C1_ij = 2 <a_j^dag a_i> + delta_ij (centred) and C2_ij = <a_i a_j + a_j a_i> (centred).

For a generator in the normal form of ``generators`` the first moments obey
d<b>/dt = Mh <b> and the covariance blocks obey

    dC1/dt = Mh C1 + C1 Mh^dag + Nh,      dC2/dt = Mh C2 + C2 Mh^T,

with Mh = -i h_eff - (gamma_plus^T - gamma_minus) / 2 and
Nh = gamma_plus^T + gamma_minus. The full 6x6 drift is Mh (+) conj(Mh).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.linalg import block_diag, expm

from .generators import GeneratorCoefficients
from .model import ChainParams, bogolubov_matrix, mean_photon, spectral_density


class SteadyStateError(RuntimeError):
    """The stationary Lyapunov equation has no (consistent) solution."""


class IntegrationError(RuntimeError):
    """The ODE integrator failed."""


@dataclass(frozen=True)
class CovarianceState:
    """Gaussian state of the chain at time ``t``.

    ``basis`` names the mode operators the moments refer to: ``"site"``
    (a_i) or ``"normal"`` (c_i = sum_k T_ik a_k).
    """

    c: NDArray[np.complex128]
    d: NDArray[np.complex128]
    t: float = 0.0
    basis: str = "site"

    def __post_init__(self):
        if self.basis not in ("site", "normal"):
            raise ValueError(f"basis must be 'site' or 'normal', got {self.basis!r}")

    @classmethod
    def from_blocks(
        cls, c1, c2=None, alpha=None, t: float = 0.0, basis: str = "site"
    ) -> "CovarianceState":
        c1 = np.asarray(c1, dtype=complex)
        c2 = np.zeros((3, 3), dtype=complex) if c2 is None else np.asarray(c2, dtype=complex)
        alpha = np.zeros(3, dtype=complex) if alpha is None else np.asarray(alpha, dtype=complex)
        c = np.block([[c1, c2], [c2.conj().T, c1.T]])
        return cls(c=c, d=np.concatenate([alpha, alpha.conj()]), t=float(t), basis=basis)

    @classmethod
    def vacuum(cls, t: float = 0.0, basis: str = "site") -> "CovarianceState":
        return cls.from_blocks(np.eye(3), t=t, basis=basis)

    @property
    def c1(self) -> NDArray[np.complex128]:
        return self.c[:3, :3]

    @property
    def c2(self) -> NDArray[np.complex128]:
        return self.c[:3, 3:]

    @property
    def alpha(self) -> NDArray[np.complex128]:
        return self.d[:3]

    def second_moments(self) -> NDArray[np.complex128]:
        """P with P_ij = <a_j^dag a_i>, displacement included."""
        a = self.alpha
        return 0.5 * (self.c1 - np.eye(3)) + np.outer(a, a.conj())

    def transformed(self, u: NDArray, basis: str | None = None) -> "CovarianceState":
        """State for operators b' = u b (u real orthogonal), e.g. site -> normal with u = T."""
        u = np.asarray(u, dtype=float)
        return CovarianceState.from_blocks(
            u @ self.c1 @ u.T, u @ self.c2 @ u.T, u @ self.alpha, self.t,
            self.basis if basis is None else basis,
        )

    def to_site_basis(self) -> "CovarianceState":
        if self.basis == "site":
            return self
        return self.transformed(bogolubov_matrix().T, "site")

    def to_normal_basis(self) -> "CovarianceState":
        if self.basis == "normal":
            return self
        return self.transformed(bogolubov_matrix(), "normal")

    def check(self, tol: float = 1e-8) -> list[str]:
        """Return the violated state invariants (empty when valid)."""
        problems = []
        if np.max(np.abs(self.c - self.c.conj().T)) > max(tol, 1e-10):
            problems.append("c not Hermitian")
        if np.linalg.eigvalsh(0.5 * (self.c + self.c.conj().T)).min() < -tol:
            problems.append("c not positive semidefinite")
        if np.min(np.real(np.diag(self.c1))) < 1 - tol:
            problems.append("block-1 diagonal below 1")
        if np.max(np.abs(self.d[3:] - self.d[:3].conj())) > tol:
            problems.append("d not conjugate-symmetric")
        return problems

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "basis": self.basis,
            "c": [[[float(v.real), float(v.imag)] for v in row] for row in self.c],
            "d": [[float(v.real), float(v.imag)] for v in self.d],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CovarianceState":
        c = np.asarray(data["c"], dtype=float)
        d = np.asarray(data["d"], dtype=float)
        return cls(
            c=c[..., 0] + 1j * c[..., 1],
            d=d[:, 0] + 1j * d[:, 1],
            t=float(data["t"]),
            basis=data.get("basis", "site"),
        )


@dataclass(frozen=True)
class DriftDiffusion:
    """Drift M and diffusion N of dC/dt = M C + C M^dag + N, with their 3x3 blocks."""

    m: NDArray[np.complex128]
    n: NDArray[np.complex128]
    m_hat: NDArray[np.complex128]
    n_hat: NDArray[np.complex128]
    basis: str = "site"

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.m_hat).real))


def build_drift_diffusion(coeffs: GeneratorCoefficients) -> DriftDiffusion:
    """Assemble the drift and diffusion matrices of a coefficient set."""
    h = np.asarray(coeffs.h_eff, dtype=complex)
    gp = np.asarray(coeffs.gamma_plus, dtype=complex)
    gm = np.asarray(coeffs.gamma_minus, dtype=complex)
    m_hat = -1j * h - 0.5 * (gp.T - gm)
    n_hat = gp.T + gm
    m = block_diag(m_hat, m_hat.conj())
    n = block_diag(n_hat, n_hat.conj())
    if np.max(np.abs(n - n.conj().T)) > 1e-10:
        raise ValueError("diffusion matrix is not Hermitian; malformed coefficients")
    return DriftDiffusion(m=m, n=n, m_hat=m_hat, n_hat=n_hat, basis=coeffs.basis)


def _lyapunov_operator(m_hat):
    eye = np.eye(3)
    # row-major vec: vec(A X) = (A kron I) vec X, vec(X B) = (I kron B^T) vec X
    return np.kron(m_hat, eye) + np.kron(eye, m_hat.conj())


def steady_state(dd: DriftDiffusion, atol: float = 1e-12) -> CovarianceState:
    """Stationary state: solve Mh C1 + C1 Mh^dag = -Nh, with C2 = 0 and d = 0.

    If some mode is undamped (zero real part of the drift spectrum, as for the
    global generator with a non-positive lowest mode) the equation is
    singular; the undamped directions are then kept at vacuum by solving for
    the minimum-norm deviation from C1 = I. Inconsistent systems raise
    ``SteadyStateError``.
    """
    op = _lyapunov_operator(dd.m_hat)
    rhs = -dd.n_hat.reshape(-1)
    scale = max(1.0, float(np.max(np.abs(dd.m_hat))))
    if dd.spectral_abscissa < -1e-12 * scale:
        c1 = np.linalg.solve(op, rhs).reshape(3, 3)
    else:
        shifted = rhs - op @ np.eye(3).reshape(-1)
        x, *_ = np.linalg.lstsq(op, shifted, rcond=1e-12)
        residual = np.max(np.abs(op @ x - shifted))
        if residual > max(atol, 1e-10 * float(np.max(np.abs(rhs)) + 1.0)):
            raise SteadyStateError(
                f"no stationary covariance: drift has undamped modes driven by noise "
                f"(residual {residual:.3e})"
            )
        c1 = np.eye(3) + x.reshape(3, 3)
    c1 = 0.5 * (c1 + c1.conj().T)
    return CovarianceState.from_blocks(c1, basis=dd.basis)


def _pack(c1, c2, alpha):
    z = np.concatenate([c1.ravel(), c2.ravel(), alpha])
    return np.concatenate([z.real, z.imag])


def _unpack(y):
    z = y[:21] + 1j * y[21:]
    return z[:9].reshape(3, 3), z[9:18].reshape(3, 3), z[18:]


def _rhs_factory(dd: DriftDiffusion):
    m, n = dd.m_hat, dd.n_hat
    mh = m.conj().T

    def rhs(_t, y):
        c1, c2, a = _unpack(y)
        return _pack(m @ c1 + c1 @ mh + n, m @ c2 + c2 @ m.T, m @ a)

    return rhs


def _linear_generator(dd: DriftDiffusion):
    """21x21 complex matrix plus constant column for (vec C1, vec C2, alpha)."""
    m = dd.m_hat
    eye = np.eye(3)
    l1 = np.kron(m, eye) + np.kron(eye, m.conj())
    l2 = np.kron(m, eye) + np.kron(eye, m)
    a = np.zeros((22, 22), dtype=complex)
    a[:9, :9] = l1
    a[9:18, 9:18] = l2
    a[18:21, 18:21] = m
    a[:9, 21] = dd.n_hat.reshape(-1)
    return a


def evolve(
    state0: CovarianceState,
    dd: DriftDiffusion,
    t_end: float,
    tol: float = 1e-10,
    times=None,
    method: str = "rk",
) -> list[CovarianceState]:
    """Propagate a state to ``t_end``, returning states at the sample ``times``.

    ``method="rk"`` integrates the matrix ODE with the adaptive DOP853 pair
    (dense output at the sample times); ``method="expm"`` uses the exact
    propagator of the time-invariant linear system.
    """
    t0 = state0.t
    if state0.basis != dd.basis:
        raise ValueError(
            f"state is in the {state0.basis} basis but the generator in the {dd.basis} basis"
        )
    if t_end < t0:
        raise ValueError("t_end must not precede the initial time")
    times = np.array([t0, t_end] if times is None else times, dtype=float)
    if times.size and (times.min() < t0 - 1e-12 or times.max() > t_end + 1e-12):
        raise ValueError("sample times must lie in [state0.t, t_end]")
    if times.size == 0:
        return []
    c1, c2, a = state0.c1, state0.c2, state0.alpha
    if method == "expm":
        gen = _linear_generator(dd)
        z0 = np.concatenate([c1.reshape(-1), c2.reshape(-1), a, [1.0]])
        out = []
        steps = np.diff(times)
        uniform = steps.size > 0 and np.allclose(steps, steps[0], rtol=1e-12, atol=0.0)
        if uniform:
            first = expm(gen * (times[0] - t0)) @ z0
            prop = expm(gen * steps[0])
            z = first
            zs = [z]
            for _ in steps:
                z = prop @ z
                zs.append(z)
        else:
            zs = [expm(gen * (t - t0)) @ z0 for t in times]
        for t, z in zip(times, zs):
            out.append(_state_from_vector(z[:21], t, dd.basis))
        return out
    if method != "rk":
        raise ValueError(f"unknown method {method!r}")
    if t_end == t0:
        return [CovarianceState(c=state0.c, d=state0.d, t=float(t), basis=state0.basis)
                for t in times]
    sol = solve_ivp(
        _rhs_factory(dd),
        (t0, t_end),
        _pack(c1, c2, a),
        method="DOP853",
        t_eval=times,
        rtol=tol,
        atol=tol * 1e-2,
    )
    if not sol.success:
        raise IntegrationError(f"integration failed near t = {sol.t[-1]:.6g}: {sol.message}")
    return [
        _state_from_vector(_complex_vector(y), t, dd.basis) for t, y in zip(sol.t, sol.y.T)
    ]


def _complex_vector(y):
    return y[:21] + 1j * y[21:]


def _state_from_vector(z, t, basis):
    c1 = z[:9].reshape(3, 3)
    c2 = z[9:18].reshape(3, 3)
    c1 = 0.5 * (c1 + c1.conj().T)
    c2 = 0.5 * (c2 + c2.T)
    return CovarianceState.from_blocks(c1, c2, z[18:21], float(t), basis)


# ---------------------------------------------------------------- exact reference


@dataclass(frozen=True)
class BathDiscretization:
    """Uniform midpoint sampling of (0, omega_max] with gamma_k^2 = J(w_k) dw."""

    modes_per_bath: int
    frequencies: NDArray[np.float64]
    couplings: NDArray[np.float64]
    omega_max: float

    @property
    def spacing(self) -> float:
        return self.omega_max / self.modes_per_bath

    @property
    def recurrence_time(self) -> float:
        return 2 * math.pi / self.spacing


def discretize_bath(omega_c: float, modes_per_bath: int, omega_max: float | None = None) -> BathDiscretization:
    """Midpoint discretization of an Ohmic bath (default omega_max = 12 omega_c)."""
    if modes_per_bath < 1:
        raise ValueError("modes_per_bath must be positive")
    omega_max = 12.0 * omega_c if omega_max is None else float(omega_max)
    dw = omega_max / modes_per_bath
    w = dw * (np.arange(modes_per_bath) + 0.5)
    return BathDiscretization(
        modes_per_bath=modes_per_bath,
        frequencies=w,
        couplings=np.sqrt(spectral_density(w, omega_c) * dw),
        omega_max=omega_max,
    )


@dataclass
class ExactTrajectory:
    """System-block trajectory of the discretized-bath model."""

    states: list[CovarianceState]
    recurrence_time: float
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.warnings


def total_hamiltonian(params: ChainParams, disc: BathDiscretization) -> NDArray[np.float64]:
    """Single-particle matrix of H_S + H_E + lambda H' on (chain, left bath, right bath)."""
    k = disc.modes_per_bath
    size = 3 + 2 * k
    h = np.zeros((size, size))
    h[:3, :3] = params.site_hamiltonian()
    left = slice(3, 3 + k)
    right = slice(3 + k, 3 + 2 * k)
    h[left, left] = np.diag(disc.frequencies)
    h[right, right] = np.diag(disc.frequencies)
    h[0, left] = h[left, 0] = params.lam * disc.couplings
    h[2, right] = h[right, 2] = params.lam * disc.couplings
    return h


def exact_reference(
    params: ChainParams,
    disc: BathDiscretization,
    state0: CovarianceState,
    t_end: float,
    tol: float = 1e-12,
    times=None,
) -> ExactTrajectory:
    """Evolve chain + discretized baths exactly and return the chain block.

    The total Hamiltonian is number conserving and quadratic, so with
    U(t) = exp(-i H t) the second moments evolve as P(t) = U P(0) U^dag,
    the anomalous moments as U A(0) U^T and the amplitudes as U alpha.
    Baths start thermal and uncorrelated with the chain. ``tol`` bounds the
    accepted unitarity defect of the eigenbasis.
    """
    state0 = state0.to_site_basis()
    times = np.array([state0.t, t_end] if times is None else times, dtype=float)
    k = disc.modes_per_bath
    h = total_hamiltonian(params, disc)
    evals, vecs = np.linalg.eigh(h)
    defect = np.max(np.abs(vecs.T @ vecs - np.eye(len(evals))))
    if defect > max(tol, 1e-10):
        raise IntegrationError(f"eigenbasis not orthonormal (defect {defect:.2e})")
    occ = np.zeros(3 + 2 * k)
    for offset, temp in ((3, params.temp_left), (3 + k, params.temp_right)):
        if temp > 0:
            occ[offset:offset + k] = mean_photon(disc.frequencies, temp)
    p0_sys = 0.5 * (state0.c1 - np.eye(3))
    a0_sys = 0.5 * state0.c2
    alpha0 = state0.alpha
    vs = vecs[:3, :]
    bath_rows = vecs[3:, :]
    warn = []
    if times.size and times.max() - state0.t > disc.recurrence_time:
        warn.append(
            f"t_end exceeds the bath recurrence time {disc.recurrence_time:.4g}; "
            "increase modes_per_bath"
        )
        warnings.warn(warn[-1], RuntimeWarning, stacklevel=2)
    # Bath contribution: sum_k U_sk n_k conj(U_sk) with U = V e^{-iEt} V^T.
    weighted = bath_rows.T * occ[3:]  # (modes, bath) V^T scaled by occupations
    bath_gram = weighted @ bath_rows  # V^T diag(n) V restricted to the bath, in eigenbasis
    sys_rows = vecs[:3, :]
    states = []
    for t in times:
        phase = np.exp(-1j * evals * (t - state0.t))
        # U_s = V_s diag(phase) V^T; only columns for chain and bath matter
        w = vs * phase  # (3, modes)
        u_chain = w @ sys_rows.T  # (3, 3)
        p = u_chain @ p0_sys @ u_chain.conj().T + w @ bath_gram @ w.conj().T
        anomalous = u_chain @ a0_sys @ u_chain.T
        alpha = u_chain @ alpha0
        c1 = 2 * p + np.eye(3)
        c1 = 0.5 * (c1 + c1.conj().T)
        states.append(CovarianceState.from_blocks(c1, 2 * anomalous, alpha, float(t)))
    return ExactTrajectory(states=states, recurrence_time=disc.recurrence_time, warnings=warn)
