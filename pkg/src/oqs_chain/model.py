"""Chain parameters, Ohmic bath functions and the normal-mode structure.

The system is three identical oscillators with nearest-neighbour hopping,

    H_S = omega0 * sum_i a_i^dag a_i + g * sum_i (a_i a_{i+1}^dag + h.c.),

whose ends couple to two bosonic baths (left on site 1, right on site 3)
with a shared Ohmic spectral density J(w) = w exp(-w / omega_c).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

SQRT2 = math.sqrt(2.0)

# |w / T| below which J(w) n(w) is evaluated from its Taylor series.
SERIES_WINDOW = 1e-4


@dataclass(frozen=True)
class ChainParams:
    """Physical parameters of the chain and of both baths.

    Parameters
    ----------
    omega0 : float
        On-site frequency (> 0).
    g : float
        Hopping strength (>= 0).
    lam : float
        Dimensionless system-bath coupling (>= 0).
    omega_c : float
        Ohmic cutoff frequency (> 0).
    temp_left, temp_right : float
        Bath temperatures (>= 0, k_B = 1).
    """

    omega0: float = 1.0
    g: float = 0.3
    lam: float = 0.1
    omega_c: float = 3.0
    temp_left: float = 10.0
    temp_right: float = 1.0

    def __post_init__(self):
        for name in ("omega0", "g", "lam", "omega_c", "temp_left", "temp_right"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite number, got {value!r}")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")
        if self.omega_c <= 0:
            raise ValueError("omega_c must be positive")
        if self.g < 0 or self.lam < 0:
            raise ValueError("g and lam must be non-negative")
        if self.temp_left < 0 or self.temp_right < 0:
            raise ValueError("temperatures must be non-negative")

    @property
    def resonant_gap_positive(self) -> bool:
        """True when the lowest normal mode has positive energy."""
        return self.g < self.omega0 / SQRT2

    @property
    def temperatures(self) -> tuple[float, float]:
        return (self.temp_left, self.temp_right)

    def site_hamiltonian(self) -> NDArray[np.float64]:
        """Single-particle matrix h with H_S = sum_ij h_ij a_i^dag a_j."""
        h = self.omega0 * np.eye(3)
        h[0, 1] = h[1, 0] = h[1, 2] = h[2, 1] = self.g
        return h

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ChainParams":
        values = asdict(self)
        values.update(changes)
        return ChainParams(**values)


@dataclass(frozen=True)
class NormalModes:
    """Normal-mode energies and the orthogonal map c = T a."""

    epsilon: NDArray[np.float64]
    bogolubov: NDArray[np.float64]


def bogolubov_matrix() -> NDArray[np.float64]:
    """The fixed 3x3 orthogonal matrix T with c = T a."""
    return 0.5 * np.array(
        [
            [1.0, -SQRT2, 1.0],
            [SQRT2, 0.0, -SQRT2],
            [1.0, SQRT2, 1.0],
        ]
    )


def normal_modes(params: ChainParams) -> NormalModes:
    """Return the mode energies (w0 - sqrt2 g, w0, w0 + sqrt2 g) and T."""
    shift = SQRT2 * params.g
    eps = np.array([params.omega0 - shift, params.omega0, params.omega0 + shift])
    return NormalModes(epsilon=eps, bogolubov=bogolubov_matrix())


def spectral_density(omega: ArrayLike, omega_c: float) -> NDArray[np.float64]:
    """Ohmic spectral density w exp(-w / omega_c), also used for w < 0."""
    w = np.asarray(omega, dtype=float)
    return w * np.exp(-w / omega_c)


def mean_photon(omega: ArrayLike, temperature: float) -> NDArray[np.float64]:
    """Bose occupation 1 / (exp(w / T) - 1).

    At T = 0 this is 0 for w > 0 and -1 for w < 0 (pointwise limit).
    Evaluating exactly at w = 0 raises ``ValueError``.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w == 0.0):
        raise ValueError("mean_photon is singular at omega = 0; use thermal_weight")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0.0:
        return np.where(w > 0, 0.0, -1.0)
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(w / temperature)


def bath_weight(
    omega: ArrayLike, temperature: float, omega_c: float, emission: bool
) -> NDArray[np.float64]:
    """J(w) (n(w) + 1) if ``emission`` else J(w) n(w), for one bath.

    The removable singularity at w = 0 is handled by the series
    J n = T exp(-w/w_c) (1 - x/2 + x^2/12), x = w / T.
    """
    w = np.asarray(omega, dtype=float)
    decay = np.exp(-w / omega_c)
    if temperature == 0.0:
        absorbed = np.where(w < 0, -w * decay, 0.0)
    else:
        with np.errstate(over="ignore"):
            x = w / temperature
        small = np.abs(x) < SERIES_WINDOW
        x_safe = np.where(small, 1.0, x)
        x_small = np.where(small, x, 0.0)
        series = temperature * (1.0 - x_small / 2.0 + x_small * x_small / 12.0)
        with np.errstate(over="ignore"):
            # w / expm1(w / T) stays finite when w / T overflows
            absorbed = decay * np.where(small, series, w / np.expm1(x_safe))
    if emission:
        return absorbed + w * decay
    return absorbed


def thermal_weight(omega: ArrayLike, params: ChainParams, sign: str) -> NDArray[np.float64]:
    """tau^+(w) = sum_a J(n_a + 1) for sign '+', tau^-(w) = sum_a J n_a for '-'."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    emission = sign == "+"
    return sum(
        bath_weight(omega, temp, params.omega_c, emission) for temp in params.temperatures
    )
