from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oqs_chain import generators as gen
from oqs_chain.cli import default_delta_t_grid
from oqs_chain.model import ChainParams
from oqs_chain.quadrature import QuadratureSpec

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

BASE = ChainParams(omega0=1.0, g=0.3, lam=0.1, omega_c=3.0, temp_left=10.0, temp_right=1.0)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@functools.lru_cache(maxsize=None)
def tcg_cached(params: ChainParams, delta_t: float):
    return gen.build_tcg(params, delta_t, QuadratureSpec())


@pytest.fixture(scope="session")
def base() -> ChainParams:
    return BASE


@pytest.fixture(scope="session")
def dt_grid() -> tuple[float, ...]:
    return default_delta_t_grid()


@pytest.fixture(scope="session")
def tcg_grid(dt_grid):
    """build_tcg on the default delta_t grid for the reference parameters."""
    return [tcg_cached(BASE, dt) for dt in dt_grid]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
