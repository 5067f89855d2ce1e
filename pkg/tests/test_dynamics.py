from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import expm

from conftest import BASE, tcg_cached
from oqs_chain import dynamics as dyn
from oqs_chain import generators as gen
from oqs_chain.model import ChainParams, bogolubov_matrix, mean_photon, normal_modes
from oracles import gksl_apply, ladder_operators, low_excitation_state, moments

T = bogolubov_matrix()


def random_state(rng, scale=1.0) -> dyn.CovarianceState:
    """Valid state with C1 = 2P + I for a random P >= 0 and random amplitudes."""
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    p = scale * x @ x.conj().T
    alpha = rng.normal(size=3) + 1j * rng.normal(size=3)
    return dyn.CovarianceState.from_blocks(2 * p + np.eye(3), alpha=alpha)


def site(c):
    return gen.to_site_basis(c)


def all_generators():
    return {
        "local": gen.build_local(BASE),
        "global": site(gen.build_global(BASE)),
        "tcg": site(tcg_cached(BASE, 1.0)),
    }


# ---------------------------------------------------------------- moment equations


def random_coefficients(rng):
    def herm(scale):
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        return scale * (x + x.conj().T) / 2

    def psd(scale):
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        return scale * x @ x.conj().T

    h = herm(1.0)
    return gen.GeneratorCoefficients("random", "site", h, psd(0.2), psd(0.1), h)


@pytest.mark.parametrize("which", ["random", "tcg"])
def test_moment_equations_match_fock_space(which, rng):
    coeffs = random_coefficients(rng) if which == "random" else site(tcg_cached(BASE, 1.0))
    ops = ladder_operators(3, 5)
    rho = low_excitation_state(rng, ops, 2)
    drho = gksl_apply(rho, ops, coeffs.h_eff, coeffs.gamma_plus, coeffs.gamma_minus)
    p, a, alpha = moments(rho, ops)
    dp, da, dalpha = moments(drho, ops)
    # centered covariance blocks and their exact time derivatives
    c1 = 2 * (p - np.outer(alpha, alpha.conj())) + np.eye(3)
    c2 = 2 * (a - np.outer(alpha, alpha))
    dc1 = 2 * (dp - np.outer(dalpha, alpha.conj()) - np.outer(alpha, dalpha.conj()))
    dc2 = 2 * (da - np.outer(dalpha, alpha) - np.outer(alpha, dalpha))

    state = dyn.CovarianceState.from_blocks(c1, c2, alpha)
    dd = dyn.build_drift_diffusion(coeffs)
    rate_c = dd.m @ state.c + state.c @ dd.m.conj().T + dd.n
    np.testing.assert_allclose(rate_c[:3, :3], dc1, atol=1e-12)
    np.testing.assert_allclose(rate_c[:3, 3:], dc2, atol=1e-12)
    np.testing.assert_allclose(dd.m_hat @ alpha, dalpha, atol=1e-12)


def test_closed_system_drift():
    c = gen.build_local(BASE.replace(lam=0.0))
    dd = dyn.build_drift_diffusion(c)
    np.testing.assert_array_equal(dd.n, 0)
    np.testing.assert_allclose(dd.m_hat, -1j * BASE.site_hamiltonian())


def test_global_drift_is_diagonal():
    c = gen.build_global(BASE)
    dd = dyn.build_drift_diffusion(c)
    np.testing.assert_array_equal(dd.m_hat, np.diag(np.diag(dd.m_hat)))
    expected = -1j * np.diag(c.h_eff) - 0.5 * (np.diag(c.gamma_plus) - np.diag(c.gamma_minus))
    np.testing.assert_allclose(np.diag(dd.m_hat), expected, rtol=1e-15)


@pytest.mark.parametrize("name", ["local", "global", "tcg"])
def test_drift_is_stable(name):
    assert dyn.build_drift_diffusion(all_generators()[name]).spectral_abscissa < 0


# ---------------------------------------------------------------- steady states


def test_global_vacuum_steady_state():
    c = gen.build_global(BASE.replace(temp_left=0.0, temp_right=0.0))
    ss = dyn.steady_state(dyn.build_drift_diffusion(c))
    np.testing.assert_allclose(ss.c1, np.eye(3), atol=1e-12)


def test_local_equal_temperatures_thermalizes_every_site():
    p = BASE.replace(temp_left=2.0, temp_right=2.0)
    ss = dyn.steady_state(dyn.build_drift_diffusion(gen.build_local(p)))
    nbar = float(mean_photon(1.0, 2.0))
    np.testing.assert_allclose(ss.c1, (2 * nbar + 1) * np.eye(3), atol=1e-10)


def test_global_steady_state_with_undamped_mode():
    p = BASE.replace(g=0.8)
    c = gen.build_global(p)
    ss = dyn.steady_state(dyn.build_drift_diffusion(c))
    eps = normal_modes(p).epsilon
    assert ss.c1[0, 0].real == pytest.approx(1.0, abs=1e-12)
    for i in (1, 2):
        n = sum(mean_photon(eps[i], t) for t in p.temperatures)
        assert ss.c1[i, i].real == pytest.approx(n + 1, rel=1e-10)


def test_steady_state_rejects_driven_undamped_mode():
    h = np.diag([1.0, 2.0, 3.0]).astype(complex)
    gm = np.diag([0.1, 0.0, 0.0]).astype(complex)
    c = gen.GeneratorCoefficients("x", "normal", h, gm, gm, h)
    # equal emission and absorption: zero damping but nonzero noise
    with pytest.raises(dyn.SteadyStateError):
        dyn.steady_state(dyn.build_drift_diffusion(c))



@given(st.floats(0.05, 0.65), st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_steady_state_is_fixed_point(g, tl, tr):
    p = BASE.replace(g=g, temp_left=tl, temp_right=tr)
    for c in (gen.build_local(p), gen.build_global(p)):
        dd = dyn.build_drift_diffusion(c)
        ss = dyn.steady_state(dd)
        res = dd.m_hat @ ss.c1 + ss.c1 @ dd.m_hat.conj().T + dd.n_hat
        assert np.max(np.abs(res)) < 1e-10 * max(1.0, np.max(np.abs(ss.c1)))
        assert not ss.check()


# ---------------------------------------------------------------- evolution


def test_rk_matches_exact_propagator(rng):
    dd = dyn.build_drift_diffusion(all_generators()["tcg"])
    s0 = random_state(rng)
    times = np.linspace(0, 5, 6)
    rk = dyn.evolve(s0, dd, 5.0, tol=1e-12, times=times)
    ex = dyn.evolve(s0, dd, 5.0, times=times, method="expm")
    for a, b in zip(rk, ex):
        np.testing.assert_allclose(a.c, b.c, atol=1e-9)
        np.testing.assert_allclose(a.d, b.d, atol=1e-9)


def test_closed_chain_conserves_excitations_and_spectrum(rng):
    dd = dyn.build_drift_diffusion(gen.build_local(BASE.replace(lam=0.0)))
    s0 = random_state(rng)
    final = dyn.evolve(s0, dd, 7.0, tol=1e-12)[-1]
    assert np.trace(final.second_moments()).real == pytest.approx(
        np.trace(s0.second_moments()).real, rel=1e-9)
    np.testing.assert_allclose(np.linalg.eigvalsh(final.c), np.linalg.eigvalsh(s0.c), atol=1e-8)


@pytest.mark.parametrize("name", ["local", "global", "tcg"])
def test_relaxation_to_steady_state(name):
    dd = dyn.build_drift_diffusion(all_generators()[name])
    t_end = 50.0 / abs(dd.spectral_abscissa)
    final = dyn.evolve(dyn.CovarianceState.vacuum(), dd, t_end, method="expm")[-1]
    assert np.linalg.norm(final.c - dyn.steady_state(dd).c) < 1e-8


def test_evolution_is_linear(rng):
    dd = dyn.build_drift_diffusion(all_generators()["local"])
    a, b = random_state(rng), random_state(rng)
    b = dyn.CovarianceState(c=b.c, d=a.d)
    mix = dyn.CovarianceState(c=0.3 * a.c + 0.7 * b.c, d=a.d)
    ea, eb, em = (dyn.evolve(s, dd, 3.0, tol=1e-12)[-1] for s in (a, b, mix))
    np.testing.assert_allclose(em.c, 0.3 * ea.c + 0.7 * eb.c, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["local", "global", "tcg"]))
def test_evolution_preserves_physical_states(seed, name):
    dd = dyn.build_drift_diffusion(all_generators()[name])
    s0 = random_state(np.random.default_rng(seed), scale=0.5)
    for s in dyn.evolve(s0, dd, 10.0, times=np.linspace(0, 10, 11), method="expm"):
        assert not s.check()


def test_zero_horizon_and_invalid_times():
    dd = dyn.build_drift_diffusion(all_generators()["local"])
    s0 = dyn.CovarianceState.vacuum()
    out = dyn.evolve(s0, dd, 0.0)
    assert len(out) == 2 and all(np.array_equal(s.c, s0.c) for s in out)
    with pytest.raises(ValueError):
        dyn.evolve(s0, dd, -1.0)
    with pytest.raises(ValueError):
        dyn.evolve(s0, dd, 1.0, times=[0.0, 2.0])


def test_state_serialization_and_checks(rng):
    s = random_state(rng)
    back = dyn.CovarianceState.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.c, s.c)
    np.testing.assert_array_equal(back.d, s.d)
    bad = dyn.CovarianceState.from_blocks(0.5 * np.eye(3))
    assert "block-1 diagonal below 1" in bad.check()
    normal = s.transformed(T)
    np.testing.assert_allclose(normal.transformed(T.T).c, s.c, atol=1e-14)


# ---------------------------------------------------------------- discretized bath


@pytest.mark.parametrize("k", [256, 512])
def test_bath_discretization_reproduces_coupling_weight(k):
    disc = dyn.discretize_bath(3.0, k)
    assert np.all(np.diff(disc.frequencies) > 0) and disc.frequencies[0] > 0
    assert np.all(disc.couplings >= 0)
    total, _ = integrate.quad(lambda w: w * math.exp(-w / 3.0), 0, 36.0)
    assert np.sum(disc.couplings**2) == pytest.approx(total, rel=1e-2)
    assert disc.recurrence_time == pytest.approx(2 * math.pi * k / 36.0)


@pytest.mark.filterwarnings("ignore:t_end exceeds the bath recurrence time")
def test_exact_reference_without_coupling_is_closed_chain(rng):
    p = BASE.replace(lam=0.0)
    s0 = random_state(rng)
    times = [0.0, 1.0, 4.0]
    ref = dyn.exact_reference(p, dyn.discretize_bath(3.0, 16), s0, 4.0, times=times).states
    closed = dyn.evolve(s0, dyn.build_drift_diffusion(gen.build_local(p)), 4.0, times=times,
                        method="expm")
    for a, b in zip(ref, closed):
        np.testing.assert_allclose(a.c, b.c, atol=1e-10)
        np.testing.assert_allclose(a.d, b.d, atol=1e-10)


@pytest.mark.filterwarnings("ignore:t_end exceeds the bath recurrence time")
def test_exact_reference_matches_full_propagator(rng):
    """Small-K check against exp(-i H t) applied to all 3 + 2K modes; conserves excitations."""
    disc = dyn.discretize_bath(3.0, 6)
    s0 = random_state(rng, scale=0.3)
    t = 2.5
    ref = dyn.exact_reference(BASE, disc, s0, t, times=[t]).states[0]

    h = dyn.total_hamiltonian(BASE, disc)
    n = h.shape[0]
    p0 = np.zeros((n, n), dtype=complex)
    p0[:3, :3] = 0.5 * (s0.c1 - np.eye(3))
    for off, temp in ((3, BASE.temp_left), (9, BASE.temp_right)):
        p0[off:off + 6, off:off + 6] = np.diag(mean_photon(disc.frequencies, temp))
    u = expm(-1j * h * t)
    pt = u @ p0 @ u.conj().T
    assert np.trace(pt).real == pytest.approx(np.trace(p0).real, rel=1e-12)
    np.testing.assert_allclose(0.5 * (ref.c1 - np.eye(3)), pt[:3, :3], atol=1e-10)
    np.testing.assert_allclose(ref.alpha, (u @ np.concatenate([s0.alpha, np.zeros(12)]))[:3],
                               atol=1e-12)


def test_exact_reference_warns_past_recurrence():
    disc = dyn.discretize_bath(3.0, 8)
    with pytest.warns(RuntimeWarning, match="recurrence"):
        traj = dyn.exact_reference(BASE, disc, dyn.CovarianceState.vacuum(), 20.0)
    assert not traj.valid


def test_basis_tag_is_tracked_and_checked():
    glb = gen.build_global(BASE)
    dd = dyn.build_drift_diffusion(glb)
    ss = dyn.steady_state(dd)
    assert ss.basis == "normal"
    assert dyn.steady_state(dyn.build_drift_diffusion(site(glb))).basis == "site"
    np.testing.assert_allclose(ss.to_site_basis().c,
                               dyn.steady_state(dyn.build_drift_diffusion(site(glb))).c, atol=1e-12)
    with pytest.raises(ValueError, match="basis"):
        dyn.evolve(dyn.CovarianceState.vacuum(), dd, 1.0)
    out = dyn.evolve(dyn.CovarianceState.vacuum(basis="normal"), dd, 1.0)
    assert all(s.basis == "normal" for s in out)
    assert dyn.CovarianceState.from_dict(ss.to_dict()).basis == "normal"
    with pytest.raises(ValueError):
        dyn.CovarianceState.vacuum(basis="momentum")
