from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dissren import bloch as bl
from dissren import propagator as pr
from dissren.errors import DomainError, IntegratorError
from dissren.spectral import Convention

from test_propagator import single_mode


def random_density(rng):
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    r = m @ m.conj().T
    return bl.QubitDensity(r / np.trace(r))


# -- chi ------------------------------------------------------------------------------------

def test_chi_analytic_values():
    assert bl.chi_analytic(0.0, 0.3) == 0.0
    assert abs(bl.chi_analytic(np.log(2) / 2 / 0.1, 0.1) - 0.5) < 1e-15
    assert bl.chi_analytic(1e4, 0.1) == 1.0
    assert abs(bl.chi_analytic(1.0, 0.1, Convention.RESCALED) - (1 - np.exp(-0.1))) < 1e-15
    with pytest.raises(DomainError):
        bl.chi_analytic(-1.0, 0.1)


def test_chi_quadrature_tracks_closed_form(broadband):
    m, g, c = broadband
    t = np.array([0.5, 1.0, 2.0]) / c.gamma
    np.testing.assert_allclose(bl.chi_quadrature(m, g, c, t), bl.chi_analytic(t, c.gamma), rtol=0.03)


def test_chi_montecarlo_zero_time(small_model):
    m, g, c = small_model
    est = bl.chi_montecarlo_many(m, g, c, [0.0], 200, 1)
    assert est.mean[0] == 0 and est.first_moment[0] == 0


def test_chi_montecarlo_consistency(broadband):
    m, g, c = broadband
    t = np.array([0.5, 1.0, 2.0]) / c.gamma
    est = bl.chi_montecarlo_many(m, g, c, t, 3000, 11)
    assert np.all(np.abs(est.mean - bl.chi_analytic(t, c.gamma)) < 3 * est.stderr)
    assert np.all(np.abs(est.first_moment) < 3 * est.first_moment_stderr)
    # the estimator targets the grid quadrature of the same mean exactly
    assert np.all(np.abs(est.mean - bl.chi_quadrature(m, g, c, t)) < 3 * est.stderr)


def test_seed_determinism_across_threads(small_model):
    m, g, c = small_model
    t = [10.0, 40.0]
    a = bl.chi_montecarlo_many(m, g, c, t, 1000, 5, threads=1)
    b = bl.chi_montecarlo_many(m, g, c, t, 1000, 5, threads=3)
    assert a.mean.tobytes() == b.mean.tobytes() and a.stderr.tobytes() == b.stderr.tobytes()
    assert a.first_moment.tobytes() == b.first_moment.tobytes()
    other = bl.chi_montecarlo_many(m, g, c, t, 1000, 6)
    assert other.mean.tobytes() != a.mean.tobytes()


def test_noise_sample_is_reproducible(small_model):
    _, g, _ = small_model
    x = bl.noise_sample(g, 4, 17)
    y = bl.noise_sample(g, 4, 17)
    assert x.xi.tobytes() == y.xi.tobytes() and x.seed_path == (4, 17)
    assert bl.noise_sample(g, 4, 18).xi.tobytes() != x.xi.tobytes()


def test_standard_noise_moments():
    z = np.concatenate([bl.standard_noise(9, s, 50) for s in range(400)])
    assert abs(np.mean(np.abs(z) ** 2) - 1) < 0.03
    assert abs(np.mean(z)) < 0.03


# -- vacuum master equation -----------------------------------------------------------------------

def test_vacuum_ground_state_is_stationary():
    out = bl.integrate_master_vacuum(bl.QubitDensity.pure(1, 0), 1.0, 0.05, [0.0, 10.0, 100.0])
    for r in out:
        np.testing.assert_allclose(r.rho, np.diag([1.0, 0.0]), atol=1e-14)


def test_vacuum_excited_decay_and_coherence():
    g, wa = 0.05, 1.3
    t = np.linspace(0, 5 / g, 26)
    up = bl.integrate_master_vacuum(bl.QubitDensity.pure(0, 1), wa, g, t)
    np.testing.assert_allclose([r.rho[1, 1].real for r in up], np.exp(-2 * g * t), atol=1e-8)
    half = bl.integrate_master_vacuum(bl.QubitDensity(np.full((2, 2), 0.5)), wa, g, t)
    r01 = np.array([r.rho[0, 1] for r in half])
    np.testing.assert_allclose(r01, 0.5 * np.exp(-g * t) * np.exp(1j * wa * t), atol=1e-10)
    resc = bl.integrate_master_vacuum(bl.QubitDensity.pure(0, 1), wa, g, t, Convention.RESCALED)
    np.testing.assert_allclose([r.rho[1, 1].real for r in resc], np.exp(-g * t), atol=1e-8)


def test_gksl_structure_for_random_states():
    rng = np.random.default_rng(123)
    t = np.linspace(0, 40, 5)
    for _ in range(100):
        out = bl.integrate_master_vacuum(random_density(rng), 1.0, 0.07, t)
        for r in out:
            assert abs(r.trace - 1) < 1e-10
            assert r.min_eigenvalue() > -1e-10


def test_invalid_initial_state_rejected():
    with pytest.raises(IntegratorError):
        bl.integrate_master_vacuum(bl.QubitDensity(np.diag([0.7, 0.7])), 1.0, 0.1, [0.0])


# -- driven dynamics ---------------------------------------------------------------------------

def test_driven_vacuum_reduction(small_model):
    m, g, c = small_model
    z = pr.CoherentProfile.zero(g)
    rho0 = bl.QubitDensity.pure(0.6, 0.8)
    t = np.linspace(0, 3 / c.gamma, 7)
    for conv in Convention:
        drv = bl.driven_lindblad_integrate(z, m, g, c, rho0, t, conv)
        vac = bl.integrate_master_vacuum(rho0, c.omega_A, c.gamma, t, conv)
        for a, b in zip(drv, vac):
            assert np.max(np.abs(a.rho - b.rho)) < 1e-8
    # convention mapping: a rescaled constant gamma is a half-width gamma / 2
    drv = bl.driven_lindblad_integrate(z, m, g, c, rho0, t, Convention.RESCALED)
    vac = bl.integrate_master_vacuum(rho0, c.omega_A, c.gamma / 2, t, Convention.HALF_WIDTH)
    assert max(np.max(np.abs(a.rho - b.rho)) for a, b in zip(drv, vac)) < 1e-8
    resc = bl.driven_lindblad_integrate(z, m, g, c, bl.QubitDensity.pure(0, 1), t, Convention.RESCALED)
    np.testing.assert_allclose([r.rho[1, 1].real for r in resc], np.exp(-c.gamma * t), atol=1e-8)


def test_driven_without_dissipation_is_unitary(small_model):
    m, g, c = small_model
    drive = 0.05
    a, nu = single_mode(m, g, 1.0, drive)
    c0 = replace(c, gamma=0.0, omega0=nu, delta_omega=0.0)
    t = np.linspace(0, 100, 11)
    out = bl.driven_lindblad_integrate(a, m, g, c0, bl.QubitDensity.pure(1, 0), t)
    np.testing.assert_allclose([r.rho[1, 1].real for r in out], np.sin(drive * t) ** 2, atol=1e-8)
    first = bl.driven_map_first_order(a, m, g, c0, bl.QubitDensity.pure(1, 0), t[-1])
    np.testing.assert_allclose(first.rho, out[-1].rho, atol=1e-8)


def test_steady_state_matches_optical_bloch(small_model):
    m, g, c = small_model
    drive = 0.02
    a, nu = single_mode(m, g, c.omega_A, drive)
    rate = bl.population_rate(c.gamma)
    detuning = c.omega_A - nu
    want = drive**2 / (detuning**2 + rate**2 / 4 + 2 * drive**2)
    out = bl.driven_lindblad_integrate(a, m, g, c, bl.QubitDensity.pure(1, 0), [0.0, 20 / c.gamma])
    assert abs(out[-1].rho[1, 1].real - want) < 0.02 * want


def test_first_order_map_error_is_quadratic(small_model):
    m, g, c = small_model
    a, _ = single_mode(m, g, 1.0, 0.05)
    rho0 = bl.QubitDensity.pure(0.6, 0.8)
    t = 10.0
    errs, trace_err, vac = [], [], []
    z = pr.CoherentProfile.zero(g)
    for gam in (0.02, 0.01, 0.005):
        cg = replace(c, gamma=gam)
        first = bl.driven_map_first_order(a, m, g, cg, rho0, t)
        exact = bl.driven_lindblad_integrate(a, m, g, cg, rho0, [0.0, t])[-1]
        errs.append(np.max(np.abs(first.rho - exact.rho)))
        trace_err.append(abs(first.trace - 1))
        v1 = bl.driven_map_first_order(z, m, g, cg, rho0, t)
        v0 = bl.integrate_master_vacuum(rho0, cg.omega_A, gam, [t])[0]
        vac.append(np.max(np.abs(v1.rho - v0.rho)))
    for e in (errs, vac):
        assert 3.5 < e[0] / e[1] < 4.5 and 3.5 < e[1] / e[2] < 4.5
    # with a unitary U the anticommutator and jump terms cancel in the trace identically
    assert max(trace_err) < 1e-12


# -- second order ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def second_order_report(small_model):
    m, g, c = small_model
    a, _ = single_mode(m, g, 0.984, 0.3)
    return bl.verify_second_order(a, m, g, c, bl.QubitDensity.pure(0.6, 0.8), 10.0, [0.01, 0.005, 0.0025])


def test_second_order_expansions_agree(second_order_report):
    rep = second_order_report
    assert max(rep.expansion_gap) < 1e-12
    assert rep.first_order_exponent == pytest.approx(2.0, abs=0.1)


def test_second_order_residual_exponent(second_order_report):
    rep = second_order_report
    assert rep.passed and rep.reaches(3.0)
    assert rep.extrapolated_exponent == pytest.approx(3.0, abs=0.05)


def test_symmetrization_identity_without_drive(small_model):
    m, g, c = small_model
    fr = bl.interaction_frames(pr.DriveFunction(pr.CoherentProfile.zero(g), m, g), c.omega_A, 10.0)
    rng = np.random.default_rng(0)
    assert bl.symmetrization_gap(fr, random_density(rng).rho) < 1e-10


def test_second_order_without_dissipation(small_model):
    m, g, c = small_model
    a, _ = single_mode(m, g, 1.0, 0.1)
    fr = bl.interaction_frames(pr.DriveFunction(a, m, g), c.omega_A, 5.0)
    rho = np.diag([0.3, 0.7]).astype(complex)
    assert not bl.second_order_generator(fr, rho, 0.0).any()
    assert not bl.second_order_reduced(fr, rho, 0.0).any()


def test_gamma_list_validation(small_model):
    m, g, c = small_model
    z = pr.CoherentProfile.zero(g)
    with pytest.raises(ValueError):
        bl.verify_second_order(z, m, g, c, bl.QubitDensity.pure(1, 0), 1.0, [0.01, 0.02, 0.005])


@given(st.floats(0.0, 1.0), st.floats(0.0, 2 * np.pi))
def test_pure_state_is_valid(theta, phi):
    r = bl.QubitDensity.pure(np.cos(theta), np.sin(theta) * np.exp(1j * phi))
    assert r.is_valid()


def test_density_csv_header():
    text = bl.density_csv([0.0], [bl.QubitDensity.pure(1, 0)])
    assert text.splitlines()[0] == "t,rho00,re_rho01,im_rho01,rho11,trace,min_eig"
