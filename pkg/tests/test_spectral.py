import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from dissren import spectral as sp
from dissren.errors import ConfigurationError, DomainError, IterationError, SingularityError
from dissren.timequad import simpson_weights

families = st.sampled_from(["Lorentzian", "OhmicExpCutoff", "FlatWindow"])
models = st.builds(sp.CouplingModel, families, st.floats(0.0, 0.2), st.floats(0.2, 3.0), st.floats(0.1, 2.0))


# -- coupling evaluation -----------------------------------------------------------


@given(models, st.floats(0.0, 10.0))
def test_zero_amplitude_gives_zero(model, w):
    m = sp.CouplingModel(model.family, 0.0, model.center, model.width_or_cutoff)
    assert sp.eval_coupling(m, w) == 0


def test_lorentzian_peaks_at_center():
    m = sp.CouplingModel("Lorentzian", 0.3, 1.5, 0.2)
    assert sp.eval_coupling(m, 1.5) == pytest.approx(0.3, abs=0, rel=1e-15)


def test_ohmic_matches_direct_formula():
    a, wc = 0.7, 1.3
    m = sp.CouplingModel("OhmicExpCutoff", a, 0.0, wc)
    direct = a * np.sqrt(2.0) * np.exp(-1.0)
    assert sp.eval_coupling(m, 2 * wc).real == pytest.approx(direct, rel=1e-14)


def test_flat_window_and_tabulated():
    m = sp.CouplingModel("FlatWindow", 0.5, 2.0, 1.0)
    assert sp.eval_coupling(m, 1.0) == 0.5 and sp.eval_coupling(m, 3.5) == 0
    t = sp.CouplingModel("Tabulated", 2.0, 0.0, 1.0, table=((1.0, 1.0), (3.0, 3.0 + 2j)))
    assert sp.eval_coupling(t, 2.0) == pytest.approx(2.0 * (2.0 + 1j))
    assert sp.eval_coupling(t, 0.5) == 0 and sp.eval_coupling(t, 4.0) == 0


def test_negative_frequency_rejected():
    m = sp.CouplingModel("Lorentzian", 0.1, 1.0, 1.0)
    with pytest.raises(DomainError):
        sp.eval_coupling(m, -0.1)


@pytest.mark.parametrize("kw", [
    dict(family="Lorentzian", amplitude=0.1, center=1.0, width_or_cutoff=0.0),
    dict(family="Lorentzian", amplitude=-0.1, center=1.0, width_or_cutoff=1.0),
    dict(family="Tabulated", amplitude=1.0, center=0.0, width_or_cutoff=1.0, table=((2.0, 1), (1.0, 1))),
    dict(family="Tabulated", amplitude=1.0, center=0.0, width_or_cutoff=1.0, table=((-1.0, 1), (1.0, 1))),
    dict(family="Lorentzian", amplitude=1.0, center=0.0, width_or_cutoff=1.0, table=((0.0, 1), (1.0, 1))),
])
def test_model_invariants_enforced(kw):
    with pytest.raises(ConfigurationError):
        sp.CouplingModel(**kw)


@given(models, st.lists(st.floats(0.0, 20.0), min_size=1, max_size=20))
def test_spectral_density_nonnegative(model, ws):
    assert np.all(sp.spectral_density(model, np.array(ws)) >= 0)


# -- grids -------------------------------------------------------------------------


@given(st.integers(2, 3000), st.floats(0.1, 100.0))
def test_trapezoid_weights_sum_to_range(n, wmax):
    g = sp.FrequencyGrid.build("Trapezoid", n, wmax)
    assert abs(g.weights.sum() - wmax) <= 1e-12 * wmax
    assert np.all(np.diff(g.nodes) > 0) and g.nodes[0] >= 0 and g.nodes[-1] <= wmax


@given(st.integers(2, 500), st.floats(0.1, 100.0))
def test_gauss_grid_invariants(n, wmax):
    g = sp.FrequencyGrid.build("GaussLegendre", n, wmax)
    assert np.all(g.weights > 0) and np.all(np.diff(g.nodes) > 0)
    assert g.weights.sum() == pytest.approx(wmax, rel=1e-12)


def test_grid_is_immutable():
    g = sp.FrequencyGrid.build("GaussLegendre", 10, 1.0)
    with pytest.raises(ValueError):
        g.nodes[0] = 0.5


# -- memory kernel -------------------------------------------------------------------


@given(models, st.floats(-50.0, 50.0))
def test_kernel_hermitian_symmetry(model, t):
    g = sp.FrequencyGrid.build("GaussLegendre", 200, 10.0)
    f, fm = sp.memory_kernel(model, g, t), sp.memory_kernel(model, g, -t)
    assert abs(fm - np.conj(f)) <= 1e-13 * max(1.0, abs(f))


def test_kernel_zero_amplitude():
    m = sp.CouplingModel("Lorentzian", 0.0, 1.0, 1.0)
    g = sp.default_grid(sp.CouplingModel("Lorentzian", 0.1, 1.0, 1.0), 100)
    assert sp.memory_kernel(m, g, 3.0) == 0


def test_kernel_at_zero_converges_under_refinement():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.default_grid(m)
    f0, f1 = sp.memory_kernel(m, g, 0.0), sp.memory_kernel(m, g.refined(2), 0.0)
    assert f0.imag == 0 and f0.real > 0
    assert abs(f0 - f1) <= 1e-8 * abs(f1)


def test_renorm_kernel_reductions():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.default_grid(m, 300)
    bare = sp.bare_constants(1.2)
    t = np.linspace(0, 5, 7)
    np.testing.assert_allclose(sp.renorm_memory_kernel(m, g, bare, t),
                               np.exp(1.2j * t) * sp.memory_kernel(m, g, t), rtol=1e-14)
    c = sp.compute_renorm_constants(m, g, 1.0)
    assert sp.renorm_memory_kernel(m, g, c, 0.0) == sp.memory_kernel(m, g, 0.0)


def test_renorm_kernel_integral_tends_to_b():
    # int_0^T F^r dt for a flat window approaches b = gamma + i delta_omega as
    # the window widens; T sits between the memory time 1/W and 1/gamma
    errs = []
    for width in (0.1, 0.2, 0.4, 0.8):
        m = sp.CouplingModel("FlatWindow", 0.003, 1.0, width)
        g = sp.FrequencyGrid.build("GaussLegendre", 1600, 1.0 + width)
        c = sp.compute_renorm_constants(m, g, 1.0)
        t = np.linspace(0.0, 200.0, 20001)
        integral = simpson_weights(t.size, t[1]) @ sp.renorm_memory_kernel(m, g, c, t)
        errs.append(abs(integral - c.b) / abs(c.b))
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.01


# -- Laplace kernel ------------------------------------------------------------------


def test_laplace_kernel_zero_and_asymptotics():
    m0 = sp.CouplingModel("Lorentzian", 0.0, 1.0, 1.0)
    g = sp.FrequencyGrid.build("GaussLegendre", 300, 10.0)
    assert sp.laplace_kernel(m0, g, 2.0, 0.0, 1.0).value == 0
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 1.0)
    z = 1e3 * g.omega_max
    val = sp.laplace_kernel(m, g, z, 0.01, 1.0).value
    assert abs(val - sp.memory_kernel(m, g, 0.0) / z) < 0.01 * abs(sp.memory_kernel(m, g, 0.0) / z)


def test_laplace_kernel_matches_time_integral():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.FrequencyGrid.build("GaussLegendre", 300, 6.0)
    c = sp.compute_renorm_constants(m, g, 1.0)
    z = c.gamma + 1.0 + 0.5j
    T = np.log(1e10) / (z.real - c.gamma)
    t = np.linspace(0.0, T, 20001)
    F = np.exp(-z * t) * sp.renorm_memory_kernel(m, g, c, t)
    numeric = simpson_weights(t.size, t[1]) @ F
    lk = sp.laplace_kernel(m, g, z, c.gamma, c.omega_A)
    assert not lk.continued
    assert abs(numeric - lk.value) <= 1e-6 * abs(lk.value)


def test_markov_limit(broadband):
    m, g, c = broadband
    val = sp.laplace_kernel(m, g, 0.02, 0.0, c.omega_A)
    assert val.continued is False
    assert abs(val.value - c.b) / abs(c.b) < 0.05


def test_laplace_pole_guard():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.FrequencyGrid.build("GaussLegendre", 50, 6.0)
    z = 0.1 - 1j * (g.nodes[7] - 1.0)
    with pytest.raises(SingularityError):
        sp.laplace_kernel(m, g, z, 0.1, 1.0)


def test_continuation_flag():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.FrequencyGrid.build("GaussLegendre", 50, 6.0)
    assert sp.laplace_kernel(m, g, 0.05 + 0.3j, 0.1, 1.0).continued


# -- renormalization constants -------------------------------------------------------


def _cauchy_oracle(model, wmax, omega_A):
    g = lambda w: float(sp.spectral_density(model, np.array([w]))[0])
    pv = quad(g, 0.0, wmax, weight="cauchy", wvar=omega_A, limit=400, epsabs=1e-14, epsrel=1e-12)[0]
    return np.pi * g(omega_A), -pv


def test_constants_against_independent_quadrature():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.default_grid(m)
    c = sp.compute_renorm_constants(m, g, 1.0)
    gamma, dw = _cauchy_oracle(m, g.omega_max, 1.0)
    assert c.gamma == pytest.approx(gamma, rel=1e-6)
    assert c.delta_omega == pytest.approx(dw, rel=1e-6)


def test_fixed_point_constants(broadband):
    m, g, c = broadband
    assert c.iterations > 1
    gamma, dw = _cauchy_oracle(m, g.omega_max, c.omega_A)
    assert c.gamma == pytest.approx(gamma, rel=1e-6)
    assert c.delta_omega == pytest.approx(dw, rel=1e-6)
    assert c.omega_A == c.omega0 + c.delta_omega


def test_zero_amplitude_constants():
    m = sp.CouplingModel("OhmicExpCutoff", 0.0, 0.0, 1.0)
    c = sp.compute_renorm_constants(m, sp.FrequencyGrid.build("GaussLegendre", 100, 20.0), 1.0)
    assert c.gamma == 0 and c.delta_omega == 0


@given(st.floats(0.2, 3.0), st.floats(0.05, 1.0))
def test_principal_value_of_symmetric_density_vanishes(center, width):
    g = lambda w: np.exp(-((w - center) / width) ** 2)
    assert abs(sp.principal_value(g, center, 0.0, 2 * center, 400)) < 1e-10


@given(models, st.floats(0.3, 2.5))
def test_constants_identities(model, omega0):
    g = sp.FrequencyGrid.build("GaussLegendre", 200, 8.0)
    c = sp.compute_renorm_constants(model, g, omega0)
    assert (c.b + c.b.conjugate()).real == 2 * c.gamma
    assert c.Omega == complex(c.omega_A, -c.gamma)
    assert c.omega_A == c.omega0 + c.delta_omega


def test_fixed_point_failure_carries_last_iterate():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    g = sp.default_grid(m, 400)
    with pytest.raises(IterationError) as exc:
        sp.compute_renorm_constants(m, g, 1.0, sp.RenormOptions(fixed_point=True, tol=1e-30, max_iter=2))
    assert isinstance(exc.value.last_iterate, sp.RenormConstants)


def test_omega0_outside_grid():
    m = sp.CouplingModel("Lorentzian", 0.05, 1.0, 0.5)
    with pytest.raises(DomainError):
        sp.compute_renorm_constants(m, sp.FrequencyGrid.build("GaussLegendre", 50, 2.0), 3.0)


def test_convention_helpers():
    assert sp.half_width_gamma(0.2, "Rescaled") == 0.1
    assert sp.half_width_gamma(0.2) == 0.2
    c = sp.RenormConstants(0.1, 0.0, 1.0)
    assert c.gamma_in("Rescaled") == 0.2 and c.gamma_in("HalfWidth") == 0.1


# -- serialization ---------------------------------------------------------------------


@given(models)
def test_model_json_round_trip(model):
    assert sp.model_from_dict(sp.model_to_dict(model)) == model


def test_model_dict_rejects_unknown_keys():
    with pytest.raises(ConfigurationError, match="colour"):
        sp.model_from_dict({"family": "Lorentzian", "amplitude": 1, "center": 1, "width_or_cutoff": 1,
                            "colour": 2})
    with pytest.raises(ConfigurationError, match="spacing"):
        sp.grid_from_dict({"scheme": "Trapezoid", "n_nodes": 3, "omega_max": 1, "spacing": 2})


def test_grid_round_trip_and_hash():
    g = sp.FrequencyGrid.build("Trapezoid", 11, 2.0)
    g2 = sp.grid_from_dict(sp.grid_to_dict(g))
    assert np.array_equal(g.nodes, g2.nodes)
    m = sp.CouplingModel("Lorentzian", 0.1, 1.0, 1.0)
    assert sp.model_hash(m, g) == sp.model_hash(sp.model_from_dict(sp.model_to_dict(m)), g2)
    assert sp.model_hash(m) != sp.model_hash(sp.CouplingModel("Lorentzian", 0.2, 1.0, 1.0))
