import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.stats import gamma as gamma_dist

from maxvariety import (CutoffParams, DensitySpec, EnsembleState, InvalidInputError,
                        PhysicalConstants, ResolutionError, sample_ensemble)
from maxvariety.continuum import (ContinuumField, continuum_variety, correction_potential,
                                  cutoff_scaling, discrete_vs_continuum, energy_shift,
                                  energy_shift_scaling, fisher_functional, ke_continuum_check,
                                  ke_target, laplacian_term, nn_density, normalization_constants,
                                  solid_angle)
from maxvariety.harness.scenarios import ActionField

GAUSS = DensitySpec.gaussian(0.0, 1.0)


def gaussian_field(sigma=1.0, mean=0.0, n=4001, width=10.0):
    return ContinuumField.from_spec(DensitySpec.gaussian(mean, sigma), n_points=n, width=width)


def uniform_field(n=2001):
    z = np.linspace(0.0, 1.0, n)
    return ContinuumField.from_values(z, np.ones_like(z))


def sech2_field(n):
    z = np.linspace(-12.0, 12.0, n)
    return ContinuumField.from_values(z, 1.0 / np.cosh(z) ** 2)


# -- solid angle and normalizations ------------------------------------------

def test_solid_angle_low_dimensions():
    assert solid_angle(1) == pytest.approx(2.0)
    assert solid_angle(2) == pytest.approx(2 * math.pi)
    assert solid_angle(3) == pytest.approx(4 * math.pi)


def test_normalization_hand_values():
    z = normalization_constants(100, 11.0, d=1)
    assert z.Z_KE == pytest.approx(5.0) and z.Z_0 == pytest.approx(5.0)
    assert z.Z_V == pytest.approx(1.0 / (100 * 4 * 100))


def test_normalization_accepts_arrays():
    r = np.array([2.0, 11.0, 50.0])
    z = normalization_constants(100, r)
    assert z.Z_KE.shape == (3,)
    assert z.Z_KE[1] == pytest.approx(5.0)


@pytest.mark.parametrize("r", [1.0, 0.5, np.array([3.0, 1.0])])
def test_normalization_rejects_small_ratio(r):
    with pytest.raises(InvalidInputError):
        normalization_constants(100, r)


@pytest.mark.xfail(strict=True, reason="approximate form is half the exact large-r limit")
def test_approximate_normalization_close_to_exact():
    exact = normalization_constants(100, 11.0).Z_V
    approx = normalization_constants(100, 11.0, approximate=True).Z_V
    assert abs(approx - exact) / exact <= 0.02


def test_approximate_normalization_is_half_asymptotically():
    exact = normalization_constants(10, 1e4).Z_V
    approx = normalization_constants(10, 1e4, approximate=True).Z_V
    assert approx / exact == pytest.approx(0.5, rel=1e-3)


# -- cutoff scaling -----------------------------------------------------------

def test_cutoff_scaling_hand_values():
    s = cutoff_scaling(10_000, np.ones(3), 1e-3)
    assert np.allclose(s.a, 1e-4)
    assert s.r_prime == pytest.approx(10.0)
    assert np.allclose(s.r, 10.0) and s.valid.all()


def test_cutoff_scaling_fixed_r_prime_quarters_R():
    r_prime = 100.0
    R = [r_prime / N for N in (1000, 4000)]
    s1 = cutoff_scaling(1000, np.ones(1), R[0])
    s2 = cutoff_scaling(4000, np.ones(1), R[1])
    assert s1.r_prime == pytest.approx(s2.r_prime)
    assert s2.R == pytest.approx(s1.R / 4)


def test_cutoff_scaling_flags_empty_and_small_ratio():
    s = cutoff_scaling(10, np.array([0.0, 0.05, 1.0]), 1.0)
    assert np.isinf(s.a[0])
    assert list(s.valid) == [False, False, True]
    assert s.excluded == 2


def test_cutoff_scaling_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        cutoff_scaling(10, np.ones(2), 0.0)
    with pytest.raises(InvalidInputError):
        cutoff_scaling(2.5, np.ones(2), 1.0)


# -- fisher functional --------------------------------------------------------

@pytest.mark.parametrize("sigma,expected", [(1.0, 1.0), (2.0, 0.25)])
def test_fisher_of_gaussian(sigma, expected):
    assert fisher_functional(gaussian_field(sigma)) == pytest.approx(expected, abs=1e-3)


def test_fisher_of_uniform_is_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert fisher_functional(uniform_field()) == pytest.approx(0.0, abs=1e-12)


def test_fisher_warns_on_truncated_support():
    z = np.linspace(-1.0, 1.0, 401)
    with pytest.warns(RuntimeWarning, match="grid ends"):
        fisher_functional(ContinuumField.from_values(z, np.exp(-z**2 / 2)))


@given(shift=st.floats(-3.0, 3.0))
def test_fisher_translation_invariant(shift):
    base = fisher_functional(gaussian_field(1.0, 0.0, width=14.0))
    moved = fisher_functional(ContinuumField.from_values(
        np.linspace(-7.0, 7.0, 4001) + shift,
        np.exp(-0.5 * (np.linspace(-7.0, 7.0, 4001)) ** 2)))
    assert moved == pytest.approx(base, rel=1e-6)


@given(lam=st.floats(0.5, 3.0))
def test_fisher_dilation_scales_as_inverse_square(lam):
    # sampling the dilated density on the dilated grid keeps discretization identical
    u = np.linspace(-8.0, 8.0, 4001)
    base = fisher_functional(ContinuumField.from_values(u, np.exp(-0.5 * u**2)))
    dilated = fisher_functional(ContinuumField.from_values(lam * u, np.exp(-0.5 * u**2)))
    assert dilated * lam**2 == pytest.approx(base, rel=1e-6)


def test_fisher_error_estimate_falls_fourfold_when_grid_halves():
    # sech^2 keeps the second-order term alive (it cancels for a Gaussian)
    errs = []
    for n in (481, 961, 1921):
        value, err = fisher_functional(sech2_field(n), return_error=True)
        assert abs(value - 4 / 3) < 2 * err
        errs.append(err)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_field_validation():
    z = np.linspace(0, 1, 11)
    ContinuumField(z, np.ones(11))
    with pytest.raises(InvalidInputError):
        ContinuumField(z, 2 * np.ones(11))
    with pytest.raises(InvalidInputError):
        ContinuumField.from_values(z**2, np.ones(11))
    with pytest.raises(InvalidInputError):
        ContinuumField(z, -np.ones(11))


def test_field_from_samples_recovers_gaussian():
    x = np.random.default_rng(3).normal(size=20_000)
    f = ContinuumField.from_samples(x, n_points=2001)
    assert float(np.max(np.abs(f.rho - GAUSS.pdf(f.z)))) < 0.02


# -- continuum variety --------------------------------------------------------

def test_continuum_variety_uniform():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cv = continuum_variety(uniform_field(), cutoff_scaling(100, np.ones(1), 0.5))
    assert cv.horizon_term == pytest.approx(4.0)
    assert cv.fisher_term == pytest.approx(0.0, abs=1e-12)
    assert cv.correction_term == pytest.approx(0.0, abs=1e-8)


def test_continuum_variety_gaussian():
    f = gaussian_field()
    cv = continuum_variety(f, cutoff_scaling(10_000, np.ones(1), 10.0))
    assert cv.fisher_term == pytest.approx(-1.0, abs=1e-3)
    assert cv.fisher_term == -fisher_functional(f)
    assert cv.horizon_term == pytest.approx(0.01)
    assert cv.correction_term > 0
    # (rho'')^2/rho integrates to E[(x^2-1)^2] = 2; r'^2/N^2 = R^2 = 100
    assert laplacian_term(f) == pytest.approx(2.0, rel=1e-3)
    assert cv.correction_term == pytest.approx(100 / 3 * 2.0, rel=1e-3)


def test_continuum_correction_term_quarters_when_N_doubles():
    f = gaussian_field()
    a = continuum_variety(f, cutoff_scaling(1000, np.ones(1), 1.0)).correction_term
    b = continuum_variety(f, cutoff_scaling(2000, np.ones(1), 0.5)).correction_term
    assert b == pytest.approx(a / 4, rel=1e-12)


# -- nearest-neighbour density ------------------------------------------------

def line_state(x):
    return EnsembleState.from_positions(np.asarray(x, float)[:, None])


def test_nn_density_equal_spacing():
    N = 50
    rho = nn_density(line_state(np.arange(N) / N))
    assert np.allclose(rho, 1.0)


def test_nn_density_two_points():
    g = 0.4
    assert np.allclose(nn_density(line_state([1.0, 1.0 + g])), 1 / (2 * g))


def test_nn_density_keeps_input_order():
    x = np.array([3.0, 0.0, 1.0, 2.5])
    rho = nn_density(line_state(x))
    order = np.argsort(x)
    assert np.allclose(nn_density(line_state(x[order])), rho[order])


def interior_accuracy(seed=1, N=10_000, tol=0.15):
    state = sample_ensemble(GAUSS, N, seed)
    x = state.positions[:, 0]
    ratio = nn_density(state) / GAUSS.pdf(x)
    inner = np.abs(x) < 2.0
    return float(np.mean(np.abs(ratio[inner] - 1.0) < tol))


def test_nn_density_accuracy_matches_gamma_oracle():
    # the mean of two neighbouring gaps in local units is Gamma(2, scale 1/2)
    g = gamma_dist(a=2.0, scale=0.5)
    theory = g.cdf(1 / 0.85) - g.cdf(1 / 1.15)
    assert interior_accuracy() == pytest.approx(theory, abs=0.02)


@pytest.mark.xfail(strict=True, reason="gap statistics cap the 15% fraction near 0.16")
def test_nn_density_within_15_percent_for_90_percent():
    assert interior_accuracy() >= 0.9


# -- correction potential -----------------------------------------------------

def symbolic_bracket():
    x = sp.symbols("x")
    rho = sp.exp(-x**2 / 2) / sp.sqrt(2 * sp.pi)
    d = [sp.diff(rho, x, k) for k in range(5)]
    expr = d[4] / rho - 2 * (d[2] / rho) ** 2 - 2 * d[1] * d[3] / rho**2
    return sp.lambdify(x, sp.simplify(expr), "numpy")


def test_correction_matches_symbolic_oracle():
    f = gaussian_field(n=1001)
    field = correction_potential(f, 100, 1.0)
    expected = (1.0 / 100**2) * (1 / 3) * 0.5 * symbolic_bracket()(f.z)
    inner = np.abs(f.z) <= 2.0
    scale = np.max(np.abs(expected[inner]))
    assert np.max(np.abs(field[inner] - expected[inner])) / scale < 1e-6


def test_correction_uniform_is_zero():
    field = correction_potential(uniform_field(), 100, 1.0)
    assert np.allclose(field[np.isfinite(field)], 0.0, atol=1e-8)


def test_correction_prefactor_scaling():
    f = gaussian_field(n=1001)
    a = correction_potential(f, 100, 1.0)
    b = correction_potential(f, 400, 1.0)
    ok = np.isfinite(a)
    assert np.allclose(b[ok], a[ok] / 16, rtol=1e-12)
    assert np.allclose(correction_potential(f, 200, 1.0)[ok], a[ok] / 4, rtol=1e-12)


@pytest.mark.xfail(strict=True, reason="the N^-2 prefactor gives 1/16 for 4N at d=1")
def test_correction_quarters_when_N_quadruples():
    f = gaussian_field(n=1001)
    a = correction_potential(f, 100, 1.0)
    b = correction_potential(f, 400, 1.0)
    ok = np.isfinite(a)
    assert np.allclose(b[ok], a[ok] / 4, rtol=1e-12)


def test_correction_masks_edges_and_low_density():
    field = correction_potential(gaussian_field(n=1001, width=20.0), 100, 1.0)
    assert np.isnan(field[:2]).all() and np.isnan(field[-2:]).all()
    assert np.isnan(field).sum() > 4


def test_correction_rejects_coarse_grid():
    with pytest.raises(ResolutionError):
        correction_potential(sech2_field(41), 100, 1.0)


def test_correction_second_order_convergence():
    fields = [sech2_field(n) for n in (481, 961, 1921)]
    values = []
    for f in fields:
        bracket = correction_potential(f, 1, 1.0, check_resolution=False)
        values.append(bracket[np.searchsorted(f.z, [-1.0, 0.5, 2.0])])
    ratio = np.abs(values[0] - values[1]) / np.abs(values[1] - values[2])
    assert np.allclose(ratio, 4.0, rtol=0.05)


# -- energy shift -------------------------------------------------------------

def test_energy_shift_of_zero_field_is_zero():
    f = gaussian_field(n=801)
    assert energy_shift(f, np.zeros_like(f.rho)) == 0.0


def test_energy_shift_rejects_complex_and_mismatched():
    f = gaussian_field(n=801)
    with pytest.raises(InvalidInputError):
        energy_shift(f, np.zeros(f.rho.shape, complex))
    with pytest.raises(InvalidInputError):
        energy_shift(f, np.zeros(10))


def test_energy_shift_is_real_and_negative_for_gaussian():
    f = gaussian_field(n=801)
    shift = energy_shift(f, correction_potential(f, 100, 1.0))
    assert isinstance(shift, float)
    # bracket 1 + 4x^2 - 3x^4 averages to -4 under the unit Gaussian
    assert shift == pytest.approx(-4.0 / 6.0 / 100**2, rel=1e-3)


def test_energy_shift_scaling_slope():
    s = energy_shift_scaling(gaussian_field(n=801), [100, 1000, 10_000], 1.0)
    assert s.slope == pytest.approx(-2.0, abs=0.1)


# -- discrete against continuum -----------------------------------------------

def test_sweep_rejects_unsorted_N_and_missing_seeds():
    with pytest.raises(InvalidInputError):
        discrete_vs_continuum(GAUSS, [1000, 250], [0])
    with pytest.raises(InvalidInputError):
        discrete_vs_continuum(GAUSS, [250], [])


def test_sweep_rows_carry_seed_and_columns(tmp_path):
    table = discrete_vs_continuum(GAUSS, [250, 500], [0, 1])
    assert [(r["N"], r["seed"]) for r in table.rows] == [(250, 0), (250, 1), (500, 0), (500, 1)]
    path = tmp_path / "t.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    assert lines[1].startswith("N,seed,R,r_prime")
    assert len(lines) == 6


@pytest.mark.xfail(strict=True, reason="normalized discrete variety minus 1/R^2 sits near -1/R^2")
def test_uniform_sweep_consistent_with_zero():
    table = discrete_vs_continuum(DensitySpec.uniform(0.0, 1.0), [1000], range(10))
    values = table.column("discrete_value")
    assert abs(np.median(values)) <= 3 * np.std(values) / math.sqrt(len(values))


def test_median_over_seeds_beats_single_seed():
    pool = discrete_vs_continuum(GAUSS, [1000], range(210)).column("rel_discrepancy")
    single = pool[200:]
    wins = sum(np.median(pool[20 * k:20 * k + 20]) <= single[k] for k in range(10))
    assert wins >= 5


# -- kinetic energy -----------------------------------------------------------

def test_ke_target_linear_action():
    assert ke_target(GAUSS, ActionField("linear", 0.3)) == pytest.approx(0.045, rel=1e-6)


def test_ke_target_sine_action():
    # E[cos^2 x] under the unit Gaussian is (1 + e^-2)/2
    expected = 0.5 * (1 + math.exp(-2)) / 2
    assert ke_target(GAUSS, ActionField("sine")) == pytest.approx(expected, rel=1e-5)


def test_ke_constant_action_both_sides_zero():
    table = ke_continuum_check(GAUSS, ActionField("constant"), [250], [0, 1])
    assert np.all(table.column("discrete_value") == 0.0)
    assert np.all(table.column("continuum_value") == 0.0)


@pytest.mark.parametrize("kind", ["linear", "sine"])
def test_ke_discrepancy_decreases(kind):
    table = ke_continuum_check(GAUSS, ActionField(kind, 0.3), [250, 1000, 4000], range(20))
    assert table.is_decreasing()


def test_ke_respects_constants():
    consts = PhysicalConstants(hbar=1.0, mass=2.0)
    assert ke_target(GAUSS, ActionField("linear", 0.3), consts) == pytest.approx(0.0225, rel=1e-6)
