import numpy as np
import pytest
from scipy import integrate, stats

from conclab import measures


def test_make_gaussian_potential_is_quadratic():
    m = measures.make_gaussian(1)
    pot = m.potentials[0]
    x = np.linspace(-3, 3, 7)
    assert np.allclose(pot.value(x), x * x / 2)
    assert np.allclose(pot.second_derivative(x), 1.0)
    assert pot.kappa_i == -1.0
    assert m.kappa == -1.0 and m.rho == 1.0 and m.lam == 1.0


def test_make_gaussian_rejects_zero_dimension():
    with pytest.raises(measures.MeasureConstructionError):
        measures.make_gaussian(0)


def test_gaussian_sample_moments():
    m = measures.make_gaussian(3)
    pts = measures.sample(m, 1_000_000, seed=11).points
    assert np.all(np.abs(pts.mean(axis=0)) < 4.0 / np.sqrt(1e6))


def test_gaussian_empirical_covariance_near_identity():
    m = measures.make_gaussian(2)
    pts = measures.sample(m, 1_000_000, seed=5).points
    cov = np.cov(pts.T)
    assert np.all(np.abs(cov - np.eye(2)) < 0.01)


def test_sample_reproducibility_bitwise():
    m = measures.make_gaussian(1)
    a = measures.sample(m, 10, seed=7).points
    b = measures.sample(m, 10, seed=7).points
    assert np.array_equal(a, b)


def test_sample_per_coordinate_variance_band():
    m = measures.make_gaussian(2)
    pts = measures.sample(m, 1_000_000, seed=3).points
    v = pts.var(axis=0)
    assert np.all(v > 0.99) and np.all(v < 1.01)


def test_double_well_curvature_constant():
    pot = measures.double_well_potential(1.0, 1.0)
    # min V'' = min(12 x^2 - 2) = -2, attained at x = 0
    assert pot.kappa_i == 2.0
    grid = pot.probe_grid()
    assert float(pot.second_derivative(grid).min()) >= -pot.kappa_i - 1e-9


def test_quartic_potential_kappa_zero():
    pot = measures.double_well_potential(1.0, 0.0)
    assert pot.kappa_i == 0.0
    grid = pot.probe_grid()
    assert float(pot.second_derivative(grid).min()) >= -1e-9


def test_potential_curvature_probe_rejects_wrong_kappa():
    with pytest.raises(measures.MeasureConstructionError):
        measures.Potential1D(
            value=lambda x: x**4 - x**2,
            first_derivative=lambda x: 4 * x**3 - 2 * x,
            second_derivative=lambda x: 12 * x**2 - 2,
            kappa_i=1.0,  # true floor is -2, so this is too optimistic
        )


def test_non_finite_potential_rejected():
    with pytest.raises(measures.MeasureConstructionError):
        measures.Potential1D(
            value=lambda x: np.log(x),  # -inf at the grid's negative values
            first_derivative=lambda x: 1 / x,
            second_derivative=lambda x: -1 / x**2 + 10,
            kappa_i=10.0,
        )


def test_rho_must_not_exceed_lambda():
    pot = measures.gaussian_potential()
    with pytest.raises(measures.MeasureConstructionError):
        measures.ProductMeasure(
            dimension=1, potentials=(pot,), kappa=-1.0,
            rho=2.0, lam=1.0, family_tag="general_smooth",
        )


def test_mala_matches_quadrature_variance():
    m = measures.make_double_well(1, 1.0, 1.0)
    pts = measures.sample(m, 100_000, seed=21).points
    z = integrate.quad(lambda t: np.exp(-(t**4 - t**2)), -10, 10)[0]
    true_var = integrate.quad(
        lambda t: t * t * np.exp(-(t**4 - t**2)), -10, 10)[0] / z
    assert abs(pts.var() - true_var) < 0.01


def test_mala_double_well_symmetric_mean():
    m = measures.make_double_well(1, 1.0, 1.0)
    pts = measures.sample(m, 100_000, seed=13).points[:, 0]
    se = pts.std() / np.sqrt(pts.size)
    # correlated draws widen the effective SE; stay generous
    assert abs(pts.mean()) < 10 * se


def test_mala_gaussian_consistency_two_sample_ks():
    gen = measures.make_general((measures.gaussian_potential(),), rho=1.0, lam=1.0)
    mala = measures.sample(gen, 100_000, seed=1).points[:, 0]
    exact = measures.sample(measures.make_gaussian(1), 100_000, seed=2).points[:, 0]
    d = stats.ks_2samp(mala, exact).statistic
    crit_1pct = 1.628 * np.sqrt(2.0 / 100_000)
    assert d < crit_1pct


def test_mala_batch_flags_mcmc_and_diagnostics():
    m = measures.make_double_well(2, 1.0, 1.0)
    batch = measures.sample(m, 5_000, seed=9)
    assert batch.mcmc
    assert 0.35 < batch.diagnostics["acceptance"] < 0.8
    rhat = batch.diagnostics["rhat"]
    assert rhat is None or rhat < 1.05


def test_make_general_rejects_half_line():
    with pytest.raises(measures.MeasureConstructionError):
        measures.make_general((measures.exponential_potential(),), rho=0.5)


def test_exponential_moments():
    m = measures.make_exponential(1)
    pts = measures.sample(m, 1_000_000, seed=17).points[:, 0]
    assert abs(pts.mean() - 1.0) < 0.005
    assert abs(pts.var() - 1.0) < 0.01


def test_exponential_joint_survival():
    m = measures.make_exponential(2)
    pts = measures.sample(m, 1_000_000, seed=19).points
    p = np.mean((pts[:, 0] > 1) & (pts[:, 1] > 1))
    se = np.sqrt(p * (1 - p) / pts.shape[0])
    assert abs(p - np.exp(-2.0)) < 4 * se


def test_exponential_support_and_kappa():
    m = measures.make_exponential(3)
    pts = measures.sample(m, 10_000, seed=23).points
    assert m.in_support(pts)
    assert np.all(pts >= 0)
    assert m.kappa == -1.0  # sqrt(x) d_i commutation constant
    assert np.isinf(m.potentials[0].value(np.array([-0.5]))[0])


def test_sample_batch_is_read_only():
    m = measures.make_gaussian(1)
    batch = measures.sample(m, 10, seed=1)
    with pytest.raises(ValueError):
        batch.points[0, 0] = 0.0
