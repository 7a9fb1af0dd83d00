import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fisherrao.errors import DomainError
from fisherrao.expectation import (ExpectationEngine, MomentTable, bartlett_residuals, default_engine, kl_divergence,
                                   metric_derivative, moment_table, third_moment_identity_residual)
from fisherrao.models import (Bernoulli, CauchyLocation, CurvedGaussianEfron, DegenerateSumGaussian, GaussianMean,
                              GraphSurfaceGaussian, Poisson, builtin_models)

REGULAR = [m for m in builtin_models() if not isinstance(m, DegenerateSumGaussian)]


def test_gaussian_mean_table_is_the_standard_normal_moments():
    t = moment_table(GaussianMean(1), [0.7])
    assert t.g[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert np.abs(t.T).max() < 1e-12 and np.abs(t.Ge).max() < 1e-12 and np.abs(t.kappa).max() < 1e-12
    assert t.Q[0, 0, 0, 0] == pytest.approx(1.0, abs=1e-12)
    assert t.M[0, 0, 0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert t.F[0, 0, 0, 0] == pytest.approx(3.0, abs=1e-12)


def test_efron_table_at_origin():
    # s1 = x1, s11 = 2 x2 - 1, s111 = 0 with x ~ N(0, I)
    t = moment_table(CurvedGaussianEfron(), [0.0])
    assert t.g[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert t.Q[0, 0, 0, 0] == pytest.approx(5.0, abs=1e-12)
    assert t.M[0, 0, 0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert t.F[0, 0, 0, 0] == pytest.approx(3.0, abs=1e-12)
    assert abs(t.kappa[0, 0, 0]) < 1e-12


@pytest.mark.parametrize("theta", [-1.0, 0.3, 1.7])
def test_efron_metric_closed_form(theta):
    assert moment_table(CurvedGaussianEfron(), [theta]).g[0, 0] == pytest.approx(1 + 4 * theta**2, rel=1e-12)


def test_graph_surface_metric_closed_form():
    th = np.array([0.4, -1.1])
    assert np.allclose(moment_table(GraphSurfaceGaussian(), th).g, np.eye(2) + np.outer(th, th), atol=1e-12)


@pytest.mark.parametrize("theta", [0.5, 2.0, 12.0])
def test_poisson_table_matches_scipy_sums(theta):
    t = moment_table(Poisson(), [theta])
    dist = stats.poisson(theta)
    s = lambda x: x / theta - 1  # noqa: E731
    assert t.g[0, 0] == pytest.approx(1 / theta, rel=1e-10)
    assert t.T[0, 0, 0] == pytest.approx(1 / theta**2, rel=1e-10)
    assert t.Ge[0, 0, 0] == pytest.approx(-1 / theta**2, rel=1e-10)
    assert t.kappa[0, 0, 0] == pytest.approx(2 / theta**2, rel=1e-10)
    assert t.F[0, 0, 0, 0] == pytest.approx(dist.expect(lambda x: s(x) ** 4), rel=1e-8)
    assert t.Q[0, 0, 0, 0] == pytest.approx(dist.expect(lambda x: (x / theta**2) ** 2), rel=1e-8)


@pytest.mark.parametrize("theta", [0.1, 0.5, 0.8])
def test_bernoulli_metric(theta):
    assert moment_table(Bernoulli(), [theta]).g[0, 0] == pytest.approx(1 / (theta * (1 - theta)), rel=1e-12)


def test_cauchy_moments_against_beta_integrals():
    # g = 4 B(3/2,3/2)/pi = 1/2 ; E[s^4] = 16 B(5/2,5/2)/pi = 3/8
    t = moment_table(CauchyLocation(), [0.4])
    assert t.g[0, 0] == pytest.approx(0.5, abs=1e-8)
    assert t.F[0, 0, 0, 0] == pytest.approx(3 / 8, abs=1e-8)
    assert abs(t.T[0, 0, 0]) < 1e-8


def test_monte_carlo_engine_agrees_within_its_error():
    m = CurvedGaussianEfron()
    gh = moment_table(m, [0.4])
    mc = moment_table(m, [0.4], ExpectationEngine.monte_carlo(samples=200_000, seed=1))
    assert abs(mc.g[0, 0] - gh.g[0, 0]) < 5 * np.max(mc.errors["g"]) + 1e-12
    assert abs(mc.Q[0, 0, 0, 0] - gh.Q[0, 0, 0, 0]) < 5 * np.max(mc.errors["Q"])


@pytest.mark.parametrize("model", REGULAR, ids=lambda m: f"{m.name}-{m.dim}")
def test_bartlett_and_third_moment_identities(model):
    for theta in model.grid():
        t = moment_table(model, theta)
        assert bartlett_residuals(t).max_abs <= 1e-8
        assert np.abs(third_moment_identity_residual(t)).max() <= 1e-8


def test_metric_derivative_matches_finite_difference():
    m = GraphSurfaceGaussian()
    th = np.array([0.3, 0.8])
    dg = metric_derivative(moment_table(m, th))
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (moment_table(m, th + e).g - moment_table(m, th - e).g) / (2 * h)
        assert np.allclose(dg[k], fd, atol=1e-8)


def test_default_engine_follows_weight_hint():
    assert default_engine(GaussianMean(2)).method == "gauss-hermite"
    assert default_engine(Poisson()).method == "discrete-sum"
    assert default_engine(CauchyLocation()).method == "adaptive-grid"


def test_incompatible_engine_rejected():
    with pytest.raises(ValueError):
        moment_table(Poisson(), [1.0], ExpectationEngine.gauss_hermite())


def test_outside_regular_domain_raises():
    with pytest.raises(DomainError):
        moment_table(Poisson(), [-1.0])
    with pytest.raises(DomainError):
        moment_table(DegenerateSumGaussian(), [0.0, 0.0])
    # the singular model is still integrable on request
    t = moment_table(DegenerateSumGaussian(), [0.0, 0.0], require_regular=False)
    assert np.allclose(t.g, 2 * np.ones((2, 2)), atol=1e-12)


def test_table_json_round_trip():
    t = moment_table(GraphSurfaceGaussian(), [0.2, 0.1])
    back = MomentTable.from_json(t.to_json())
    for name in ("g", "T", "Ge", "kappa", "Q", "M", "F", "score_mean", "hess_mean"):
        assert np.array_equal(getattr(back, name), getattr(t, name))
    assert back.err == t.err


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_table_symmetries_are_exact(a, b):
    t = moment_table(GraphSurfaceGaussian(), [a, b])
    assert np.array_equal(t.g, t.g.T)
    assert np.array_equal(t.T, np.transpose(t.T, (1, 0, 2))) and np.array_equal(t.T, np.transpose(t.T, (2, 1, 0)))
    assert np.array_equal(t.Ge, np.transpose(t.Ge, (1, 0, 2)))
    assert np.array_equal(t.Q, np.transpose(t.Q, (2, 3, 0, 1)))
    assert np.array_equal(t.F, np.transpose(t.F, (3, 1, 2, 0)))


@given(st.floats(0.2, 8.0), st.floats(-0.05, 0.05))
def test_kl_is_locally_half_fisher_quadratic(theta, delta):
    m = Poisson()
    kl = kl_divergence(m, [theta], [theta + delta])
    quad = 0.5 * delta**2 / theta
    assert kl == pytest.approx(quad, abs=2 * abs(delta) ** 3 / theta**2 + 1e-13)


def test_kl_gaussian_closed_form():
    assert kl_divergence(GaussianMean(2), [0, 0], [1.0, -2.0]) == pytest.approx(2.5, abs=1e-12)
