import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fisherrao.errors import DerivativeEvaluationError, SamplingError
from fisherrao.models import (REGISTRY, Bernoulli, CauchyLocation, CurvedGaussianEfron, DegenerateSumGaussian,
                              GaussianMean, GraphSurfaceGaussian, ParametricModel, Poisson, QuadraticReparam,
                              SampleSpace, builtin_models, check_derivatives, get_model, sample_batch)

REGULAR = [m for m in builtin_models() if not isinstance(m, DegenerateSumGaussian)]


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: f"{m.name}-{m.dim}")
def test_analytic_scores_match_finite_differences(model):
    for theta in model.grid()[:3] or [np.zeros(model.dim)]:
        res = check_derivatives(model, theta, trials=30)
        assert not res.failed, res.max_error


def test_efron_scores_closed_form():
    m = CurvedGaussianEfron()
    x = np.array([0.3, -1.2])
    th = np.array([0.5])
    # mean (t, t^2): s1 = r1 + 2t r2, s11 = 2 r2 - 1 - 4t^2, s111 = d/dt s11 = -12t
    t = 0.5
    r1, r2 = x[0] - t, x[1] - t * t
    assert m.score1(x, th)[0] == pytest.approx(r1 + 2 * t * r2)
    assert m.score2(x, th)[0, 0] == pytest.approx(2 * r2 - 1 - 4 * t * t)
    assert m.score3(x, th)[0, 0, 0] == pytest.approx(-12 * t)


def test_score_tensors_exactly_symmetric():
    m = GraphSurfaceGaussian()
    rng = np.random.default_rng(0)
    x = m.sample(np.array([0.4, -0.3]), 50, rng)
    s2 = m.score2(x, np.array([0.4, -0.3]))
    s3 = m.score3(x, np.array([0.4, -0.3]))
    assert np.array_equal(s2, np.swapaxes(s2, -1, -2))
    for axes in [(0, 2, 1, 3), (0, 3, 2, 1), (0, 1, 3, 2)]:
        assert np.array_equal(s3, np.transpose(s3, axes))


def test_vectorised_evaluation_broadcasts_theta():
    m = Poisson()
    x = np.array([[0.0, 1.0, 4.0], [2.0, 2.0, 2.0]])
    th = np.array([[1.5], [3.0]])[:, None, :]
    out = m.score1(x, th)
    assert out.shape == (2, 3, 1)
    assert out[1, 0, 0] == pytest.approx(2.0 / 3.0 - 1.0)


def test_derivative_check_reports_nonfinite_scores():
    m = Bernoulli()
    # evaluation at the boundary produces inf; the check must name the offender
    with np.errstate(all="ignore"), pytest.raises(DerivativeEvaluationError) as info:
        check_derivatives(m, [0.0], trials=5)
    assert info.value.theta is not None


def test_sample_space_validation():
    with pytest.raises(ValueError):
        SampleSpace("real-line", "discrete")
    with pytest.raises(ValueError):
        SampleSpace("nonneg-integers", "gaussian")
    assert SampleSpace("real-vector", "gaussian", 3).event_shape == (3,)


def test_registry_round_trip():
    assert set(REGISTRY) == {"gaussian-mean", "poisson", "bernoulli", "curved-gaussian-efron",
                             "graph-surface-gaussian", "cauchy-location", "degenerate-sum-gaussian"}
    assert get_model("gaussian-mean", dim=3).dim == 3
    with pytest.raises(KeyError):
        get_model("no-such-model")


def test_degenerate_model_has_empty_regular_domain():
    m = DegenerateSumGaussian()
    assert not any(m.regular_domain(np.array(t)) for t in ([0.0, 0.0], [1.0, -2.0], [5.0, 5.0]))
    assert not m.regular_mask(np.zeros((4, 2))).any()


@given(st.lists(st.floats(-2.0, 3.0, allow_nan=False), min_size=1, max_size=20))
def test_regular_mask_agrees_with_regular_domain(vals):
    pts = np.array(vals)[:, None]
    for m in (Poisson(), Bernoulli(), CauchyLocation()):
        assert m.regular_mask(pts).tolist() == [m.regular_domain(p) for p in pts]


def test_sample_batch_shapes_and_determinism():
    m = GaussianMean(2)
    a = sample_batch(m, [0.0, 1.0], 7, np.random.default_rng(3))
    b = sample_batch(m, [0.0, 1.0], 7, np.random.default_rng(3))
    assert a.shape == (7, 2) and np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_batch(m, [0.0, 1.0], 0, np.random.default_rng(0))


def test_sampler_failure_surfaces_as_sampling_error():
    class Broken(Poisson):
        def sample(self, theta, n, rng):
            return np.full(n, np.nan)

    with pytest.raises(SamplingError):
        sample_batch(Broken(), [1.0], 3, np.random.default_rng(0))


@pytest.mark.parametrize("base,theta0", [(Poisson(), [2.0]), (GraphSurfaceGaussian(), [0.2, -0.4])],
                         ids=["poisson", "graph"])
def test_quadratic_reparam_scores_match_finite_differences(base, theta0):
    rng = np.random.default_rng(5)
    d = base.dim
    B = np.eye(d) + 0.2 * rng.standard_normal((d, d))
    C = 0.2 * rng.standard_normal((d, d, d))
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    rp = QuadraticReparam(base, theta0, B, C, u0=0.1 * np.ones(d))
    assert np.allclose(rp.to_base(rp.u0), theta0)
    res = check_derivatives(rp, rp.u0 + 0.01, trials=20)
    assert not res.failed, res.max_error


def test_every_model_implements_interface():
    for m in REGULAR:
        assert isinstance(m, ParametricModel)
        assert len(m.grid()) >= 5
        assert all(m.regular_domain(t) for t in m.grid())
