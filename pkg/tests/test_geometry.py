import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fisherrao.errors import DomainError, SingularFisher
from fisherrao.expectation import moment_table
from fisherrao.geometry import (christoffel, christoffel_from_table, covariant_hessian, fd_step, geometry_snapshot,
                                metric, riemann, riemann_symmetry_residuals)
from fisherrao.models import (Bernoulli, CauchyLocation, CurvedGaussianEfron, DegenerateSumGaussian, GaussianMean,
                              GraphSurfaceGaussian, Poisson)


def graph_christoffel_low(th):
    # g = I + th th^T  =>  Gamma_{ij,k} = th_k delta_ij
    return np.einsum("ij,k->ijk", np.eye(len(th)), th)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_graph_surface_connection_closed_form(a, b):
    th = np.array([a, b])
    gamma, low = christoffel(GraphSurfaceGaussian(), th)
    assert np.allclose(low, graph_christoffel_low(th), atol=1e-10)
    g = np.eye(2) + np.outer(th, th)
    assert np.allclose(gamma, np.einsum("km,ijm->kij", np.linalg.inv(g), low), atol=1e-10)


@pytest.mark.parametrize("theta", [0.5, 1.0, 4.0])
def test_poisson_christoffel(theta):
    gamma, _ = christoffel(Poisson(), [theta])
    assert gamma[0, 0, 0] == pytest.approx(-0.5 / theta, rel=1e-10)


@pytest.mark.parametrize("th", [[0.0, 0.0], [0.3, -0.2], [1.0, 0.5]])
def test_graph_surface_curvature_is_gaussian_curvature_times_det(th):
    th = np.array(th)
    R, Rs = riemann(GraphSurfaceGaussian(), th)
    g = np.eye(2) + np.outer(th, th)
    K = 1.0 / (1.0 + th @ th) ** 2
    assert R[0, 1, 0, 1] == pytest.approx(K * np.linalg.det(g), abs=1e-6)
    # two-dimensional Ricci: R#_ij = K g_ij
    assert np.allclose(Rs, K * g, atol=1e-6)


def test_graph_surface_origin():
    R, _ = riemann(GraphSurfaceGaussian(), [0.0, 0.0])
    assert R[0, 1, 0, 1] == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("model,theta", [(GaussianMean(2), [0.1, -0.3]), (GaussianMean(3), [0.2, 0.0, 1.0])])
def test_flat_models_have_zero_curvature(model, theta):
    R, Rs = riemann(model, theta)
    assert np.abs(R).max() < 1e-8 and np.abs(Rs).max() < 1e-8


@pytest.mark.parametrize("model,theta", [(Poisson(), [2.0]), (CurvedGaussianEfron(), [0.7]),
                                         (CauchyLocation(), [0.0]), (Bernoulli(), [0.3])])
def test_one_dimensional_curvature_vanishes_exactly(model, theta):
    R, Rs = riemann(model, theta)
    assert np.all(R == 0.0) and np.all(Rs == 0.0)


def test_riemann_algebraic_symmetries():
    snap = geometry_snapshot(GraphSurfaceGaussian(), [0.4, 0.9])
    res = snap.symmetry_residuals()
    assert max(res.values()) < 1e-6
    assert max(riemann_symmetry_residuals(snap.Riem).values()) < 1e-6


def test_singular_fisher_detected():
    t = moment_table(DegenerateSumGaussian(), [0.0, 0.0], require_regular=False)
    with pytest.raises(SingularFisher) as info:
        metric(t)
    assert info.value.min_eig < 1e-8
    with pytest.raises(SingularFisher):
        christoffel_from_table(t)


def test_finite_difference_leaving_domain_raises():
    with pytest.raises(DomainError):
        geometry_snapshot(Bernoulli(), [1e-7])


def test_fd_step_scales_with_theta():
    eps3 = np.finfo(float).eps ** (1 / 3)
    assert fd_step([0.1]) == pytest.approx(eps3)
    assert fd_step([30.0, 40.0]) == pytest.approx(50 * eps3)


def test_covariant_hessian():
    Gamma = np.zeros((2, 2, 2))
    Gamma[0, 0, 1] = Gamma[0, 1, 0] = 2.0
    out = covariant_hessian(np.eye(2), np.array([1.0, 3.0]), Gamma)
    assert np.allclose(out, [[1.0, -2.0], [-2.0, 1.0]])
    with pytest.raises(ValueError):
        covariant_hessian(np.eye(3), np.ones(2), Gamma)


def test_snapshot_json_contains_all_tensors():
    snap = geometry_snapshot(CurvedGaussianEfron(), [0.2])
    doc = snap.to_dict()
    for key in ("g", "g_inv", "Gamma", "Gamma_low", "Riem", "Rsharp", "fd_step", "symmetry_residuals"):
        assert key in doc
