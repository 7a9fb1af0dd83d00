"""Parametric models with analytic score tensors up to third order.

Every model evaluates vectorised over sample points: ``x`` has shape
``batch + event_shape`` and ``theta`` has shape ``batch_theta + (d,)`` with the
two batch shapes broadcast against each other.  Score tensors come back with
the parameter indices as trailing axes, e.g. ``score3`` has shape
``batch + (d, d, d)``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from ._tensor import _canonicalize
from .errors import DerivativeEvaluationError, SamplingError

KINDS = ("real-line", "nonneg-integers", "finite-set", "real-vector")
WEIGHT_HINTS = ("gaussian", "heavy-tailed", "discrete")


@dataclass(frozen=True)
class SampleSpace:
    kind: str
    weight_hint: str
    dim: int = 1  # event dimension m for real-vector spaces

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sample-space kind {self.kind!r}")
        if self.weight_hint not in WEIGHT_HINTS:
            raise ValueError(f"unknown weight hint {self.weight_hint!r}")
        discrete_kind = self.kind in ("finite-set", "nonneg-integers")
        if discrete_kind != (self.weight_hint == "discrete"):
            raise ValueError("weight_hint 'discrete' must go with a discrete sample space")

    @property
    def event_shape(self) -> tuple[int, ...]:
        return (self.dim,) if self.kind == "real-vector" else ()


class ParametricModel(ABC):
    """Interface every model implements.

    Subclasses provide ``_score2``/``_score3``; the public wrappers enforce
    exact (bitwise) index symmetry of the returned tensors.
    """

    name: str = "model"
    dim: int
    space: SampleSpace

    @abstractmethod
    def logp(self, x, theta) -> np.ndarray: ...

    @abstractmethod
    def score1(self, x, theta) -> np.ndarray: ...

    @abstractmethod
    def _score2(self, x, theta) -> np.ndarray: ...

    @abstractmethod
    def _score3(self, x, theta) -> np.ndarray: ...

    @abstractmethod
    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def regular_domain(self, theta) -> bool:
        return True

    def regular_mask(self, thetas) -> np.ndarray:
        """Vectorised ``regular_domain`` over the leading axis of ``thetas``."""
        thetas = _theta(thetas).reshape(-1, self.dim)
        if type(self).regular_domain is ParametricModel.regular_domain:
            return np.ones(len(thetas), dtype=bool)
        return np.array([self.regular_domain(t) for t in thetas], dtype=bool)

    def params(self) -> dict:
        """Constructor arguments, used to rebuild the model from the registry."""
        return {}

    def score2(self, x, theta) -> np.ndarray:
        s = self._score2(x, theta)
        n = s.ndim
        return _canonicalize(s, (n - 2, n - 1))

    def score3(self, x, theta) -> np.ndarray:
        s = self._score3(x, theta)
        n = s.ndim
        return _canonicalize(s, (n - 3, n - 2, n - 1))

    def scores(self, x, theta):
        return self.score1(x, theta), self.score2(x, theta), self.score3(x, theta)

    # quadrature hints; engines ask for whichever matches ``space``
    def gaussian_center(self, theta):
        """Mean and Cholesky factor of the Gaussian weight for Gauss-Hermite rules."""
        raise NotImplementedError(f"{self.name} has no Gaussian quadrature weight")

    def location_scale(self, theta) -> tuple[float, float]:
        """Centre and spread used by the tangent substitution on the real line."""
        return 0.0, 1.0

    def support(self, theta, start: int, stop: int) -> np.ndarray:
        """Support points with index in ``[start, stop)`` (discrete models)."""
        raise NotImplementedError

    def support_size(self, theta) -> int | None:
        """Number of support points, or ``None`` when the support is infinite."""
        return None

    def grid(self) -> list[np.ndarray]:
        """A handful of regular parameter points used by sweeps and ``verify``."""
        return []

    def __repr__(self):
        extra = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({extra})"


def _theta(theta) -> np.ndarray:
    return np.asarray(theta, dtype=float)


# ---------------------------------------------------------------------------
# Unit-covariance Gaussian with a smooth mean map mu(theta)
# ---------------------------------------------------------------------------


class CurvedGaussian(ParametricModel):
    """x ~ N(mu(theta), I_m).  Subclasses supply the mean map and its derivatives."""

    m: int

    @abstractmethod
    def mean(self, theta) -> np.ndarray:
        """mu, shape (..., m)."""

    @abstractmethod
    def mean_jac(self, theta) -> np.ndarray:
        """d mu / d theta_i, shape (..., d, m)."""

    @abstractmethod
    def mean_hess(self, theta) -> np.ndarray:
        """shape (..., d, d, m)."""

    @abstractmethod
    def mean_third(self, theta) -> np.ndarray:
        """shape (..., d, d, d, m)."""

    def logp(self, x, theta):
        r = np.asarray(x, dtype=float) - self.mean(_theta(theta))
        return -0.5 * np.sum(r * r, axis=-1) - 0.5 * self.m * math.log(2.0 * math.pi)

    def score1(self, x, theta):
        th = _theta(theta)
        r = np.asarray(x, dtype=float) - self.mean(th)
        return np.einsum("...m,...im->...i", r, self.mean_jac(th))

    def _score2(self, x, theta):
        th = _theta(theta)
        r = np.asarray(x, dtype=float) - self.mean(th)
        J = self.mean_jac(th)
        H = self.mean_hess(th)
        return np.einsum("...m,...ijm->...ij", r, H) - np.einsum("...im,...jm->...ij", J, J)

    def _score3(self, x, theta):
        th = _theta(theta)
        r = np.asarray(x, dtype=float) - self.mean(th)
        J = self.mean_jac(th)
        H = self.mean_hess(th)
        K = self.mean_third(th)
        JH = np.einsum("...km,...ijm->...ijk", J, H)
        cross = JH + np.swapaxes(JH, -1, -2) + np.moveaxis(JH, -1, -3)
        return np.einsum("...m,...ijkm->...ijk", r, K) - cross

    def sample(self, theta, n, rng):
        mu = self.mean(_theta(theta))
        return mu + rng.standard_normal((n, self.m))

    def gaussian_center(self, theta):
        return self.mean(_theta(theta)), np.eye(self.m)


class GaussianMean(CurvedGaussian):
    """N(theta, I_d): the flat full exponential family."""

    def __init__(self, dim: int = 1):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = self.m = int(dim)
        self.name = "gaussian-mean"
        self.space = SampleSpace("real-vector", "gaussian", self.dim)

    def params(self):
        return {"dim": self.dim}

    def mean(self, theta):
        return _theta(theta)

    def mean_jac(self, theta):
        th = _theta(theta)
        return np.broadcast_to(np.eye(self.dim), th.shape[:-1] + (self.dim, self.dim))

    def mean_hess(self, theta):
        th = _theta(theta)
        return np.zeros(th.shape[:-1] + (self.dim,) * 3)

    def mean_third(self, theta):
        th = _theta(theta)
        return np.zeros(th.shape[:-1] + (self.dim,) * 4)

    def grid(self):
        rng = np.random.default_rng(11)
        return [np.zeros(self.dim)] + [rng.uniform(-2, 2, self.dim) for _ in range(4)]


class CurvedGaussianEfron(CurvedGaussian):
    """Bivariate unit-covariance Gaussian with mean (theta, theta^2)."""

    dim = 1
    m = 2
    name = "curved-gaussian-efron"
    space = SampleSpace("real-vector", "gaussian", 2)

    def mean(self, theta):
        t = _theta(theta)[..., 0]
        return np.stack([t, t * t], axis=-1)

    def mean_jac(self, theta):
        t = _theta(theta)[..., 0]
        return np.stack([np.ones_like(t), 2.0 * t], axis=-1)[..., None, :]

    def mean_hess(self, theta):
        t = _theta(theta)[..., 0]
        return np.stack([np.zeros_like(t), np.full_like(t, 2.0)], axis=-1)[..., None, None, :]

    def mean_third(self, theta):
        th = _theta(theta)
        return np.zeros(th.shape[:-1] + (1, 1, 1, 2))

    def grid(self):
        return [np.array([v]) for v in (-1.0, -0.5, 0.0, 0.5, 1.0)]


class GraphSurfaceGaussian(CurvedGaussian):
    """Trivariate unit-covariance Gaussian with mean (t1, t2, (t1^2 + t2^2)/2)."""

    dim = 2
    m = 3
    name = "graph-surface-gaussian"
    space = SampleSpace("real-vector", "gaussian", 3)

    def mean(self, theta):
        t = _theta(theta)
        f = 0.5 * (t[..., 0] ** 2 + t[..., 1] ** 2)
        return np.concatenate([t, f[..., None]], axis=-1)

    def mean_jac(self, theta):
        t = _theta(theta)
        J = np.zeros(t.shape[:-1] + (2, 3))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., :, 2] = t
        return J

    def mean_hess(self, theta):
        t = _theta(theta)
        H = np.zeros(t.shape[:-1] + (2, 2, 3))
        H[..., 0, 0, 2] = 1.0
        H[..., 1, 1, 2] = 1.0
        return H

    def mean_third(self, theta):
        t = _theta(theta)
        return np.zeros(t.shape[:-1] + (2, 2, 2, 3))

    def grid(self):
        return [np.array(p) for p in ([0.0, 0.0], [0.3, -0.2], [1.0, 0.5], [-0.7, 0.9], [0.0, 1.5])]


class DegenerateSumGaussian(CurvedGaussian):
    """Bivariate Gaussian with mean (t1 + t2, t1 + t2); Fisher information has rank one."""

    dim = 2
    m = 2
    name = "degenerate-sum-gaussian"
    space = SampleSpace("real-vector", "gaussian", 2)

    def mean(self, theta):
        t = _theta(theta)
        s = t[..., 0] + t[..., 1]
        return np.stack([s, s], axis=-1)

    def mean_jac(self, theta):
        t = _theta(theta)
        return np.ones(t.shape[:-1] + (2, 2))

    def mean_hess(self, theta):
        t = _theta(theta)
        return np.zeros(t.shape[:-1] + (2, 2, 2))

    def mean_third(self, theta):
        t = _theta(theta)
        return np.zeros(t.shape[:-1] + (2, 2, 2, 2))

    def regular_domain(self, theta):
        return False


# ---------------------------------------------------------------------------
# Scalar-observation models
# ---------------------------------------------------------------------------


class Poisson(ParametricModel):
    dim = 1
    name = "poisson"
    space = SampleSpace("nonneg-integers", "discrete")

    def logp(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return x * np.log(t) - t - gammaln(x + 1.0)

    def score1(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (x / t - 1.0)[..., None]

    def _score2(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (-x / t**2)[..., None, None]

    def _score3(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (2.0 * x / t**3)[..., None, None, None]

    def sample(self, theta, n, rng):
        return rng.poisson(float(_theta(theta)[0]), size=n).astype(float)

    def regular_domain(self, theta):
        return bool(_theta(theta)[0] > 0)

    def regular_mask(self, thetas):
        t = _theta(thetas).reshape(-1)
        return np.isfinite(t) & (t > 0)

    def support(self, theta, start, stop):
        return np.arange(start, stop, dtype=float)

    def grid(self):
        return [np.array([v]) for v in (0.5, 1.0, 2.0, 5.0, 12.0)]


class Bernoulli(ParametricModel):
    dim = 1
    name = "bernoulli"
    space = SampleSpace("finite-set", "discrete")

    def logp(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return x * np.log(t) + (1.0 - x) * np.log1p(-t)

    def score1(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (x / t - (1.0 - x) / (1.0 - t))[..., None]

    def _score2(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (-x / t**2 - (1.0 - x) / (1.0 - t) ** 2)[..., None, None]

    def _score3(self, x, theta):
        x = np.asarray(x, dtype=float)
        t = _theta(theta)[..., 0]
        return (2.0 * x / t**3 - 2.0 * (1.0 - x) / (1.0 - t) ** 3)[..., None, None, None]

    def sample(self, theta, n, rng):
        return (rng.random(n) < float(_theta(theta)[0])).astype(float)

    def regular_domain(self, theta):
        t = float(_theta(theta)[0])
        return 0.0 < t < 1.0

    def regular_mask(self, thetas):
        t = _theta(thetas).reshape(-1)
        return (t > 0.0) & (t < 1.0)

    def support(self, theta, start, stop):
        return np.arange(max(start, 0), min(stop, 2), dtype=float)

    def support_size(self, theta):
        return 2

    def grid(self):
        return [np.array([v]) for v in (0.1, 0.3, 0.5, 0.7, 0.9)]


class CauchyLocation(ParametricModel):
    """Standard Cauchy with location theta; scores are bounded rational functions."""

    dim = 1
    name = "cauchy-location"
    space = SampleSpace("real-line", "heavy-tailed")

    def _y(self, x, theta):
        return np.asarray(x, dtype=float) - _theta(theta)[..., 0]

    def logp(self, x, theta):
        y = self._y(x, theta)
        return -math.log(math.pi) - np.log1p(y * y)

    def score1(self, x, theta):
        y = self._y(x, theta)
        return (2.0 * y / (1.0 + y * y))[..., None]

    def _score2(self, x, theta):
        y = self._y(x, theta)
        q = 1.0 + y * y
        return (-2.0 * (1.0 - y * y) / (q * q))[..., None, None]

    def _score3(self, x, theta):
        y = self._y(x, theta)
        q = 1.0 + y * y
        return ((4.0 * y**3 - 12.0 * y) / q**3)[..., None, None, None]

    def sample(self, theta, n, rng):
        return float(_theta(theta)[0]) + rng.standard_cauchy(n)

    def location_scale(self, theta):
        return float(_theta(theta)[0]), 1.0

    def grid(self):
        return [np.array([v]) for v in (-3.0, -1.0, 0.0, 0.4, 2.5)]


# ---------------------------------------------------------------------------
# Quadratic reparameterisation theta(u) = theta0 + B (u - u0) + 1/2 C[u - u0, u - u0]
# ---------------------------------------------------------------------------


class QuadraticReparam(ParametricModel):
    """The base model seen through a quadratic chart.

    ``lin`` is the d x d matrix B (theta^i = ... + B^i_a u^a) and ``quad`` the
    d x d x d array C^i_ab.  Scores follow from the chain rule with the
    chart's third derivative equal to zero.
    """

    def __init__(self, base: ParametricModel, theta0, lin, quad=None, u0=None):
        self.base = base
        self.dim = base.dim
        self.space = base.space
        self.name = f"reparam({base.name})"
        self.theta0 = _theta(theta0).reshape(self.dim)
        self.lin = np.asarray(lin, dtype=float).reshape(self.dim, self.dim)
        d = self.dim
        self.quad = np.zeros((d, d, d)) if quad is None else np.asarray(quad, dtype=float).reshape(d, d, d)
        self.quad = 0.5 * (self.quad + np.swapaxes(self.quad, 1, 2))
        self.u0 = np.zeros(d) if u0 is None else _theta(u0).reshape(d)

    def params(self):
        return {"base": self.base, "theta0": self.theta0.tolist()}

    def to_base(self, u):
        du = _theta(u) - self.u0
        return self.theta0 + du @ self.lin.T + 0.5 * np.einsum("iab,...a,...b->...i", self.quad, du, du)

    def jacobian(self, u):
        """J^i_a = d theta^i / d u^a, shape (..., d, d)."""
        du = _theta(u) - self.u0
        return self.lin + np.einsum("iab,...b->...ia", self.quad, du)

    def logp(self, x, theta):
        return self.base.logp(x, self.to_base(theta))

    def score1(self, x, theta):
        J = self.jacobian(theta)
        return np.einsum("...i,...ia->...a", self.base.score1(x, self.to_base(theta)), J)

    def _score2(self, x, theta):
        th = self.to_base(theta)
        J = self.jacobian(theta)
        s1 = self.base.score1(x, th)
        s2 = self.base.score2(x, th)
        return np.einsum("...ij,...ia,...jb->...ab", s2, J, J) + np.einsum("...i,iab->...ab", s1, self.quad)

    def _score3(self, x, theta):
        th = self.to_base(theta)
        J = self.jacobian(theta)
        s2 = self.base.score2(x, th)
        s3 = self.base.score3(x, th)
        main = np.einsum("...ijk,...ia,...jb,...kc->...abc", s3, J, J, J)
        cross = np.einsum("...ij,iab,...jc->...abc", s2, self.quad, J)
        cross = cross + np.swapaxes(cross, -1, -2) + np.moveaxis(cross, -1, -3)
        return main + cross

    def sample(self, theta, n, rng):
        return self.base.sample(self.to_base(theta), n, rng)

    def regular_domain(self, theta):
        J = self.jacobian(theta)
        return self.base.regular_domain(self.to_base(theta)) and abs(np.linalg.det(J)) > 1e-12

    def gaussian_center(self, theta):
        return self.base.gaussian_center(self.to_base(theta))

    def location_scale(self, theta):
        return self.base.location_scale(self.to_base(theta))

    def support(self, theta, start, stop):
        return self.base.support(self.to_base(theta), start, stop)

    def support_size(self, theta):
        return self.base.support_size(self.to_base(theta))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

REGISTRY: dict[str, Callable[..., ParametricModel]] = {
    "gaussian-mean": GaussianMean,
    "poisson": Poisson,
    "bernoulli": Bernoulli,
    "curved-gaussian-efron": CurvedGaussianEfron,
    "graph-surface-gaussian": GraphSurfaceGaussian,
    "cauchy-location": CauchyLocation,
    "degenerate-sum-gaussian": DegenerateSumGaussian,
}


def get_model(name: str, **params) -> ParametricModel:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}") from None
    if name == "gaussian-mean":
        return factory(**params)
    return factory()


def builtin_models() -> list[ParametricModel]:
    """One instance of every built-in, with GaussianMean at d = 1, 2 and 3."""
    return [
        GaussianMean(1),
        GaussianMean(2),
        GaussianMean(3),
        Poisson(),
        Bernoulli(),
        CurvedGaussianEfron(),
        GraphSurfaceGaussian(),
        CauchyLocation(),
        DegenerateSumGaussian(),
    ]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


@dataclass
class DerivativeCheck:
    max_error: dict[int, float]
    tol: float
    worst: dict[int, tuple]

    @property
    def failed(self) -> bool:
        return any(e > self.tol for e in self.max_error.values())


def _fd(f, theta, i, h):
    # Richardson-extrapolated central difference: O(h^4)
    e = np.zeros_like(theta)
    e[i] = 1.0

    def cd(step):
        return (f(theta + step * e) - f(theta - step * e)) / (2.0 * step)

    return (4.0 * cd(h / 2.0) - cd(h)) / 3.0


def check_derivatives(model: ParametricModel, theta, trials: int = 100, seed: int = 0,
                      tol: float = 1e-4, step: float = 1e-3) -> DerivativeCheck:
    """Compare each analytic score order with finite differences of the order below.

    Order 1 is checked against differences of ``logp``, order 2 against
    differences of ``score1`` and order 3 against differences of ``score2``.
    Errors are relative with a floor of one: ``|a - fd| / max(1, |fd|)``.
    """
    theta = _theta(theta).reshape(model.dim)
    rng = np.random.default_rng(seed)
    xs = model.sample(theta, trials, rng)
    h = step * max(1.0, float(np.linalg.norm(theta)))
    if isinstance(model, Bernoulli):
        h = min(h, 0.1 * min(theta[0], 1 - theta[0]))
    elif isinstance(model, Poisson):
        h = min(h, 0.1 * theta[0])
    lower = (
        lambda x, t: model.logp(x, t)[..., None],
        model.score1,
        model.score2,
    )
    upper = (model.score1, model.score2, model.score3)
    max_err = {1: 0.0, 2: 0.0, 3: 0.0}
    worst: dict[int, tuple] = {1: (), 2: (), 3: ()}
    for x in xs:
        for order in (1, 2, 3):
            analytic = np.asarray(upper[order - 1](x, theta), dtype=float)
            if not np.all(np.isfinite(analytic)):
                bad = tuple(int(v) for v in np.argwhere(~np.isfinite(analytic))[0])
                raise DerivativeEvaluationError(
                    f"non-finite score{order} value", x=x, theta=theta, index=bad)
            for i in range(model.dim):
                fd = _fd(lambda t: np.asarray(lower[order - 1](x, t), dtype=float), theta, i, h)
                if order == 1:
                    fd = fd[0]
                    a = analytic[i]
                else:
                    a = analytic[..., i]
                err = np.abs(a - fd) / np.maximum(1.0, np.abs(fd))
                e = float(np.max(err))
                if e > max_err[order]:
                    max_err[order] = e
                    worst[order] = (x, theta.copy(), i)
    return DerivativeCheck(max_err, tol, worst)


def sample_batch(model: ParametricModel, theta, n: int, stream: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. points from p_theta using the supplied generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    try:
        out = model.sample(_theta(theta).reshape(model.dim), n, stream)
    except SamplingError:
        raise
    except Exception as exc:  # sampler failures surface uniformly
        raise SamplingError(f"{model.name} sampler failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SamplingError(f"{model.name} sampler produced non-finite values")
    return out
