"""Expectations of score-tensor products under p_theta.

Four integration rules are available: tensor-product Gauss-Hermite for
models with a Gaussian weight, adaptive quadrature after a tangent
substitution for real-line models, truncated summation for discrete models
and plain Monte Carlo as a fallback.  All of them go through
:meth:`ExpectationEngine.integrate`, which returns values together with a
nonnegative error estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.integrate import quad_vec

from ._tensor import pair_swap_symmetrize, symmetrize
from .errors import DerivativeEvaluationError, DomainError, ExpectationError
from .models import ParametricModel

METHODS = ("gauss-hermite", "adaptive-grid", "discrete-sum", "monte-carlo")
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ExpectationEngine:
    method: str
    order: int = 24
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    truncation: float = 1e-10
    tail_tol: float = 1e-12
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown expectation method {self.method!r}")

    @classmethod
    def gauss_hermite(cls, order: int = 24) -> "ExpectationEngine":
        return cls("gauss-hermite", order=order)

    @classmethod
    def adaptive_grid(cls, abs_tol=1e-10, rel_tol=1e-8, truncation=1e-10) -> "ExpectationEngine":
        return cls("adaptive-grid", abs_tol=abs_tol, rel_tol=rel_tol, truncation=truncation)

    @classmethod
    def discrete_sum(cls, tail_tol: float = 1e-12) -> "ExpectationEngine":
        return cls("discrete-sum", tail_tol=tail_tol)

    @classmethod
    def monte_carlo(cls, samples: int = 100_000, seed: int = 0) -> "ExpectationEngine":
        return cls("monte-carlo", samples=samples, seed=seed)

    def compatible(self, model: ParametricModel) -> bool:
        hint = model.space.weight_hint
        if self.method == "gauss-hermite":
            return hint == "gaussian"
        if self.method == "adaptive-grid":
            return model.space.kind == "real-line"
        if self.method == "discrete-sum":
            return hint == "discrete"
        return True

    # -- core -------------------------------------------------------------

    def integrate(self, model: ParametricModel, theta, fn) -> tuple[np.ndarray, np.ndarray]:
        """E_theta[fn(X)] for ``fn`` mapping a batch of points to shape (N, K).

        Returns ``(values, errors)``, both of shape (K,).
        """
        if not self.compatible(model):
            raise ValueError(f"{self.method} engine cannot integrate over {model.space.kind} "
                             f"({model.space.weight_hint}) sample space")
        theta = np.asarray(theta, dtype=float).reshape(model.dim)
        rule = {
            "gauss-hermite": self._gauss_hermite,
            "adaptive-grid": self._adaptive,
            "discrete-sum": self._discrete,
            "monte-carlo": self._monte_carlo,
        }[self.method]
        val, err = rule(model, theta, fn)
        if not np.all(np.isfinite(val)):
            raise ExpectationError(f"{self.method} produced non-finite expectations")
        return val, np.maximum(err, 0.0)

    def _gh_sum(self, model, theta, fn, order):
        z1, w1 = np.polynomial.hermite_e.hermegauss(order)
        w1 = w1 / w1.sum()
        m = model.space.dim if model.space.kind == "real-vector" else 1
        z = np.array(list(product(z1, repeat=m)))
        w = np.prod(np.array(list(product(w1, repeat=m))), axis=1)
        mean, chol = model.gaussian_center(theta)
        mean = np.atleast_1d(mean)
        x = mean + z @ np.atleast_2d(chol).T
        # importance ratio against the Gaussian weight (identically 1 for the built-ins)
        _, logdet = np.linalg.slogdet(np.atleast_2d(chol))
        logphi = -0.5 * np.sum(z * z, axis=1) - 0.5 * m * math.log(2 * math.pi) - logdet
        if model.space.kind != "real-vector":
            x = x[:, 0]
        ratio = np.exp(model.logp(x, theta) - logphi)
        vals = _finite(fn(x), theta)
        return (w * ratio) @ vals

    def _gauss_hermite(self, model, theta, fn):
        hi = self._gh_sum(model, theta, fn, self.order)
        lo = self._gh_sum(model, theta, fn, max(2, self.order - max(2, self.order // 4)))
        floor = 64 * _EPS * np.maximum(1.0, np.abs(hi))
        return hi, np.abs(hi - lo) + floor

    def _adaptive(self, model, theta, fn):
        loc, scale = model.location_scale(theta)
        edge = 0.5 * math.pi - self.truncation

        def integrand(u):
            x = np.array([loc + scale * math.tan(u)])
            jac = scale / math.cos(u) ** 2
            w = math.exp(float(model.logp(x, theta)[0])) * jac
            return w * _finite(fn(x), theta)[0]

        val, est = quad_vec(integrand, -edge, edge, epsabs=self.abs_tol, epsrel=self.rel_tol,
                            norm="max", limit=2000)
        ends = np.abs(integrand(-edge)) + np.abs(integrand(edge))
        return val, est + self.truncation * ends + 16 * _EPS * np.abs(val)

    def _discrete(self, model, theta, fn):
        size = model.support_size(theta)
        block = 64
        if size is not None:
            pts = model.support(theta, 0, size)
            w = np.exp(model.logp(pts, theta))
            val = w @ _finite(fn(pts), theta)
            return val, 16 * _EPS * np.maximum(1.0, np.abs(val))
        total = None
        mass = 0.0
        start = 0
        last = None
        for _ in range(100_000):
            pts = model.support(theta, start, start + block)
            w = np.exp(model.logp(pts, theta))
            contrib = w @ _finite(fn(pts), theta)
            total = contrib if total is None else total + contrib
            mass += float(w.sum())
            start += block
            last = np.abs(contrib)
            if mass > 1.0 - 1e-6 and float(w.sum()) < self.tail_tol and np.all(last < self.tail_tol):
                break
        else:
            raise ExpectationError("discrete summation did not reach its tail tolerance")
        return total, last + 16 * _EPS * np.maximum(1.0, np.abs(total))

    def _monte_carlo(self, model, theta, fn):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))
        x = model.sample(theta, self.samples, rng)
        vals = _finite(fn(x), theta)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(self.samples)
        return mean, se


def _finite(vals, theta):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if not np.all(np.isfinite(vals)):
        bad = tuple(int(v) for v in np.argwhere(~np.isfinite(vals))[0])
        raise DerivativeEvaluationError("non-finite integrand value", theta=theta, index=bad)
    return vals


def default_engine(model: ParametricModel) -> ExpectationEngine:
    """Quadrature rule matched to the model's weight hint."""
    hint = model.space.weight_hint
    if hint == "gaussian":
        return ExpectationEngine.gauss_hermite()
    if hint == "discrete":
        return ExpectationEngine.discrete_sum()
    if model.space.kind == "real-line":
        return ExpectationEngine.adaptive_grid()
    return ExpectationEngine.monte_carlo()


# ---------------------------------------------------------------------------
# Moment table
# ---------------------------------------------------------------------------

_FIELDS = ("g", "T", "Ge", "kappa", "Q", "M", "F", "score_mean", "hess_mean")


@dataclass(frozen=True)
class MomentTable:
    """All score moments at ``theta``.

    ``Ge[i,j,k] = E[s_ij s_k]``, ``Q[i,j,k,l] = E[s_ij s_kl]``,
    ``M[i,j,k,l] = E[s_ij s_k s_l]`` and ``F`` is the fourth score moment.
    ``score_mean`` and ``hess_mean`` are E[s_i] and E[s_ij].
    """

    theta: np.ndarray
    g: np.ndarray
    T: np.ndarray
    Ge: np.ndarray
    kappa: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    F: np.ndarray
    err: float
    score_mean: np.ndarray = None
    hess_mean: np.ndarray = None
    mass: float = 1.0
    errors: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def to_dict(self) -> dict:
        out = {"dim": self.dim, "theta": np.asarray(self.theta).tolist(), "err": float(self.err),
               "mass": float(self.mass)}
        for name in _FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                out[name] = np.asarray(arr, dtype=float).ravel(order="C").tolist()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "MomentTable":
        d = int(doc["dim"])
        shapes = {"g": (d, d), "T": (d,) * 3, "Ge": (d,) * 3, "kappa": (d,) * 3, "Q": (d,) * 4,
                  "M": (d,) * 4, "F": (d,) * 4, "score_mean": (d,), "hess_mean": (d, d)}
        arrays = {k: np.asarray(doc[k], dtype=float).reshape(shapes[k]) for k in _FIELDS if k in doc}
        return cls(theta=np.asarray(doc["theta"], dtype=float), err=float(doc["err"]),
                   mass=float(doc.get("mass", 1.0)), **arrays)

    @classmethod
    def from_json(cls, text: str) -> "MomentTable":
        return cls.from_dict(json.loads(text))


def _moment_integrand(model: ParametricModel, theta: np.ndarray):
    d = model.dim

    def fn(x):
        # raw higher scores: the table is symmetrized after integration
        s1, s2, s3 = model.score1(x, theta), model._score2(x, theta), model._score3(x, theta)
        n = s1.shape[0]
        cols = [
            np.ones((n, 1)),
            s1,
            s2.reshape(n, -1),
            np.einsum("ni,nj->nij", s1, s1).reshape(n, -1),
            np.einsum("ni,nj,nk->nijk", s1, s1, s1).reshape(n, -1),
            np.einsum("nij,nk->nijk", s2, s1).reshape(n, -1),
            s3.reshape(n, -1),
            np.einsum("nij,nkl->nijkl", s2, s2).reshape(n, -1),
            np.einsum("nij,nk,nl->nijkl", s2, s1, s1).reshape(n, -1),
            np.einsum("ni,nj,nk,nl->nijkl", s1, s1, s1, s1).reshape(n, -1),
        ]
        return np.concatenate(cols, axis=1)

    sizes = [1, d, d * d, d * d, d**3, d**3, d**3, d**4, d**4, d**4]
    names = ["mass", "score_mean", "hess_mean", "g", "T", "Ge", "kappa", "Q", "M", "F"]
    shapes = [(), (d,), (d, d), (d, d), (d,) * 3, (d,) * 3, (d,) * 3, (d,) * 4, (d,) * 4, (d,) * 4]
    return fn, list(zip(names, sizes, shapes))


def moment_table(model: ParametricModel, theta, engine: ExpectationEngine | None = None,
                 require_regular: bool = True) -> MomentTable:
    """Integrate every score moment at ``theta`` and enforce the index symmetries."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    if require_regular and not model.regular_domain(theta):
        raise DomainError(f"theta={theta.tolist()} is outside the regular domain of {model.name}")
    engine = engine or default_engine(model)
    fn, layout = _moment_integrand(model, theta)
    val, err = engine.integrate(model, theta, fn)
    parts, errs = {}, {}
    pos = 0
    for name, size, shape in layout:
        parts[name] = val[pos:pos + size].reshape(shape)
        errs[name] = float(np.max(err[pos:pos + size]))
        pos += size
    g = symmetrize(parts["g"])
    T = symmetrize(parts["T"])
    kappa = symmetrize(parts["kappa"])
    Ge = symmetrize(parts["Ge"], [(0, 1)])
    Q = pair_swap_symmetrize(parts["Q"])
    M = symmetrize(parts["M"], [(0, 1), (2, 3)])
    F = symmetrize(parts["F"])
    hess_mean = symmetrize(parts["hess_mean"])
    total_err = max(v for k, v in errs.items() if k != "mass")
    return MomentTable(theta=theta, g=g, T=T, Ge=Ge, kappa=kappa, Q=Q, M=M, F=F, err=total_err,
                       score_mean=parts["score_mean"].copy(), hess_mean=hess_mean,
                       mass=float(parts["mass"]), errors=errs)


@dataclass(frozen=True)
class BartlettResiduals:
    r1: np.ndarray
    r2: np.ndarray
    err: float

    @property
    def max_abs(self) -> float:
        return max(float(np.max(np.abs(self.r1))), float(np.max(np.abs(self.r2))))


def bartlett_residuals(table: MomentTable, model: ParametricModel | None = None, theta=None,
                       engine: ExpectationEngine | None = None) -> BartlettResiduals:
    """r1 = E[s_i] and r2 = g_ij + E[s_ij]; both vanish for a correctly specified model."""
    if table.score_mean is None or table.hess_mean is None:
        if model is None:
            raise ValueError("table lacks first/second score means; pass the model to recompute")
        table = moment_table(model, table.theta if theta is None else theta, engine)
    r1 = np.asarray(table.score_mean)
    r2 = table.g + table.hess_mean
    return BartlettResiduals(r1=r1, r2=r2, err=table.err)


def third_moment_identity_residual(table: MomentTable) -> np.ndarray:
    """kappa_ijk + Ge_ijk + Ge_ikj + Ge_jki + T_ijk, zero for a correct table."""
    Ge = table.Ge
    return (table.kappa + Ge + np.einsum("ikj->ijk", Ge) + np.einsum("jki->ijk", Ge)
            + table.T)


def metric_derivative(table: MomentTable) -> np.ndarray:
    """dg[k, i, j] = d_k g_ij = Ge_ikj + Ge_jki + T_ijk."""
    Ge = table.Ge
    dg_ijk = np.einsum("ikj->ijk", Ge) + np.einsum("jki->ijk", Ge) + table.T
    return np.einsum("ijk->kij", dg_ijk)


def kl_divergence(model: ParametricModel, theta0, theta, engine: ExpectationEngine | None = None) -> float:
    """K(theta0 -> theta) = E_theta0[log p_theta0 - log p_theta]."""
    theta0 = np.asarray(theta0, dtype=float).reshape(model.dim)
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    engine = engine or default_engine(model)
    val, _ = engine.integrate(model, theta0, lambda x: model.logp(x, theta0) - model.logp(x, theta))
    return float(val[0])
