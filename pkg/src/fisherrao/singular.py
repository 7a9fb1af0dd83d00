"""Learning rates for singular models in additive normal-crossing form.

A resolved model is described by ``K(u) = sum_j c_j u_j^(2 k_j)`` on the box
``[-eps, eps]^d`` with Jacobian weight ``prod_j |u_j|^h_j`` and a prior that is
constant (``psi0``) near the origin.  Everything separates into one-dimensional
integrals, so ``Z_n`` and posterior moments are products and ratios of 1D
adaptive quadratures.  This module uses the raw pullback convention for the
resolved metric; it does not share tensors with the regular-model modules.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate

from .errors import ExpectationError, IllConditionedFit, OddLeadingOrder, OnSingularStratum
from .expectation import ExpectationEngine, default_engine, moment_table

QUAD_RTOL = 1e-10
NULL_CUTOFF = 1e-8


@dataclass(frozen=True)
class Term:
    c: float
    k: int
    h: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("term coefficient c must be > 0")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("term order k must be an integer >= 1")
        if int(self.h) != self.h or self.h < 0:
            raise ValueError("Jacobian exponent h must be an integer >= 0")
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "h", int(self.h))


@dataclass(frozen=True)
class NormalCrossingSpec:
    terms: tuple
    epsilon: float = 1.0
    psi0: float = 1.0

    def __post_init__(self):
        terms = tuple(t if isinstance(t, Term) else Term(*t) for t in self.terms)
        if not terms:
            raise ValueError("spec needs at least one term")
        if not self.epsilon > 0 or not self.psi0 > 0:
            raise ValueError("epsilon and psi0 must be > 0")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return len(self.terms)

    @classmethod
    def from_dict(cls, d: dict) -> NormalCrossingSpec:
        terms = tuple(Term(float(t["c"]), int(t["k"]), int(t.get("h", 0))) for t in d["terms"])
        return cls(terms, float(d.get("epsilon", 1.0)), float(d.get("psi0", 1.0)))

    @classmethod
    def from_json(cls, s: str) -> NormalCrossingSpec:
        return cls.from_dict(json.loads(s))

    def to_dict(self) -> dict:
        return {"terms": [{"c": t.c, "k": t.k, "h": t.h} for t in self.terms],
                "epsilon": self.epsilon, "psi0": self.psi0}


def rlct(spec: NormalCrossingSpec) -> Fraction:
    """lambda = sum_j (h_j + 1) / (2 k_j), exactly."""
    return sum((Fraction(t.h + 1, 2 * t.k) for t in spec.terms), Fraction(0))


def mse_rate(spec: NormalCrossingSpec) -> Fraction:
    """Posterior MSE decays like n^-rate with rate = min_j 1/k_j."""
    return min(Fraction(1, t.k) for t in spec.terms)


def a_constant(c: float, k: int, h: int) -> float:
    """A = int_R exp(-c t^2k) |t|^h dt = (1/k) c^(-(h+1)/2k) Gamma((h+1)/2k)."""
    a = (h + 1) / (2.0 * k)
    return c ** (-a) * math.gamma(a) / k


def _half_line(c: float, k: int, p: int, n: float, eps: float) -> float:
    """int_0^eps exp(-n c u^2k) u^p du, integrated in the scaled variable t = n^(1/2k) u."""
    scale = n ** (1.0 / (2 * k))
    upper = eps * scale
    knee = min(upper, (60.0 / c) ** (1.0 / (2 * k)))  # beyond the knee the integrand is < e^-60

    def f(t):
        return math.exp(-c * t ** (2 * k)) * t**p

    val, err = integrate.quad(f, 0.0, knee, epsabs=0.0, epsrel=1e-13, limit=200)
    if upper > knee:
        tail, terr = integrate.quad(f, knee, upper, epsabs=0.0, epsrel=1e-13, limit=200)
        val += tail
        err += terr
    if not np.isfinite(val) or val <= 0 or err > QUAD_RTOL * val:
        raise ExpectationError(f"1D quadrature failed (value {val!r}, error {err!r})")
    return val * scale ** (-(p + 1))


def z_n(spec: NormalCrossingSpec, n: float) -> float:
    """psi0 * int_box exp(-n K(u)) prod |u_j|^h_j du."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = spec.psi0
    for t in spec.terms:
        out *= 2.0 * _half_line(t.c, t.k, t.h, n, spec.epsilon)
    return out


def z_n_asymptotic(spec: NormalCrossingSpec, n: float) -> float:
    """Infinite-box value psi0 n^-lambda prod A_j (exact when eps = infinity)."""
    lam = float(rlct(spec))
    return spec.psi0 * n ** (-lam) * math.prod(a_constant(t.c, t.k, t.h) for t in spec.terms)


def posterior_mse(spec: NormalCrossingSpec, n: float, b=None) -> float:
    """E_post[sum_j b_j u_j^2]; each coordinate contributes a ratio of 1D integrals."""
    b = np.ones(spec.dim) if b is None else np.asarray(b, dtype=float)
    if b.shape != (spec.dim,) or np.any(b < 0) or not np.any(b > 0):
        raise ValueError("b must be nonnegative, one entry per term, and not all zero")
    total = 0.0
    for bj, t in zip(b, spec.terms):
        if bj == 0:
            continue
        num = _half_line(t.c, t.k, t.h + 2, n, spec.epsilon)
        den = _half_line(t.c, t.k, t.h, n, spec.epsilon)
        total += bj * num / den
    return total


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float   # max |log value - fitted line|


def fit_rate(ns, values, min_points: int = 4, min_decades: float = 3.0) -> RateFit:
    """Least-squares slope of log(value) against log(n)."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.shape != values.shape or ns.ndim != 1:
        raise ValueError("ns and values must be 1D of equal length")
    if len(ns) < min_points or np.log10(ns.max() / ns.min()) < min_decades - 1e-12:
        raise IllConditionedFit(f"need >= {min_points} points spanning >= {min_decades} decades")
    if np.any(values <= 0):
        raise ValueError("values must be positive")
    x, y = np.log(ns), np.log(values)
    X = np.column_stack([np.ones_like(x), x])
    (b0, b1), *_ = np.linalg.lstsq(X, y, rcond=None)
    return RateFit(slope=float(b1), intercept=float(b0), residual=float(np.max(np.abs(y - X @ [b0, b1]))))


@dataclass(frozen=True)
class ResolvedGeometry:
    G: np.ndarray       # diagonal metric, raw pullback of the KL Hessian
    Gamma: np.ndarray   # Gamma[k, i, j]; only Gamma^j_jj is nonzero


def resolved_geometry(spec: NormalCrossingSpec, u) -> ResolvedGeometry:
    """G_jj = 2k(2k-1) c u^(2k-2) and Gamma^j_jj = (k-1)/u at an interior point."""
    u = np.asarray(u, dtype=float).reshape(spec.dim)
    if np.any(u == 0):
        raise OnSingularStratum(f"u = {u.tolist()} lies on a coordinate hyperplane")
    d = spec.dim
    G = np.zeros((d, d))
    Gam = np.zeros((d, d, d))
    for j, t in enumerate(spec.terms):
        G[j, j] = 2 * t.k * (2 * t.k - 1) * t.c * u[j] ** (2 * t.k - 2)
        Gam[j, j, j] = (t.k - 1) / u[j]
    return ResolvedGeometry(G=G, Gamma=Gam)


# ---------------------------------------------------------------------------
# Tangent cone of a polynomial divergence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Polynomial:
    """Sparse real polynomial: {exponent tuple: coefficient}."""

    terms: dict
    nvars: int

    @classmethod
    def from_terms(cls, terms: dict) -> Polynomial:
        if not terms:
            raise ValueError("polynomial needs at least one term")
        nv = {len(e) for e in terms}
        if len(nv) != 1:
            raise ValueError("all exponent tuples must have the same length")
        return cls({tuple(int(p) for p in e): float(c) for e, c in terms.items()}, nv.pop())

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(self.nvars)
        return float(sum(c * np.prod(x ** np.array(e)) for e, c in self.terms.items()))

    def degree_of(self, e) -> int:
        return int(sum(e))

    def shift(self, x0) -> Polynomial:
        """The polynomial y -> P(x0 + y)."""
        x0 = np.asarray(x0, dtype=float).reshape(self.nvars)
        out: dict = {}
        for e, c in self.terms.items():
            ranges = [range(p + 1) for p in e]
            for sub in itertools.product(*ranges):
                coef = c
                for p, q, a in zip(e, sub, x0):
                    coef *= math.comb(p, q) * a ** (p - q)
                out[sub] = float(out.get(sub, 0.0) + coef)
        return Polynomial(out, self.nvars)

    def homogeneous_part(self, degree: int) -> Polynomial:
        part = {e: c for e, c in self.terms.items() if self.degree_of(e) == degree}
        return Polynomial(part or {(0,) * self.nvars: 0.0}, self.nvars)

    def lowest_degree(self, tol: float = 1e-12) -> int | None:
        scale = max((abs(c) for c in self.terms.values()), default=0.0)
        degs = [self.degree_of(e) for e, c in self.terms.items() if abs(c) > tol * max(scale, 1.0)]
        return min(degs) if degs else None


@dataclass(frozen=True)
class TangentCone:
    order: int          # 2k
    Phi: Polynomial     # leading homogeneous part
    phi_v: float
    G_vw: float

    def G(self, v, w) -> float:
        return generalized_metric(self.Phi, v, w)


def generalized_metric(Phi: Polynomial, v, w) -> float:
    """G(v, w) = 1/2 [Phi(v + w) - Phi(v) - Phi(w)]."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    return 0.5 * (Phi(v + w) - Phi(v) - Phi(w))


def tangent_cone(K: Polynomial, theta0, v, w, radius: float = 1e-2, tol: float = 1e-12) -> TangentCone:
    """Leading homogeneous part of K at theta0 and its polarisation."""
    theta0 = np.asarray(theta0, dtype=float).reshape(K.nvars)
    shifted = K.shift(theta0)
    if abs(shifted.terms.get((0,) * K.nvars, 0.0)) > tol:
        raise ValueError("K(theta0) must vanish")
    deg = shifted.lowest_degree(tol)
    if deg is None:
        raise ValueError("K vanishes identically near theta0")
    if deg % 2:
        raise OddLeadingOrder(f"lowest nonvanishing order {deg} is odd")
    # K >= 0 near theta0, checked on a small grid
    axis = np.linspace(-radius, radius, 5)
    for pt in itertools.product(axis, repeat=K.nvars):
        if shifted(np.array(pt)) < -tol:
            raise ValueError(f"K is negative near theta0 (offset {list(pt)})")
    Phi = shifted.homogeneous_part(deg)
    return TangentCone(order=deg, Phi=Phi, phi_v=Phi(v), G_vw=generalized_metric(Phi, v, w))


# ---------------------------------------------------------------------------
# Null directions of a (possibly singular) Fisher information
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NullDirections:
    basis: np.ndarray          # shape (m, d), orthonormal rows
    eigvals: np.ndarray        # all eigenvalues of I(theta), ascending
    score_energy: np.ndarray   # E[(v . s)^2] per basis vector, integrated directly
    cutoff: float


def null_directions(model, theta, engine: ExpectationEngine | None = None,
                    cutoff: float = NULL_CUTOFF) -> NullDirections:
    """Orthonormal basis of ker I(theta): eigenvectors with eigenvalue <= cutoff * lambda_max."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    engine = engine or default_engine(model)
    g = moment_table(model, theta, engine, require_regular=False).g
    w, V = np.linalg.eigh(g)
    lam_max = max(float(w[-1]), 0.0)
    sel = w <= cutoff * lam_max
    basis = V[:, sel].T.copy()
    for row in basis:
        lead = row[np.flatnonzero(np.abs(row) > 1e-12)[0]]
        if lead < 0:
            row *= -1.0
    if len(basis):
        vals, _ = engine.integrate(model, theta, lambda x: (model.score1(x, theta) @ basis.T) ** 2)
        energy = np.asarray(vals, dtype=float).reshape(len(basis))
    else:
        energy = np.zeros(0)
    return NullDirections(basis=basis, eigvals=w, score_energy=energy, cutoff=cutoff)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

DEFAULT_N_GRID = tuple(float(v) for v in np.logspace(2, 6, 9))


@dataclass(frozen=True)
class SingularReport:
    spec: NormalCrossingSpec
    lam: Fraction
    mse_rate: Fraction
    n_grid: np.ndarray
    z_values: np.ndarray
    mse_values: np.ndarray
    z_fit: RateFit
    mse_fit: RateFit
    constants: np.ndarray
    boundary_residual: float   # max relative gap to the infinite-box closed form
    b: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "rlct": float(self.lam),
            "rlct_exact": str(self.lam),
            "mse_rate": float(self.mse_rate),
            "mse_rate_exact": str(self.mse_rate),
            "n_grid": self.n_grid.tolist(),
            "z_values": self.z_values.tolist(),
            "posterior_mse": self.mse_values.tolist(),
            "z_slope": self.z_fit.slope,
            "z_residual": self.z_fit.residual,
            "mse_slope": self.mse_fit.slope,
            "mse_residual": self.mse_fit.residual,
            "constants": self.constants.tolist(),
            "boundary_residual": self.boundary_residual,
            "mse_weights": None if self.b is None else self.b.tolist(),
        }

    def to_csv(self) -> str:
        rows = ["n,z_n,posterior_mse"]
        rows += [f"{float(n)!r},{float(z)!r},{float(m)!r}"
                 for n, z, m in zip(self.n_grid, self.z_values, self.mse_values)]
        return "\n".join(rows) + "\n"


def singular_report(spec: NormalCrossingSpec, n_grid=DEFAULT_N_GRID, b=None) -> SingularReport:
    ns = np.asarray(n_grid, dtype=float)
    b = np.ones(spec.dim) if b is None else np.asarray(b, dtype=float)
    z = np.array([z_n(spec, n) for n in ns])
    mse = np.array([posterior_mse(spec, n, b) for n in ns])
    asym = np.array([z_n_asymptotic(spec, n) for n in ns])
    return SingularReport(
        spec=spec, lam=rlct(spec), mse_rate=mse_rate(spec), n_grid=ns, z_values=z, mse_values=mse,
        z_fit=fit_rate(ns, z), mse_fit=fit_rate(ns, mse),
        constants=np.array([a_constant(t.c, t.k, t.h) for t in spec.terms]),
        boundary_residual=float(np.max(np.abs(z / asym - 1.0))), b=b,
    )


def spec_library() -> list[NormalCrossingSpec]:
    """Ten specs with k in {1, 2, 3} and h in {0, 1, 2}, the first three regular."""
    raw = [
        [(1.0, 1, 0)],
        [(1.0, 1, 0), (1.0, 1, 0)],
        [(1.0, 1, 0), (2.0, 1, 0), (0.5, 1, 0)],
        [(1.0, 2, 0), (1.0, 1, 0)],
        [(1.0, 3, 2)],
        [(0.5, 2, 1), (2.0, 1, 0)],
        [(1.0, 3, 0), (1.0, 2, 1)],
        [(2.0, 2, 2), (1.0, 3, 1)],
        [(1.0, 3, 0), (1.0, 3, 0), (1.0, 1, 2)],
        [(1.5, 2, 0), (1.0, 1, 1), (0.7, 3, 2)],
    ]
    return [NormalCrossingSpec(tuple(Term(*t) for t in terms)) for terms in raw]
