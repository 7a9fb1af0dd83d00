"""Monte Carlo check of the covariance expansion n Cov(n) = C1 + C2 / n.

Each replicate draws its data from its own counter-based Philox stream keyed
by ``(seed, n_index, replicate_index)``, so chunking and thread count cannot
change any number.  Estimates are score roots found by damped Newton started
at the true parameter.
"""

from __future__ import annotations

import enum
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IllConditionedFit, InvalidSimulation
from .models import ParametricModel, get_model, sample_batch

THREADS_ENV = "FISHERRAO_THREADS"


class MLEStatus(enum.IntEnum):
    CONVERGED = 0
    NON_CONVERGENCE = 1
    DOMAIN_EXIT = 2


@dataclass(frozen=True)
class MLEControls:
    init: str = "truth"          # oracle start at theta_true
    max_steps: int = 50
    grad_tol: float = 1e-8       # on ||sum_t score1(x_t, theta)||
    max_step_norm: float | None = None
    max_halvings: int = 40

    def __post_init__(self):
        if self.init != "truth":
            raise ValueError("only the 'truth' initialisation policy is supported")
        if self.max_steps < 1 or self.grad_tol <= 0:
            raise ValueError("max_steps must be >= 1 and grad_tol > 0")


@dataclass(frozen=True)
class MLEResult:
    theta: np.ndarray
    status: MLEStatus
    iterations: int
    grad_norm: float

    @property
    def converged(self) -> bool:
        return self.status == MLEStatus.CONVERGED


def _newton_batch(model: ParametricModel, data: np.ndarray, init: np.ndarray, ctl: MLEControls):
    """Damped Newton on a stack of datasets.

    ``data`` has shape (R, n, *event) and ``init`` shape (R, d).  Returns
    ``(theta, status, iterations, grad_norm)`` arrays over R.
    """
    R = data.shape[0]
    d = model.dim
    theta = np.array(init, dtype=float).reshape(R, d)
    status = np.full(R, MLEStatus.NON_CONVERGENCE, dtype=np.int8)
    iters = np.zeros(R, dtype=np.int32)
    gnorm = np.full(R, np.inf)
    active = np.ones(R, dtype=bool)
    eye = np.eye(d)

    def loglik(x, th):
        return np.sum(model.logp(x, th[:, None, :]), axis=1)

    for it in range(ctl.max_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x = data[idx]
        th = theta[idx]
        U = np.sum(model.score1(x, th[:, None, :]), axis=1)
        g = np.linalg.norm(U, axis=1)
        gnorm[idx] = g
        done = g <= ctl.grad_tol
        status[idx[done]] = MLEStatus.CONVERGED
        active[idx[done]] = False
        if it == ctl.max_steps:
            break
        keep = ~done
        idx, x, th, U = idx[keep], x[keep], th[keep], U[keep]
        if idx.size == 0:
            break
        iters[idx] += 1
        negH = -np.sum(model._score2(x, th[:, None, :]), axis=1)
        w = np.linalg.eigvalsh(negH)
        floor = 1e-10 * np.maximum(1.0, np.abs(w).max(axis=1))
        shift = np.where(w[:, 0] > floor, 0.0, floor - w[:, 0] + 1e-3 * np.maximum(1.0, np.abs(w).max(axis=1)))
        step = np.linalg.solve(negH + shift[:, None, None] * eye, U[..., None])[..., 0]
        if ctl.max_step_norm is not None:
            sn = np.linalg.norm(step, axis=1)
            step *= np.minimum(1.0, ctl.max_step_norm / np.maximum(sn, 1e-300))[:, None]
        ll0 = loglik(x, th)
        accepted = np.zeros(idx.size, dtype=bool)
        any_in_domain = np.zeros(idx.size, dtype=bool)
        t = 1.0
        new = th.copy()
        for _ in range(ctl.max_halvings):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cand = th[todo] + t * step[todo]
            ok = model.regular_mask(cand)
            any_in_domain[todo] |= ok
            if np.any(ok):
                sel = todo[ok]
                with np.errstate(all="ignore"):
                    ll = loglik(x[sel], cand[ok])
                good = np.isfinite(ll) & (ll >= ll0[sel] - 1e-12 * (1.0 + np.abs(ll0[sel])))
                new[sel[good]] = cand[ok][good]
                accepted[sel[good]] = True
            t *= 0.5
        theta[idx[accepted]] = new[accepted]
        exited = ~accepted & ~any_in_domain
        status[idx[exited]] = MLEStatus.DOMAIN_EXIT
        stuck = ~accepted
        active[idx[stuck]] = False
    return theta, status, iters, gnorm


def mle_solve(model: ParametricModel, data, init, controls: MLEControls | None = None) -> MLEResult:
    """Score root of one dataset by damped Newton; non-convergence is reported, not raised."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] == 0:
        raise ValueError("data must be nonempty")
    init = np.asarray(init, dtype=float).reshape(1, model.dim)
    th, st, it, gn = _newton_batch(model, data[None], init, controls or MLEControls())
    return MLEResult(theta=th[0], status=MLEStatus(int(st[0])), iterations=int(it[0]), grad_norm=float(gn[0]))


@dataclass(frozen=True)
class SimulationPlan:
    model: str
    theta_true: tuple
    n_grid: tuple
    replicates: int = 10_000
    seed: int = 0
    model_params: dict = field(default_factory=dict)
    mle: MLEControls = field(default_factory=MLEControls)
    drop_budget: float = 1e-3
    chunk: int = 1024
    jackknife_groups: int = 100

    def __post_init__(self):
        object.__setattr__(self, "theta_true", tuple(float(v) for v in np.atleast_1d(self.theta_true)))
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        if len(self.n_grid) == 0 or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be a nonempty strictly increasing list")
        if self.n_grid[0] < 1:
            raise ValueError("sample sizes must be >= 1")
        if self.replicates < 1000:
            raise ValueError("replicates must be >= 1000")
        if self.jackknife_groups < 2 or self.jackknife_groups > self.replicates:
            raise ValueError("jackknife_groups must lie in [2, replicates]")

    def build_model(self) -> ParametricModel:
        return get_model(self.model, **self.model_params)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_true"] = list(self.theta_true)
        out["n_grid"] = list(self.n_grid)
        return out


def replicate_stream(seed: int, n_index: int, rep: int) -> np.random.Generator:
    """Independent Philox stream for one replicate."""
    ss = np.random.SeedSequence(seed, spawn_key=(n_index, rep))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NResult:
    n: int
    cov: np.ndarray
    cov_se: np.ndarray
    bias: np.ndarray
    bias_se: np.ndarray
    mse: np.ndarray
    dropped: int
    domain_exits: int
    replicates: int

    @property
    def drop_fraction(self) -> float:
        return self.dropped / self.replicates


@dataclass(frozen=True)
class SimulationResult:
    plan: SimulationPlan
    per_n: list
    valid: bool

    @property
    def n_grid(self) -> np.ndarray:
        return np.array([r.n for r in self.per_n])

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "valid": self.valid,
            "per_n": [
                {
                    "n": r.n,
                    "cov": r.cov.ravel().tolist(),
                    "cov_se": r.cov_se.ravel().tolist(),
                    "bias": r.bias.tolist(),
                    "bias_se": r.bias_se.tolist(),
                    "mse": r.mse.ravel().tolist(),
                    "dropped": r.dropped,
                    "domain_exits": r.domain_exits,
                    "replicates": r.replicates,
                }
                for r in self.per_n
            ],
        }

    def to_csv(self) -> str:
        """Rows ``n,i,j,value,se,dropped`` with round-trip float formatting."""
        buf = io.StringIO()
        buf.write("n,i,j,value,se,dropped\n")
        for r in self.per_n:
            d = r.cov.shape[0]
            for i in range(d):
                for j in range(d):
                    buf.write(f"{r.n},{i},{j},{float(r.cov[i, j])!r},{float(r.cov_se[i, j])!r},{r.dropped}\n")
        return buf.getvalue()


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _estimate_chunk(model, theta, n, n_index, seed, start, stop, ctl):
    data = np.stack([sample_batch(model, theta, n, replicate_stream(seed, n_index, r))
                     for r in range(start, stop)])
    init = np.broadcast_to(theta, (stop - start, model.dim))
    th, st, _, _ = _newton_batch(model, data, init, ctl)
    return th, st


def _grouped_jackknife_cov(x: np.ndarray, groups: np.ndarray, G: int) -> np.ndarray:
    """Delete-a-group jackknife SE of each covariance entry."""
    c = x - x.mean(axis=0)
    s1 = np.zeros((G, x.shape[1]))
    s2 = np.zeros((G, x.shape[1], x.shape[1]))
    cnt = np.zeros(G)
    np.add.at(s1, groups, c)
    np.add.at(s2, groups, c[:, :, None] * c[:, None, :])
    np.add.at(cnt, groups, 1.0)
    m = len(x) - cnt
    S1 = s1.sum(axis=0) - s1
    S2 = s2.sum(axis=0) - s2
    loo = (S2 - S1[:, :, None] * S1[:, None, :] / m[:, None, None]) / (m - 1.0)[:, None, None]
    mean = loo.mean(axis=0)
    return np.sqrt((G - 1.0) / G * np.sum((loo - mean) ** 2, axis=0))


def simulate_covariance(plan: SimulationPlan) -> SimulationResult:
    model = plan.build_model()
    theta = np.array(plan.theta_true, dtype=float).reshape(model.dim)
    if not model.regular_domain(theta):
        raise InvalidSimulation(f"theta_true {theta.tolist()} is outside the regular domain")
    R = plan.replicates
    G = plan.jackknife_groups
    bounds = [(a, min(a + plan.chunk, R)) for a in range(0, R, plan.chunk)]
    per_n = []
    valid = True
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for k, n in enumerate(plan.n_grid):
            est = np.empty((R, model.dim))
            status = np.empty(R, dtype=np.int8)
            futs = [pool.submit(_estimate_chunk, model, theta, n, k, plan.seed, a, b, plan.mle)
                    for a, b in bounds]
            for (a, b), f in zip(bounds, futs):
                est[a:b], status[a:b] = f.result()
            ok = status == MLEStatus.CONVERGED
            kept = est[ok]
            groups = (np.arange(R) * G // R)[ok]
            m = len(kept)
            if m < 2:
                raise InvalidSimulation(f"no usable replicates at n={n}")
            mean = kept.mean(axis=0)
            c = kept - mean
            cov = c.T @ c / (m - 1)
            dev = kept - theta
            per_n.append(NResult(
                n=n,
                cov=0.5 * (cov + cov.T),
                cov_se=_grouped_jackknife_cov(kept, groups, G),
                bias=mean - theta,
                bias_se=np.sqrt(np.diag(cov) / m),
                mse=dev.T @ dev / m,
                dropped=int(R - m),
                domain_exits=int(np.sum(status == MLEStatus.DOMAIN_EXIT)),
                replicates=R,
            ))
            if (R - m) / R > plan.drop_budget:
                valid = False
    return SimulationResult(plan=plan, per_n=per_n, valid=valid)


@dataclass(frozen=True)
class ExpansionFit:
    C1: np.ndarray
    C2: np.ndarray
    C1_se: np.ndarray
    C2_se: np.ndarray
    condition: float


def fit_coefficients(n_grid, covs, ses=None, max_condition: float = 1e8) -> ExpansionFit:
    """Entrywise weighted least squares of n Cov(n) on (1, 1/n).

    Weights are 1 / (n SE)^2; unit weights are used when any SE is zero or absent.
    """
    n = np.asarray(n_grid, dtype=float)
    covs = np.asarray(covs, dtype=float)
    if len(n) < 3:
        raise ValueError("need at least 3 grid points")
    X = np.column_stack([np.ones_like(n), 1.0 / n])
    cond = float(np.linalg.cond(X))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedFit(f"design condition number {cond:.3e} exceeds {max_condition:.0e}")
    d = covs.shape[1]
    C1 = np.empty((d, d))
    C2 = np.empty((d, d))
    S1 = np.zeros((d, d))
    S2 = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            y = n * covs[:, i, j]
            if ses is None or np.any(np.asarray(ses)[:, i, j] <= 0):
                w = np.ones_like(n)
                weighted = False
            else:
                w = 1.0 / (n * np.asarray(ses)[:, i, j]) ** 2
                weighted = True
            XtW = X.T * w
            A = XtW @ X
            beta = np.linalg.solve(A, XtW @ y)
            C1[i, j], C2[i, j] = beta
            if weighted:
                pcov = np.linalg.inv(A)
            else:
                dof = max(len(n) - 2, 1)
                resid = y - X @ beta
                pcov = np.linalg.inv(A) * float(resid @ resid) / dof
            S1[i, j], S2[i, j] = np.sqrt(np.maximum(np.diag(pcov), 0.0))
    return ExpansionFit(C1=C1, C2=C2, C1_se=S1, C2_se=S2, condition=cond)


@dataclass(frozen=True)
class FitComparison:
    fit: ExpansionFit
    C1_expected: np.ndarray
    C2_expected: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z_threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z1) <= self.z_threshold) and np.all(np.abs(self.z2) <= self.z_threshold))

    def to_dict(self) -> dict:
        r = lambda a: np.asarray(a, dtype=float).ravel().tolist()  # noqa: E731
        return {
            "C1": r(self.fit.C1), "C1_se": r(self.fit.C1_se), "C1_expected": r(self.C1_expected),
            "C2": r(self.fit.C2), "C2_se": r(self.fit.C2_se), "C2_expected": r(self.C2_expected),
            "z1": r(self.z1), "z2": r(self.z2), "z_threshold": self.z_threshold,
            "design_condition": self.fit.condition, "passed": self.passed,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def fit_expansion(result: SimulationResult, prediction, z_threshold: float = 3.0,
                  allow_invalid: bool = False) -> FitComparison:
    """Compare the fitted C1, C2 with I^-1 and I^-1 P I^-1 from a correction report."""
    if not result.valid and not allow_invalid:
        raise InvalidSimulation("replicate drop budget exceeded")
    covs = np.stack([r.cov for r in result.per_n])
    ses = np.stack([r.cov_se for r in result.per_n])
    fit = fit_coefficients(result.n_grid, covs, ses)
    inv = np.linalg.inv(prediction.fisher)
    inv = 0.5 * (inv + inv.T)
    e1 = inv
    e2 = inv @ prediction.P_user @ inv
    with np.errstate(divide="ignore", invalid="ignore"):
        z1 = np.where(fit.C1_se > 0, (fit.C1 - e1) / fit.C1_se, 0.0)
        z2 = np.where(fit.C2_se > 0, (fit.C2 - e2) / fit.C2_se, 0.0)
    return FitComparison(fit=fit, C1_expected=e1, C2_expected=e2, z1=z1, z2=z2, z_threshold=z_threshold)
