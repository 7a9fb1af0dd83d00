"""Invariant suite run over the built-in models and their parameter grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correction import correction_report, report_from_parts
from .errors import FisherRaoError
from .expectation import bartlett_residuals, default_engine, moment_table, third_moment_identity_residual
from .geometry import christoffel_from_table, riemann_symmetry_residuals
from .models import (Bernoulli, DegenerateSumGaussian, GaussianMean, ParametricModel, Poisson,
                     QuadraticReparam, builtin_models, check_derivatives)
from .singular import null_directions

EXPONENTIAL_FAMILIES = (GaussianMean, Poisson, Bernoulli)


@dataclass(frozen=True)
class CheckResult:
    check: str
    model: str
    theta: tuple
    value: float
    tol: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {"check": self.check, "model": self.model, "theta": list(self.theta), "value": self.value,
                "tol": self.tol, "passed": self.passed, "note": self.note}


def _le(check, model, theta, value, tol, note=""):
    value = float(value)
    return CheckResult(check, model, tuple(float(t) for t in theta), value, tol,
                       bool(np.isfinite(value) and value <= tol), note)


def _label(model: ParametricModel) -> str:
    return f"{model.name}(d={model.dim})" if isinstance(model, GaussianMean) else model.name


def random_reparam(model: ParametricModel, theta0, rng: np.random.Generator,
                   scale: float = 0.3) -> QuadraticReparam:
    """theta = theta0 + B (u - u0) + 1/2 C[u - u0, u - u0] with random well-conditioned B."""
    d = model.dim
    B = np.eye(d) + scale * rng.standard_normal((d, d))
    while np.linalg.cond(B) > 10:
        B = np.eye(d) + scale * rng.standard_normal((d, d))
    C = scale * rng.standard_normal((d, d, d))
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    u0 = rng.uniform(-1, 1, d)
    return QuadraticReparam(model, theta0, B, C, u0)


def tensoriality_error(model: ParametricModel, theta, trials: int = 20, seed: int = 0,
                       reference=None) -> float:
    """Max relative gap between P_user and P computed in random quadratic coordinates, pulled back.

    The scale is max|P_user| floored at 1e-6 max|g|, so a vanishing P is
    compared on the metric's scale instead of dividing roundoff by zero.
    """
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    ref = reference if reference is not None else correction_report(model, theta)
    P = ref.P_user
    scale = max(float(np.max(np.abs(P))), 1e-6 * float(np.max(np.abs(ref.fisher))))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        rp = random_reparam(model, theta, rng)
        rep = correction_report(rp, rp.u0)
        Jinv = np.linalg.inv(rp.jacobian(rp.u0))
        back = Jinv.T @ rep.P_user @ Jinv
        worst = max(worst, float(np.max(np.abs(back - P))) / scale)
    return worst


def rotation_error(model: ParametricModel, theta, trials: int = 5, seed: int = 0, reference=None) -> float:
    """Change in P_user when the whitening is composed with random orthogonal matrices."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    ref = reference if reference is not None else correction_report(model, theta)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        O, _ = np.linalg.qr(rng.standard_normal((model.dim, model.dim)))
        rep = report_from_parts(ref.moments, ref.geometry, ref.immersion, rotation=O)
        worst = max(worst, float(np.max(np.abs(rep.P_user - ref.P_user))))
    return worst


def check_point(model: ParametricModel, theta, tensoriality_trials: int = 0) -> list[CheckResult]:
    """Every invariant at one regular parameter point."""
    name = _label(model)
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    out = []
    engine = default_engine(model)
    dc = check_derivatives(model, theta, trials=20)
    out.append(_le("score_derivatives", name, theta, max(dc.max_error.values()), dc.tol))

    table = moment_table(model, theta, engine)
    out.append(_le("bartlett_identities", name, theta, bartlett_residuals(table).max_abs, 1e-8))
    out.append(_le("third_moment_identity", name, theta,
                   np.max(np.abs(third_moment_identity_residual(table))), 1e-8))
    _, low, _ = christoffel_from_table(table)
    out.append(_le("connection_identity", name, theta, np.max(np.abs(low - (table.Ge + 0.5 * table.T))), 1e-6))

    rep = correction_report(model, theta, engine)
    snap, imm = rep.geometry, rep.immersion
    out.append(_le("riemann_symmetries", name, theta, max(riemann_symmetry_residuals(snap.Riem).values()), 1e-5))
    out.append(_le("gauss_equation", name, theta, np.max(np.abs(imm.gauss_residual)), 1e-5))
    out.append(_le("ssharp_psd", name, theta, -imm.ssharp_min_eig, 1e-9, "value is -min eigenvalue"))
    out.append(_le("gram_ii_psd", name, theta, -imm.gram_ii_min_eig, 1e-9, "value is -min eigenvalue"))
    if model.dim == 1:
        out.append(_le("rsharp_zero_d1", name, theta, np.max(np.abs(rep.Rsharp_user)), 0.0))
    full_red = rep.consistency.get("full_vs_reduced")
    out.append(_le("full_vs_reduced", name, theta, np.inf if full_red is None else full_red, 1e-8))
    tang = rep.consistency["tangency_residuals"]
    out.append(_le("chart_metric_identity", name, theta, tang["metric_identity"], 1e-12))
    out.append(_le("chart_tangency", name, theta,
                   max(tang["ge_plus_half_t"], tang["kappa_minus_half_t"]), 1e-6))
    out.append(_le("decomposition_identity", name, theta,
                   np.max(np.abs(rep.D_user - (rep.P_user - 0.5 * rep.Rsharp_user - rep.Ssharp_user))), 0.0))
    if isinstance(model, EXPONENTIAL_FAMILIES):
        out.append(_le("exp_family_p_vanishes", name, theta, np.max(np.abs(rep.P_user)), 1e-6))
        out.append(_le("exp_family_d_equals_minus_ssharp", name, theta,
                       np.max(np.abs(rep.D_user + rep.Ssharp_user)), 1e-6))
    if model.dim > 1:
        out.append(_le("whitening_rotation_invariance", name, theta, rotation_error(model, theta, reference=rep),
                       1e-10))
    if tensoriality_trials:
        out.append(_le("tensoriality", name, theta,
                       tensoriality_error(model, theta, tensoriality_trials, reference=rep), 1e-4))
    return out


def check_singular(model: ParametricModel) -> list[CheckResult]:
    out = []
    for theta in model.grid() or [np.zeros(model.dim)]:
        nd = null_directions(model, theta)
        energy = float(np.max(nd.score_energy)) if len(nd.basis) else np.inf
        out.append(_le("null_direction_energy", model.name, theta, energy, 1e-10,
                       f"basis {np.round(nd.basis, 12).tolist()}"))
    return out


def run_suite(models=None, tensoriality_trials: int = 0, skip: tuple = ()) -> list[CheckResult]:
    """All invariants over ``models`` (default: every built-in) and their grids."""
    models = builtin_models() if models is None else models
    results: list[CheckResult] = []
    for model in models:
        if isinstance(model, DegenerateSumGaussian):
            results += check_singular(model)
            continue
        for theta in model.grid():
            try:
                results += check_point(model, theta, tensoriality_trials)
            except FisherRaoError as exc:
                results.append(CheckResult("evaluation", _label(model), tuple(np.ravel(theta)), np.inf, 0.0,
                                           False, f"{type(exc).__name__}: {exc}"))
    return [r for r in results if r.check not in skip]
