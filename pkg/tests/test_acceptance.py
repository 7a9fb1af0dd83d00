"""Acceptance criteria, one PASS/FAIL line each.

Run under pytest (lines are printed even when output is captured) or
directly with ``python3 tests/test_acceptance.py``.  The Monte Carlo
criterion takes several minutes.
"""

from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from fisherrao.correction import correction_report
from fisherrao.models import (Bernoulli, CauchyLocation, CurvedGaussianEfron, DegenerateSumGaussian, GaussianMean,
                              GraphSurfaceGaussian, Poisson)
from fisherrao.simulation import SimulationPlan, fit_expansion, simulate_covariance
from fisherrao.singular import DEFAULT_N_GRID, null_directions, rlct, singular_report, spec_library
from fisherrao.verify import run_suite, tensoriality_error

MC_GRID = (25, 50, 100, 200, 400)
MC_REPLICATES = 200_000


def five_points(model):
    grid = model.grid()
    idx = np.linspace(0, len(grid) - 1, 5).round().astype(int)
    return [grid[i] for i in idx]


@lru_cache(maxsize=None)
def suite():
    return tuple(run_suite())


def worst(check):
    rows = [r for r in suite() if r.check == check]
    bad = max(rows, key=lambda r: r.value)
    return all(r.passed for r in rows), bad, len(rows)


def c01_exponential_family_vanishing():
    parts, ok = [], True
    for model in (GaussianMean(1), GaussianMean(3), Poisson(), Bernoulli()):
        gap_p, gap_d = 0.0, 0.0
        for theta in five_points(model):
            rep = correction_report(model, theta)
            gap_p = max(gap_p, float(np.max(np.abs(rep.P_user))))
            gap_d = max(gap_d, float(np.max(np.abs(rep.D_user + rep.Ssharp_user))))
        ok = ok and gap_p <= 1e-6 and gap_d <= 1e-6
        parts.append(f"{model.name}(d={model.dim}) max|P|={gap_p:.2e} max|D+S#|={gap_d:.2e}")
    return ok, "; ".join(parts) + " (tol 1e-6)"


def c02_one_dimensional_reduction():
    gap, rs = 0.0, 0.0
    for model in (CurvedGaussianEfron(), CauchyLocation()):
        for theta in model.grid():
            rep = correction_report(model, theta)
            gap = max(gap, rep.consistency["full_vs_reduced"])
            rs = max(rs, float(np.max(np.abs(rep.Rsharp_user))))
    return gap <= 1e-8 and rs == 0.0, f"max|full-reduced|={gap:.3e} (tol 1e-8) max|R#|={rs!r}"


def c03_ssharp_psd():
    ok, bad, n = worst("ssharp_psd")
    return ok, f"min eig S# = {-bad.value:.3e} at {bad.model} {list(bad.theta)} over {n} points (tol -1e-9)"


def c04_gauss_equation():
    ok, bad, n = worst("gauss_equation")
    rep = correction_report(GraphSurfaceGaussian(), [0.0, 0.0])
    r1212 = float(rep.geometry.Riem[0, 1, 0, 1])
    ok = ok and abs(r1212 - 1.0) <= 1e-5
    return ok, f"max residual {bad.value:.3e} over {n} points (tol 1e-5); graph surface R_1212(0)={r1212:.8f}"


def c05_coordinate_invariance(trials=20):
    models = [GaussianMean(1), GaussianMean(2), Poisson(), Bernoulli(), CurvedGaussianEfron(),
              GraphSurfaceGaussian(), CauchyLocation()]
    errs = {f"{m.name}(d={m.dim})": tensoriality_error(m, m.grid()[1], trials=trials) for m in models}
    top = max(errs, key=errs.get)
    return errs[top] <= 1e-4, f"{trials} reparameterizations x {len(models)} models; worst {errs[top]:.3e} ({top})"


def c06_connection_identity():
    ok, bad, n = worst("connection_identity")
    return ok, f"max|Gamma_low - (Ge + T/2)| = {bad.value:.3e} over {n} points (tol 1e-6)"


@lru_cache(maxsize=None)
def mc_fit(model_name, params, theta, seed):
    plan = SimulationPlan(model=model_name, theta_true=theta, n_grid=MC_GRID, replicates=MC_REPLICATES, seed=seed,
                          model_params=dict(params))
    result = simulate_covariance(plan)
    prediction = correction_report(plan.build_model(), theta)
    return result, fit_expansion(result, prediction, allow_invalid=True)


def c07_monte_carlo_fit():
    res, cmp = mc_fit("curved-gaussian-efron", (), (0.0,), 20240601)
    c1, c2 = float(cmp.fit.C1[0, 0]), float(cmp.fit.C2[0, 0])
    se1, se2 = float(cmp.fit.C1_se[0, 0]), float(cmp.fit.C2_se[0, 0])
    res_g, cmp_g = mc_fit("gaussian-mean", (("dim", 1),), (0.0,), 20240602)
    g2, gse = float(cmp_g.fit.C2[0, 0]), float(cmp_g.fit.C2_se[0, 0])
    ok1 = 0.98 <= c1 <= 1.02
    ok2 = 2.8 <= c2 <= 5.2
    okg = abs(g2) <= 3 * gse
    ok = res.valid and res_g.valid and ok1 and ok2 and okg
    detail = (f"efron C1={c1:.4f}+-{se1:.4f} [{'ok' if ok1 else 'out'} 0.98..1.02] "
              f"C2={c2:.3f}+-{se2:.3f} [{'ok' if ok2 else 'out'} 2.8..5.2, predicted "
              f"{float(cmp.C2_expected[0, 0]):.3f}]; gaussian-mean C2={g2:.3f}+-{gse:.3f} "
              f"[{'ok' if okg else 'out'} |C2|<=3 SE]")
    return ok, detail


def c08_rlct_slopes():
    worst_gap, label = 0.0, ""
    for spec in spec_library():
        rep = singular_report(spec, DEFAULT_N_GRID)
        gap = abs(rep.z_fit.slope + float(rep.lam))
        if gap >= worst_gap:
            worst_gap, label = gap, str([(t.k, t.h) for t in spec.terms])
    regular = [s for s in spec_library() if all(t.k == 1 and t.h == 0 for t in s.terms)]
    exact = all(rlct(s) == Fraction(s.dim, 2) for s in regular)
    return worst_gap <= 0.02 and exact and regular, (
        f"worst |slope+lambda|={worst_gap:.2e} at {label} (tol 0.02); "
        f"{len(regular)} regular specs give d/2 exactly: {exact}")


def c09_posterior_mse_rates():
    worst_gap, label, reg_gap = 0.0, "", 0.0
    for spec in spec_library():
        rep = singular_report(spec, DEFAULT_N_GRID)
        target = -min(Fraction(1, t.k) for t in spec.terms)
        gap = abs(rep.mse_fit.slope - float(target))
        if gap >= worst_gap:
            worst_gap, label = gap, str([(t.k, t.h) for t in spec.terms])
        if all(t.k == 1 and t.h == 0 for t in spec.terms):
            reg_gap = max(reg_gap, abs(rep.mse_fit.slope + 1.0))
    return worst_gap <= 0.05 and reg_gap <= 0.02, (
        f"worst slope gap {worst_gap:.3f} at {label} (tol 0.05); regular |slope+1|={reg_gap:.2e} (tol 0.02)")


def c10_moment_identities():
    ok_b, bad_b, n = worst("bartlett_identities")
    ok_t, bad_t, _ = worst("third_moment_identity")
    return ok_b and ok_t, f"max Bartlett residual {bad_b.value:.3e}, third-moment {bad_t.value:.3e} over {n} points (tol 1e-8)"


def c11_null_directions():
    nd = null_directions(DegenerateSumGaussian(), [0.4, -1.0])
    target = np.array([1.0, -1.0]) / np.sqrt(2)
    ok = nd.basis.shape == (1, 2) and np.allclose(abs(nd.basis[0] @ target), 1.0, atol=1e-12)
    energy = float(np.max(nd.score_energy)) if len(nd.basis) else np.inf
    return ok and energy <= 1e-10, f"basis {np.round(nd.basis, 12).tolist()} E[(v.s)^2]={energy:.3e} (tol 1e-10)"


CRITERIA = [c01_exponential_family_vanishing, c02_one_dimensional_reduction, c03_ssharp_psd, c04_gauss_equation,
            c05_coordinate_invariance, c06_connection_identity, c07_monte_carlo_fit, c08_rlct_slopes,
            c09_posterior_mse_rates, c10_moment_identities, c11_null_directions]


def line(fn, passed, detail):
    num, name = fn.__name__[1:3], fn.__name__[4:].replace("_", " ")
    return f"AC{num} {'PASS' if passed else 'FAIL'} {name}: {detail}"


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion, capsys):
    passed, detail = criterion()
    with capsys.disabled():
        print("\n" + line(criterion, passed, detail))
    assert passed, detail


if __name__ == "__main__":
    for fn in CRITERIA:
        print(line(fn, *fn()), flush=True)
