"""Command-line front end.

Exit codes: 0 pass, 1 computation or check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .correction import correction_report
from .errors import FisherRaoError
from .expectation import ExpectationEngine, default_engine
from .models import REGISTRY, builtin_models, get_model
from .simulation import SimulationPlan, fit_expansion, simulate_covariance
from .singular import DEFAULT_N_GRID, NormalCrossingSpec, singular_report
from .verify import run_suite

ENGINES = ("default", "gauss-hermite", "adaptive-grid", "discrete-sum", "monte-carlo")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fisherrao", description="Fisher-Rao geometry and covariance corrections.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp, seed_required=False):
        sp.add_argument("--model", required=True, choices=sorted(REGISTRY))
        sp.add_argument("--theta", required=True, type=_floats, help="comma-separated parameter values")
        sp.add_argument("--dim", type=int, default=None, help="dimension for gaussian-mean")
        sp.add_argument("--engine", choices=ENGINES, default="default")
        sp.add_argument("--quad-order", type=int, default=24)
        sp.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)

    def output_args(sp, default_format):
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default=default_format)

    sp = sub.add_parser("tensors", help="metric, connection, curvature and immersion tensors")
    model_args(sp)
    output_args(sp, "json")

    sp = sub.add_parser("decompose", help="P = 1/2 R# + S# + D with an eigenvalue table")
    model_args(sp)
    output_args(sp, "json")

    sp = sub.add_parser("simulate", help="Monte Carlo covariance and expansion fit")
    model_args(sp, seed_required=True)
    sp.add_argument("--n-grid", type=_ints, required=True)
    sp.add_argument("--replicates", type=int, default=10_000)
    sp.add_argument("--z-threshold", type=float, default=3.0)
    output_args(sp, "csv")

    sp = sub.add_parser("verify", help="invariant suite over the built-in models")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tensoriality-trials", type=int, default=0)
    sp.add_argument("--skip", type=lambda s: tuple(v for v in s.split(",") if v), default=())
    output_args(sp, "json")

    sp = sub.add_parser("singular", help="learning rates for an additive normal-crossing spec")
    sp.add_argument("--spec", type=Path, required=True, help="JSON: terms [{c,k,h}], epsilon, psi0")
    sp.add_argument("--n-grid", type=_floats, default=list(DEFAULT_N_GRID))
    sp.add_argument("--seed", type=int, default=0)
    output_args(sp, "csv")
    return p


def _config(args) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "out"}
    if args.command == "singular":
        cfg["spec_content"] = json.loads(Path(args.spec).read_text())
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=list).encode()).hexdigest()


def _meta(cfg: dict) -> dict:
    return {"version": __version__, "config_hash": config_hash(cfg), "seed": cfg.get("seed")}


def _model(args):
    params = {}
    if args.model == "gaussian-mean":
        params["dim"] = args.dim if args.dim is not None else len(args.theta)
    elif args.dim is not None:
        raise UsageError("--dim only applies to gaussian-mean")
    model = get_model(args.model, **params)
    if len(args.theta) != model.dim:
        raise UsageError(f"--theta needs {model.dim} values for {args.model}, got {len(args.theta)}")
    return model, params


def _engine(args, model) -> ExpectationEngine:
    if args.engine == "default":
        eng = default_engine(model)
    else:
        eng = {
            "gauss-hermite": ExpectationEngine.gauss_hermite,
            "adaptive-grid": ExpectationEngine.adaptive_grid,
            "discrete-sum": ExpectationEngine.discrete_sum,
            "monte-carlo": ExpectationEngine.monte_carlo,
        }[args.engine]()
        if not eng.compatible(model):
            raise UsageError(f"engine {args.engine} cannot integrate over the {args.model} sample space")
    if eng.method == "gauss-hermite" and args.quad_order != eng.order:
        eng = ExpectationEngine.gauss_hermite(order=args.quad_order)
    if eng.method == "monte-carlo":
        eng = ExpectationEngine.monte_carlo(seed=args.seed)
    return eng


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(out: Path | None, files: dict[str, str], primary: str):
    if out is None:
        sys.stdout.write(files[primary])
        return
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)


def _matrix_csv(named: dict[str, np.ndarray]) -> str:
    rows = ["quantity,i,j,value"]
    for name, m in named.items():
        m = np.atleast_2d(m)
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                rows.append(f"{name},{i},{j},{float(m[i, j])!r}")
    return "\n".join(rows) + "\n"


def eigen_table(report) -> str:
    eig = report.eigen_table()
    d = len(eig["P"])
    head = f"{'k':>3}  {'P':>14}  {'R#/2':>14}  {'S#':>14}  {'D':>14}"
    lines = [head, "-" * len(head)]
    for k in range(d):
        lines.append(f"{k:>3}  " + "  ".join(f"{eig[q][k]:>14.8g}" for q in ("P", "half_Rsharp", "Ssharp", "D")))
    return "\n".join(lines) + "\n"


def cmd_tensors(args, cfg) -> int:
    model, _ = _model(args)
    rep = correction_report(model, args.theta, _engine(args, model))
    doc = {"meta": _meta(cfg), "model": model.name, "moments": rep.moments.to_dict(),
           "geometry": rep.geometry.to_dict(), "immersion": rep.immersion.to_dict()}
    csv = _matrix_csv({"g": rep.geometry.g, "Rsharp": rep.geometry.Rsharp, "Ssharp": rep.immersion.Ssharp})
    _emit(args.out, {"tensors.json": _dump(doc), "tensors.csv": csv}, f"tensors.{args.format}")
    return 0


def cmd_decompose(args, cfg) -> int:
    model, _ = _model(args)
    rep = correction_report(model, args.theta, _engine(args, model))
    doc = {"meta": _meta(cfg), "model": model.name, "report": rep.to_dict()}
    csv = _matrix_csv({"P": rep.P_user, "half_Rsharp": 0.5 * rep.Rsharp_user, "Ssharp": rep.Ssharp_user,
                       "D": rep.D_user})
    table = eigen_table(rep)
    _emit(args.out, {"decompose.json": _dump(doc), "decompose.csv": csv, "eigenvalues.txt": table},
          f"decompose.{args.format}")
    if args.out is not None:
        sys.stdout.write(table)
    else:
        sys.stderr.write(table)
    return 0


def cmd_simulate(args, cfg) -> int:
    model, params = _model(args)
    plan = SimulationPlan(model=args.model, theta_true=tuple(args.theta), n_grid=tuple(args.n_grid),
                          replicates=args.replicates, seed=args.seed, model_params=params)
    result = simulate_covariance(plan)
    comparison = fit_expansion(result, correction_report(model, args.theta, _engine(args, model)),
                               z_threshold=args.z_threshold, allow_invalid=True)
    doc = {"meta": _meta(cfg), "valid": result.valid, "fit": comparison.to_dict(), "simulation": result.to_dict()}
    _emit(args.out, {"covariance.csv": result.to_csv(), "fit.json": _dump(doc)},
          "covariance.csv" if args.format == "csv" else "fit.json")
    return 0 if (result.valid and comparison.passed) else 1


def cmd_verify(args, cfg) -> int:
    results = run_suite(builtin_models(), tensoriality_trials=args.tensoriality_trials, skip=args.skip)
    failed = [r for r in results if not r.passed]
    doc = {"meta": _meta(cfg), "checks": len(results), "failed": len(failed),
           "results": [r.to_dict() for r in results]}
    csv = "check,model,theta,value,tol,passed\n" + "".join(
        f"{r.check},{r.model},{' '.join(repr(t) for t in r.theta)},{r.value!r},{r.tol!r},{r.passed}\n"
        for r in results)
    _emit(args.out, {"verify.json": _dump(doc), "verify.csv": csv}, f"verify.{args.format}")
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed\n"
    summary += "".join(f"FAIL {r.check} {r.model} theta={list(r.theta)} value={r.value:.3e} tol={r.tol:.1e}\n"
                       for r in failed)
    (sys.stdout if args.out is not None else sys.stderr).write(summary)
    return 1 if failed else 0


def cmd_singular(args, cfg) -> int:
    spec = NormalCrossingSpec.from_dict(cfg["spec_content"])
    rep = singular_report(spec, args.n_grid)
    doc = {"meta": _meta(cfg), "report": rep.to_dict()}
    _emit(args.out, {"singular.csv": rep.to_csv(), "singular.json": _dump(doc)}, f"singular.{args.format}")
    return 0


COMMANDS = {"tensors": cmd_tensors, "decompose": cmd_decompose, "simulate": cmd_simulate,
            "verify": cmd_verify, "singular": cmd_singular}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on malformed input
    cfg = None
    try:
        cfg = _config(args)
        if args.command == "singular":
            NormalCrossingSpec.from_dict(cfg["spec_content"])
        return COMMANDS[args.command](args, cfg)
    except (UsageError, OSError, json.JSONDecodeError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return 2
    except (FisherRaoError, ValueError, np.linalg.LinAlgError) as exc:
        meta = _meta(cfg) if cfg is not None else {"version": __version__, "config_hash": None,
                                                     "seed": getattr(args, "seed", None)}
        sys.stdout.write(_dump({"meta": meta, "error": type(exc).__name__, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
