"""Command-line entry point.

Subcommands bind instance/plan files to the solvers:

    validate    check the standing assumptions of an instance
    riccati     solve the two matrix equations, write trajectory CSVs
    aode        solve the advanced propagator and its martingale loading
    simulate    run the coupled forward/backward Monte Carlo solve
    synthesize  full pipeline: transforms, coupled solve, laws, costs
    verify      structural-identity checks with pass/fail summary
    study       run the study families named in a plan file

Exit codes: 0 success, 2 validation failure, 3 solver divergence or
conditioning failure, 4 verification/study failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import SCHEMA, load_table, spec_from_dict
from .harness import (
    ExperimentPlan,
    emit_reports,
    load_plan,
    run_nodelay_reduction,
    run_perturbation_test,
    run_riccati_convergence,
    run_verify,
    solve_pipeline,
)
from .model import ConditioningError, GridFn, ModelError, validate_assumptions
from .riccati import (
    PicardDivergenceError,
    SolverError,
    compute_gamma,
    solve_aode,
    solve_delayed_riccati_sigma,
    solve_L,
)
from .stochastic import ConditionalEstimator, generate_brownian, solve_dabsde
from .synthesis import evaluate_cost, optimal_cost_formula, solve_controlled

log = logging.getLogger("delaylq")

_STUDY_RUNNERS = {
    "perturbation": run_perturbation_test,
    "nodelay-reduction": run_nodelay_reduction,
    "riccati-convergence": run_riccati_convergence,
    "verify": run_verify,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaylq", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-schema", action="store_true", help="print the config schema and exit")
    sub = parser.add_subparsers(dest="command")
    for name in ("validate", "riccati", "aode", "simulate", "synthesize", "verify", "study"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="instance file (plan file for 'study')")
        p.add_argument("--seed", type=int, default=7)
        p.add_argument("--paths", type=int, default=10_000)
        p.add_argument("--grid-m", type=int, default=None, help="override steps-per-delay")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--out", default="delaylq-out")
        p.add_argument("--format", choices=["csv", "binary"], default="csv")
        p.add_argument("--figures", action="store_true")
        p.add_argument("--workers", type=int, default=1, help="worker hint; results are worker-invariant")
    return parser


def _load_instance(args):
    table = load_table(args.config)
    if args.grid_m is not None:
        table.setdefault("grid", {})["m"] = args.grid_m
    return spec_from_dict(table)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_resolved(args, out: Path):
    resolved = {k: v for k, v in vars(args).items() if k != "dump_schema"}
    log.info("resolved configuration: %s", json.dumps(resolved, sort_keys=True, default=str))
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=1, sort_keys=True, default=str))


def _write_ensemble(ens, out: Path, name: str, fmt: str):
    path = out / f"{name}.{'csv' if fmt == 'csv' else 'bin'}"
    if fmt == "csv":
        ens.to_csv(path)
    else:
        ens.to_binary(path)
    return path


def _cmd_validate(args) -> int:
    spec = _load_instance(args)
    out = _outdir(args)
    _log_resolved(args, out)
    report = validate_assumptions(spec)
    (out / "assumptions.txt").write_text(report.summary() + "\n")
    print(report.summary())
    return 0 if report.a3_ok else 2


def _cmd_riccati(args) -> int:
    spec = _load_instance(args)
    out = _outdir(args)
    _log_resolved(args, out)
    sigma, diag = solve_delayed_riccati_sigma(spec, tol=args.tol)
    gain = solve_L(spec, sigma)
    sigma.to_csv(out / "sigma.csv")
    gain.to_csv(out / "gain.csv")
    (out / "sigma.diagnostics.txt").write_text(diag.summary() + "\n")
    print(f"wrote sigma.csv and gain.csv to {out}")
    return 0


def _cmd_aode(args) -> int:
    spec = _load_instance(args)
    out = _outdir(args)
    _log_resolved(args, out)
    sigma, _ = solve_delayed_riccati_sigma(spec, tol=args.tol)
    g = spec.grid
    dw = spec.derived()
    ah = np.zeros_like(spec.A.values)
    for q in range(2 * g.idx_s, 2 * g.idx_T + 1):
        sv = sigma.read_past(q, 1)
        ah[q] = spec.A.values[q] - 2.0 * sv @ dw.qt[q]
    upsilon, positive, diag = solve_aode(GridFn(g, ah), spec.Bbar, tol=args.tol)
    gamma = compute_gamma(upsilon, spec.Bbar)
    upsilon.to_csv(out / "upsilon.csv")
    gamma.to_csv(out / "gamma.csv")
    (out / "aode.diagnostics.txt").write_text(
        diag.summary() + f"\npositivity_surrogate={positive}\n"
    )
    print(f"advanced propagator positive: {positive}")
    return 0


def _cmd_simulate(args) -> int:
    spec = _load_instance(args)
    out = _outdir(args)
    _log_resolved(args, out)
    sigma, _ = solve_delayed_riccati_sigma(spec, tol=args.tol)
    bundle = generate_brownian(args.seed, args.paths, spec.grid)
    dab = solve_dabsde(spec, sigma, bundle, ConditionalEstimator())
    for name, ens in (("xbar", dab.xbar), ("lambda", dab.lam), ("gamma", dab.gam)):
        _write_ensemble(ens, out, name, args.format)
    (out / "dabsde.diagnostics.txt").write_text(dab.diag.summary() + "\n")
    if not dab.converged:
        print("coupled solve did not converge; diagnostics written", file=sys.stderr)
        return 3
    print(f"wrote ensembles to {out}")
    return 0


def _cmd_synthesize(args) -> int:
    spec = _load_instance(args)
    out = _outdir(args)
    _log_resolved(args, out)
    pipe = solve_pipeline(spec, args.seed, args.paths)
    pipe.sigma.to_csv(out / "sigma.csv")
    pipe.gain.to_csv(out / "gain.csv")
    _write_ensemble(pipe.shift, out, "shift", args.format)
    for name, law in (("control_feedback", pipe.feedback_law), ("control_openloop", pipe.openloop_law)):
        from .stochastic.ensembles import PathEnsemble

        ens = PathEnsemble(spec.grid, law.samples, name=name, seed=args.seed)
        _write_ensemble(ens, out, name, args.format)
    cp = solve_controlled(spec, pipe.feedback_law.samples, pipe.bundle, pipe.est, projectors=pipe.projectors)
    mc = evaluate_cost(spec, pipe.feedback_law, pipe.bundle, pipe.est, solved=cp)
    formula = optimal_cost_formula(spec, pipe.sigma, pipe.dab.lam, pipe.dab.gam, mats=pipe.dab.mats)
    report = mc.summary() + "\n" + formula.summary() + "\n"
    (out / "cost.txt").write_text(report)
    print(report)
    return 0


def _plan_from_args(args) -> ExperimentPlan:
    table = load_table(args.config)
    if "plan" in table:
        plan = load_plan(args.config)
    else:
        plan = ExperimentPlan(spec_source=table)
    plan.seed = args.seed
    plan.paths = args.paths
    if args.grid_m is not None:
        plan.grid_m = args.grid_m
    return plan


def _cmd_verify(args) -> int:
    out = _outdir(args)
    _log_resolved(args, out)
    plan = _plan_from_args(args)
    result = run_verify(plan)
    emit_reports([result], out, figures=args.figures)
    print(result.summary())
    return 0 if result.passed else 4


def _cmd_study(args) -> int:
    out = _outdir(args)
    _log_resolved(args, out)
    plan = _plan_from_args(args)
    results = []
    for study in plan.studies:
        if study not in _STUDY_RUNNERS:
            raise ModelError(f"unknown study {study!r}; choose from {sorted(_STUDY_RUNNERS)}")
        results.append(_STUDY_RUNNERS[study](plan))
    emit_reports(results, out, figures=args.figures)
    for res in results:
        print(res.summary())
    return 0 if all(r.passed for r in results) else 4


_COMMANDS = {
    "validate": _cmd_validate,
    "riccati": _cmd_riccati,
    "aode": _cmd_aode,
    "simulate": _cmd_simulate,
    "synthesize": _cmd_synthesize,
    "verify": _cmd_verify,
    "study": _cmd_study,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.dump_schema:
        print(SCHEMA)
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except (ModelError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (PicardDivergenceError, ConditioningError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
