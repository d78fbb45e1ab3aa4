"""Command-line front end: ``damageid {generate,update,identify,compare,full}``.

All artifacts live in one output directory::

    scenario.json                 scenario definition and ground truth
    intact.json, damaged.json     measurement files
    posterior.json/.csv           stage-1 report
    damage.json/.csv, bo_trace.csv  stage-2 report
    compare.json/.csv, compare_elements.csv  regularizer comparison

Exit codes: 0 success, 2 usage or input error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import reports
from .bayes_update import OUTER_MAX_ITER, OUTER_TOL, HyperPriors, hyperpriors_dict, run_model_update
from .bench_sim import (
    DAMAGED,
    INTACT,
    SCENARIOS,
    Scenario,
    load_measurements,
    make_scenario,
    measurement_file_dict,
    synth_measurements,
)
from .exceptions import DamageIDError
from .sparse_id import METHODS, relative_error, run_damage_id
from .structural_model import assemble, load_model_definition

logger = logging.getLogger("damageid")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 2, 3
STAGE2_MAX_ITER = 20


class InputError(Exception):
    """Missing or malformed input; maps to exit code 2."""


# -- argument parsing -----------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", choices=SCENARIOS, default="shear10")
    p.add_argument("--noise", type=float, default=None, help="noise level (fraction)")
    p.add_argument("--n-obs", type=int, default=None, help="number of measurement sets")
    p.add_argument("--beta-lambda", type=float, default=None)
    p.add_argument("--beta-phi", type=float, default=None)
    hp = HyperPriors()
    p.add_argument("--a0", type=float, default=hp.a0)
    p.add_argument("--b0", type=float, default=hp.b0)
    p.add_argument("--a1", type=float, default=hp.a1)
    p.add_argument("--b1", type=float, default=hp.b1)
    p.add_argument("--lambda-min", type=float, default=0.01)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=OUTER_TOL, help="outer relative tolerance")
    p.add_argument("--trials", type=int, default=1, help="repeated trials (compare)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for repeated trials")
    p.add_argument("--n-samples", type=int, default=100_000, help="Monte Carlo draws for marginals")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damageid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write scenario and measurement files")
    _common(p)

    p = sub.add_parser("update", help="stage 1: intact model updating")
    _common(p)
    p.add_argument("--intact", type=Path, help="intact measurement file (default OUT/intact.json)")
    p.add_argument("--scenario-file", type=Path, help="scenario file (default OUT/scenario.json)")
    p.add_argument("--model", type=Path, help="model definition JSON (overrides the scenario's model)")

    p = sub.add_parser("identify", help="stage 2: sparse damage identification")
    _common(p)
    p.add_argument("--posterior", type=Path, help="stage-1 report (default OUT/posterior.json)")
    p.add_argument("--damaged", type=Path, help="damaged measurement file (default OUT/damaged.json)")
    p.add_argument("--scenario-file", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--lam", type=float, default=None, help="fixed STLS threshold (skips optimization)")

    p = sub.add_parser("compare", help="STLS vs LASSO vs ridge with the exact intact baseline")
    _common(p)
    p.add_argument("--damaged", type=Path)
    p.add_argument("--scenario-file", type=Path)

    p = sub.add_parser("full", help="generate, update, identify and compare")
    _common(p)
    return parser


# -- helpers --------------------------------------------------------------


def _path(args, name, default):
    path = getattr(args, name, None) or args.out / default
    if not Path(path).is_file():
        raise InputError(f"input file not found: {path}")
    return Path(path)


def _load_scenario(args, required=True):
    path = getattr(args, "scenario_file", None) or args.out / "scenario.json"
    if not Path(path).is_file():
        if required:
            raise InputError(f"scenario file not found: {path}")
        return None
    try:
        return Scenario.from_dict(reports.read_json(path)["scenario"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed scenario file {path}: {exc}") from exc


def _system(args, scenario):
    model_path = getattr(args, "model", None)
    if model_path is not None:
        if not Path(model_path).is_file():
            raise InputError(f"model file not found: {model_path}")
        return assemble(load_model_definition(model_path))
    if scenario is None:
        raise InputError("need --model or a scenario file to build the structural model")
    return scenario.system


def _load_measurements(path):
    try:
        return load_measurements(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed measurement file {path}: {exc}") from exc


def _betas(args, scenario):
    default = scenario.betas if scenario is not None else (1.0, 1.0)
    return (
        args.beta_lambda if args.beta_lambda is not None else default[0],
        args.beta_phi if args.beta_phi is not None else default[1],
    )


def _scenario_from_args(args) -> Scenario:
    overrides = {}
    if args.noise is not None:
        overrides["noise_level"] = args.noise
    if args.n_obs is not None:
        overrides["n_observations"] = args.n_obs
    return make_scenario(args.scenario, seed=args.seed, **overrides)


# -- commands -------------------------------------------------------------


def cmd_generate(args) -> int:
    try:
        scenario = _scenario_from_args(args)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    settings = {"command": "generate", "scenario": scenario.to_dict()}
    prov = reports.provenance(settings, args.seed)
    reports.write_json(args.out / "scenario.json", {"scenario": scenario.to_dict(), "provenance": prov})
    for stage in (INTACT, DAMAGED):
        doc = measurement_file_dict(scenario, stage, synth_measurements(scenario, stage))
        doc["provenance"].update(config_hash=prov["config_hash"], version=prov["version"])
        reports.write_json(args.out / f"{stage}.json", doc)
    print(f"wrote scenario {scenario.name} (seed {scenario.seed}) to {args.out}")
    return EXIT_OK


def cmd_update(args) -> int:
    scenario = _load_scenario(args, required=getattr(args, "model", None) is None)
    system = _system(args, scenario)
    measured = _load_measurements(_path(args, "intact", "intact.json"))
    hp = HyperPriors(args.a0, args.b0, args.a1, args.b1)
    betas = _betas(args, scenario)
    post = run_model_update(
        system, measured, hp, outer_tol=args.tol, outer_max=OUTER_MAX_ITER, betas=betas,
        n_samples=args.n_samples, seed=args.seed,
    )
    settings = {
        "command": "update",
        "hyperpriors": hyperpriors_dict(hp),
        "betas": list(betas),
        "outer_tol": args.tol,
        "n_samples": args.n_samples,
        "n_observations": len(measured),
    }
    truth = scenario.theta_intact_true if scenario is not None else None
    reports.write_json(args.out / "posterior.json", reports.posterior_report(post, settings, args.seed, truth))
    reports.write_csv(args.out / "posterior.csv", reports.POSTERIOR_COLUMNS, reports.posterior_rows(post))
    status = "converged" if post.converged else "NOT converged"
    print(f"stage 1 {status} after {post.n_iterations} iterations")
    return EXIT_OK if post.converged else EXIT_NONCONVERGED


def cmd_identify(args) -> int:
    scenario = _load_scenario(args, required=getattr(args, "model", None) is None)
    system = _system(args, scenario)
    posterior = reports.read_json(_path(args, "posterior", "posterior.json"))
    try:
        theta_intact = np.asarray(posterior["theta_hat"], dtype=float)
    except KeyError as exc:
        raise InputError("posterior report lacks theta_hat") from exc
    measured = _load_measurements(_path(args, "damaged", "damaged.json"))
    betas = _betas(args, scenario)
    res = run_damage_id(
        system, theta_intact, measured, bounds=(args.lambda_min, args.lambda_max), outer_tol=args.tol,
        outer_max=STAGE2_MAX_ITER, betas=betas, lam=getattr(args, "lam", None), seed=args.seed,
    )
    settings = {
        "command": "identify",
        "betas": list(betas),
        "lambda_bounds": [args.lambda_min, args.lambda_max],
        "lam": getattr(args, "lam", None),
        "outer_tol": args.tol,
        "baseline_hash": reports.config_hash({"theta_hat": posterior["theta_hat"]}),
    }
    truth = scenario.theta_dmg_true if scenario is not None else None
    reports.write_json(args.out / "damage.json", reports.damage_report(res, settings, args.seed, truth))
    reports.write_csv(args.out / "damage.csv", reports.DAMAGE_COLUMNS, reports.damage_rows(res))
    reports.write_csv(args.out / "bo_trace.csv", reports.BO_TRACE_COLUMNS, reports.bo_trace_rows(res))
    status = "converged" if res.converged else "NOT converged"
    print(f"stage 2 {status} after {res.n_iterations} iterations; support {res.support}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def compare_trial(scenario: Scenario, measured, betas, bounds, tol, seed):
    """All three regularizers on one damaged data set with the exact intact baseline."""
    out = []
    for method in METHODS:
        res = run_damage_id(
            scenario.system, scenario.theta_intact_true, measured, bounds=bounds, outer_tol=tol,
            outer_max=STAGE2_MAX_ITER, betas=betas, method=method, seed=seed,
        )
        out.append((method, res))
    return out


def _compare_job(job):
    trial, scenario, measured, betas, bounds, tol = job
    if measured is None:
        measured = synth_measurements(scenario, DAMAGED)
    return trial, scenario, compare_trial(scenario, measured, betas, bounds, tol, scenario.seed)


def cmd_compare(args) -> int:
    if args.trials < 1 or args.jobs < 1:
        raise InputError("--trials and --jobs must be >= 1")
    scenario = _load_scenario(args)
    measured = _load_measurements(_path(args, "damaged", "damaged.json"))
    if args.trials > 1 and scenario.name not in SCENARIOS:
        raise InputError("repeated trials need a named scenario")
    betas = _betas(args, scenario)
    bounds = (args.lambda_min, args.lambda_max)
    jobs = [(0, scenario, measured, betas, bounds, args.tol)]
    for t in range(1, args.trials):
        sc = make_scenario(
            scenario.name, seed=scenario.seed + t, noise_level=scenario.noise_level,
            n_observations=scenario.n_observations,
        )
        jobs.append((t, sc, None, betas, bounds, args.tol))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]

    rows, element_rows, trials = [], [], []
    for trial, sc, per_method in results:
        errors = {}
        for method, res in per_method:
            err = relative_error(res.theta_dmg, sc.theta_dmg_true)
            errors[method] = err
            rows.append((trial, sc.seed, method, err, res.n_iterations, res.converged))
            for i, (v, t) in enumerate(zip(res.theta_dmg, sc.theta_dmg_true)):
                element_rows.append((trial, method, i, float(v), float(t)))
        ordered = errors["stls"] < errors["lasso"] < errors["ridge"]
        trials.append({"trial": trial, "seed": sc.seed, "errors": errors, "ordered": ordered})
    medians = {m: float(np.median([t["errors"][m] for t in trials])) for m in METHODS}
    settings = {
        "command": "compare", "scenario": scenario.name, "trials": args.trials, "betas": list(betas),
        "lambda_bounds": list(bounds), "outer_tol": args.tol,
    }
    summary = {
        "trials": trials,
        "median_relative_error": medians,
        "ordered_fraction": float(np.mean([t["ordered"] for t in trials])),
        "provenance": reports.provenance(settings, args.seed),
    }
    reports.write_json(args.out / "compare.json", summary)
    reports.write_csv(args.out / "compare.csv", reports.COMPARE_COLUMNS, rows)
    reports.write_csv(args.out / "compare_elements.csv", reports.COMPARE_ELEMENT_COLUMNS, element_rows)
    print("median relative error: " + ", ".join(f"{m} {medians[m]:.4f}" for m in METHODS))
    return EXIT_OK


def cmd_full(args) -> int:
    codes = [cmd_generate(args), cmd_update(args), cmd_identify(args), cmd_compare(args)]
    return max(codes)


COMMANDS = {
    "generate": cmd_generate,
    "update": cmd_update,
    "identify": cmd_identify,
    "compare": cmd_compare,
    "full": cmd_full,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"damageid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DamageIDError as exc:
        print(f"damageid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (OSError, ValueError) as exc:
        print(f"damageid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
