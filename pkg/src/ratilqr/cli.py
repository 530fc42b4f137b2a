"""Command-line front end.

Every subcommand reads a configuration file (see :mod:`ratilqr.config`),
applies ``--set section.key=value`` overrides and writes its artifacts into
``--out``.  Each artifact starts with a reproducibility header holding the
fully resolved configuration and the seed; wall-clock timings are left out
so that reruns are byte-identical.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when the
problem is infeasible (no finite objective, solver abort, unreachable KL
target).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .benchmark.crossing import make_cost, make_model
from .benchmark.experiment import ExperimentReport, run_episode, run_experiment, summarize_episode
from .benchmark.kl import CalibrationError, calibrate_offset, scenario_kl
from .config import ConfigError, RunConfig, load_config, resolved
from .cross_entropy import InfeasibleProblemError
from .dynamics import ApproximationError
from .ileqg import NeuroticBreakdown, solve
from .rat_ilqr import Mode, mpc_run, solve_once

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2
SUBCOMMANDS = ("solve", "run", "experiment", "kl-estimate", "calibrate-kl", "sweep-theta", "compare")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="configuration file")
    common.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory (default ./out)")
    common.add_argument("--threads", type=_positive_int, default=1, metavar="N",
                        help="worker processes for multi-run subcommands")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set solver.kl_bound=7.78 (repeatable)")

    parser = _Parser(prog="ratilqr", description="Risk-auto-tuned iLEQG model predictive control.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "solve": "one bilevel solve from the initial state",
        "run": "one closed-loop MPC episode",
        "experiment": "randomized episodes for each configured method",
        "kl-estimate": "Monte-Carlo KL of the ground-truth noise against the model",
        "calibrate-kl": "fit the mixture offset to a target KL",
        "sweep-theta": "cost-to-go and bilevel objective over a θ grid",
        "compare": "methods across KL levels (θ ratio and tracking study)",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "calibrate-kl":
            p.add_argument("--target", type=float, default=None, help="target KL (overrides kl.target)")
    return parser


# ---------------------------------------------------------------- artifacts

def _header(cfg: RunConfig, seed: int, command: str) -> dict:
    return {"tool": "ratilqr", "version": __version__, "subcommand": command, "seed": seed,
            "config": resolved(cfg)}


def _finite_or_none(x) -> Optional[float]:
    x = float(x)
    return x if math.isfinite(x) else None


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _csv_text(header: dict, fields: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# {json.dumps(header, sort_keys=True, allow_nan=False)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    """CSV cell for a float; non-finite values become empty cells."""
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


def _problem(cfg: RunConfig):
    if cfg.problem == "lq":
        lq = cfg.lq
        return lq.model(), lq.cost(), lq.x0
    sc = cfg.scenario
    return make_model(sc), make_cost(sc, 0), sc.initial_state()


def _require_crossing(cfg: RunConfig, command: str) -> None:
    if cfg.problem != "crossing":
        raise ConfigError(f"problem.type: {command} needs the crossing scenario")


# ---------------------------------------------------------------- commands

def cmd_solve(cfg: RunConfig, args, out: Path) -> int:
    model, cost, x0 = _problem(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    controls = np.zeros((cost.horizon + 1, model.control_dim))
    doc = {**_header(cfg, args.seed, "solve"), "mode": cfg.solver.mode.value, "kl_bound": cfg.solver.kl_bound}
    try:
        res = solve_once(model, cost, x0, controls, cfg.solver, cfg.ce_state, rng)
    except (InfeasibleProblemError, NeuroticBreakdown, ApproximationError) as exc:
        doc.update(feasible=False, error=str(exc))
        _write_json(out / "solution.json", doc)
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    d = cfg.solver.kl_bound
    objective = res.cost_to_go + d / res.theta_star if res.theta_star > 0 else res.cost_to_go
    doc.update(
        feasible=True,
        error="",
        theta_star=res.theta_star,
        theta_max_seen=res.theta_max_seen,
        cost_to_go=res.cost_to_go,
        objective=objective,
        short_circuited=res.short_circuited,
        degraded=res.degraded,
        fallback=res.fallback,
        controls=res.policy.trajectory.controls.tolist(),
        states=res.policy.trajectory.states.tolist(),
        gains=res.policy.gains.tolist(),
        ce_state={"mu": res.ce_state.mu, "sigma": res.ce_state.sigma,
                  "mu_init": res.ce_state.mu_init, "sigma_init": res.ce_state.sigma_init},
    )
    _write_json(out / "solution.json", doc)
    return EXIT_OK


def cmd_run(cfg: RunConfig, args, out: Path) -> int:
    header = _header(cfg, args.seed, "run")
    if cfg.problem == "crossing":
        log = run_episode(cfg.scenario, cfg.solver, args.seed, 0, ce_state=cfg.ce_state)
        r = summarize_episode(log, cfg.scenario, cfg.solver.mode.value, 0)
        summary = {"min_sep": r.min_sep, "collided": r.collided, "tracking_err": r.tracking_err,
                   "mean_theta_ratio": r.mean_theta_ratio}
    else:
        lq = cfg.lq
        model = lq.model()
        chol = np.linalg.cholesky(lq.W)

        def noise(rng):
            return chol @ rng.standard_normal(len(lq.x0))

        log = mpc_run(model, lq.cost(), lq.x0, cfg.solver, noise, lq.episode_steps,
                      seed=np.random.SeedSequence(args.seed), ce_state=cfg.ce_state)
        summary = {}
    summary.update(total_cost=log.total_cost, steps=len(log.records), aborted=log.aborted, error=log.error)
    (out / "episode.jsonl").write_text(log.to_jsonl(header, include_timing=False))
    _write_json(out / "summary.json", {**header, "summary": summary})
    return EXIT_INFEASIBLE if log.aborted else EXIT_OK


def _solvers(cfg: RunConfig, kl_bound: Optional[float] = None) -> dict:
    d = cfg.solver.kl_bound if kl_bound is None else kl_bound
    return {m: replace(cfg.solver, mode=Mode(m), kl_bound=d) for m in cfg.methods}


SUMMARY_FIELDS = ("method", "num_runs", "failed_runs", "collisions", "min_sep_mean", "min_sep_std",
                  "tracking_err_mean", "tracking_err_std", "theta_ratio_mean", "theta_ratio_std")


def _summary_rows(report: ExperimentReport, prefix: Sequence = ()) -> list:
    rows = []
    for method, s in report.summary().items():
        rows.append([*prefix, method, s["num_runs"], s["failed_runs"], s["collisions"],
                     _num(s["min_sep"]["mean"]), _num(s["min_sep"]["std"]),
                     _num(s["tracking_err"]["mean"]), _num(s["tracking_err"]["std"]),
                     _num(s["theta_ratio"]["mean"]), _num(s["theta_ratio"]["std"])])
    return rows


def _write_episode_logs(report: ExperimentReport, header: dict, directory: Path, tag: str = "") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for (method, run_id), log in sorted(report.logs.items()):
        head = {**header, "method": method, "run_id": run_id}
        (directory / f"{tag}{method}-{run_id:03d}.jsonl").write_text(log.to_jsonl(head, include_timing=False))


def cmd_experiment(cfg: RunConfig, args, out: Path) -> int:
    _require_crossing(cfg, "experiment")
    header = _header(cfg, args.seed, "experiment")
    report = run_experiment(cfg.scenario, _solvers(cfg), cfg.num_runs, args.seed, workers=args.threads,
                            keep_logs=True, ce_state=cfg.ce_state)
    (out / "runs.csv").write_text(report.to_csv([json.dumps(header, sort_keys=True)]))
    (out / "summary.json").write_text(report.to_json(header))
    if len(cfg.methods) > 1:
        (out / "comparison.csv").write_text(_csv_text(header, SUMMARY_FIELDS, _summary_rows(report)))
    _write_episode_logs(report, header, out / "episodes")
    return EXIT_INFEASIBLE if any(r.aborted for r in report.runs) else EXIT_OK


def cmd_compare(cfg: RunConfig, args, out: Path) -> int:
    _require_crossing(cfg, "compare")
    if not cfg.kl_levels:
        raise ConfigError("experiment.kl_levels: compare needs at least one KL level")
    header = _header(cfg, args.seed, "compare")
    rows, runs, levels = [], [], []
    aborted = False
    for i, d in enumerate(cfg.kl_levels):
        if cfg.mixture_offsets:
            offset = cfg.mixture_offsets[i]
        else:
            try:
                offset = calibrate_offset(cfg.scenario, d, cfg.kl.n_samples, args.seed, cfg.kl.max_offset)
            except CalibrationError as exc:
                print(f"infeasible: {exc}", file=sys.stderr)
                return EXIT_INFEASIBLE
        scenario = cfg.scenario.with_updates(mixture_offset=offset)
        report = run_experiment(scenario, _solvers(cfg, d), cfg.num_runs, args.seed, workers=args.threads,
                                ce_state=cfg.ce_state)
        rows += _summary_rows(report, (repr(float(d)), repr(float(offset))))
        for r in report.runs:
            runs.append([repr(float(d)), r.method, r.run_id, _num(r.min_sep), int(r.collided), _num(r.tracking_err),
                         _num(r.mean_theta_ratio), _num(r.total_cost), r.steps, int(r.aborted)])
            aborted |= r.aborted
        levels.append({"kl_level": d, "mixture_offset": offset, "summary": report.summary()})
    (out / "compare.csv").write_text(_csv_text(header, ("kl_level", "mixture_offset") + SUMMARY_FIELDS, rows))
    (out / "runs.csv").write_text(_csv_text(
        header, ("kl_level", "method", "run_id", "min_sep", "collided", "tracking_err", "mean_theta_ratio",
                 "total_cost", "steps", "aborted"), runs))
    _write_json(out / "compare.json", {**header, "levels": levels})
    return EXIT_INFEASIBLE if aborted else EXIT_OK


def cmd_kl_estimate(cfg: RunConfig, args, out: Path) -> int:
    _require_crossing(cfg, "kl-estimate")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    est = scenario_kl(cfg.scenario, cfg.kl.n_samples, rng)
    stages = cfg.scenario.horizon + 1
    doc = {**_header(cfg, args.seed, "kl-estimate"), "kl": _finite_or_none(est.value),
           "stderr": _finite_or_none(est.stderr), "finite": math.isfinite(est.value),
           "n_samples": est.n_samples, "stages": stages, "mixture_offset": cfg.scenario.mixture_offset,
           "mixture": cfg.scenario.mixture().to_dict()}
    _write_json(out / "kl.json", doc)
    return EXIT_OK


def cmd_calibrate_kl(cfg: RunConfig, args, out: Path) -> int:
    _require_crossing(cfg, "calibrate-kl")
    target = args.target if args.target is not None else cfg.kl.target
    if target is None or not target > 0 or not math.isfinite(target):
        raise ConfigError("kl.target: calibrate-kl needs a finite target KL > 0 (use --target or kl.target)")
    try:
        offset = calibrate_offset(cfg.scenario, target, cfg.kl.n_samples, args.seed, cfg.kl.max_offset)
    except CalibrationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    calibrated = cfg.scenario.with_updates(mixture_offset=offset)
    # independent re-estimate on a fresh stream
    check = scenario_kl(calibrated, cfg.kl.n_samples, np.random.default_rng(np.random.SeedSequence([args.seed, 1])))
    rel = abs(check.value - target) / target
    doc = {**_header(cfg, args.seed, "calibrate-kl"), "target": target, "mixture_offset": offset,
           "mixture": calibrated.mixture().to_dict(), "reestimate": {"kl": check.value, "stderr": check.stderr,
                                                                    "n_samples": check.n_samples},
           "relative_error": rel, "within_2_percent": rel <= 0.02}
    _write_json(out / "mixture.json", doc)
    (out / "calibrated.ini").write_text(
        f"# calibrated for KL {target!r} (seed {args.seed}, n_samples {cfg.kl.n_samples})\n"
        f"[scenario]\nmixture_offset = {offset!r}\n\n[solver]\nkl_bound = {target!r}\n")
    return EXIT_OK


def cmd_sweep_theta(cfg: RunConfig, args, out: Path) -> int:
    model, cost, x0 = _problem(cfg)
    d = cfg.solver.kl_bound
    controls = np.zeros((cost.horizon + 1, model.control_dim))
    rows = []
    for theta in cfg.sweep.grid():
        try:
            sol = solve(model, cost, x0, controls, replace(cfg.solver.ileqg, theta=float(theta)))
            s0 = sol.cost_to_go
            rows.append([repr(float(theta)), 1, _num(s0), _num(s0 + d / theta), int(sol.converged)])
        except (NeuroticBreakdown, ApproximationError):
            rows.append([repr(float(theta)), 0, "", "", 0])
    header = _header(cfg, args.seed, "sweep-theta")
    (out / "sweep.csv").write_text(_csv_text(header, ("theta", "feasible", "s0", "objective", "converged"), rows))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "run": cmd_run,
    "experiment": cmd_experiment,
    "kl-estimate": cmd_kl_estimate,
    "calibrate-kl": cmd_calibrate_kl,
    "sweep-theta": cmd_sweep_theta,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
