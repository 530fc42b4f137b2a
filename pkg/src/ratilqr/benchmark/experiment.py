"""Closed-loop evaluation protocol for the crossing scenario."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..cross_entropy import CrossEntropyState
from ..rat_ilqr import EpisodeLog, RatIlqrConfig, mpc_run
from .crossing import (
    ScenarioConfig,
    make_cost,
    make_model,
    min_separation,
    sample_true_noise,
    tracking_error,
)

REPORT_SCHEMA_VERSION = 1
CSV_FIELDS = ("method", "run_id", "min_sep", "collided", "tracking_err", "mean_theta_ratio",
              "total_cost", "steps", "aborted")


@dataclass(frozen=True)
class RunResult:
    method: str
    run_id: int
    min_sep: float
    collided: bool
    tracking_err: float
    mean_theta_ratio: float
    total_cost: float
    steps: int
    aborted: bool
    error: str = ""


@dataclass
class ExperimentReport:
    runs: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)  # (method, run_id) -> EpisodeLog

    def methods(self) -> list[str]:
        seen = []
        for r in self.runs:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def rows(self, method: str) -> list[RunResult]:
        return sorted((r for r in self.runs if r.method == method), key=lambda r: r.run_id)

    def summary(self) -> dict:
        out = {}
        for m in self.methods():
            rows = self.rows(m)
            ok = [r for r in rows if not r.aborted]
            out[m] = {
                "num_runs": len(rows),
                "failed_runs": len(rows) - len(ok),
                "collisions": sum(r.collided for r in rows),
                "single_sample": len(ok) == 1,
                "min_sep": _stats([r.min_sep for r in ok]),
                "tracking_err": _stats([r.tracking_err for r in ok]),
                "theta_ratio": _stats([r.mean_theta_ratio for r in ok]),
            }
        return out

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for m in self.methods():
            for r in self.rows(m):
                w.writerow([r.method, r.run_id, _fmt(r.min_sep), int(r.collided), _fmt(r.tracking_err),
                            _fmt(r.mean_theta_ratio), _fmt(r.total_cost), r.steps, int(r.aborted)])
        return buf.getvalue()

    def to_json(self, header: Optional[dict] = None) -> str:
        doc = {"schema_version": REPORT_SCHEMA_VERSION, "summary": self.summary(),
               "tracking_err_definition": "time-averaged robot position deviation from the reference [m]"}
        if header:
            doc.update(header)
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def _stats(xs: Sequence[float]) -> dict:
    if not xs:
        return {"mean": 0.0, "std": 0.0, "n": 0}
    a = np.asarray(xs, dtype=float)
    std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
    return {"mean": float(a.mean()), "std": std, "n": int(len(a))}


def run_seed(seed: int, run_id: int) -> np.random.SeedSequence:
    """Per-run seed, shared by every method so they face identical noise and starts."""
    return np.random.SeedSequence([seed, run_id])


def run_episode(scenario: ScenarioConfig, solver: RatIlqrConfig, seed: int, run_id: int,
                mixture_offset: Optional[float] = None,
                ce_state: Optional[CrossEntropyState] = None) -> EpisodeLog:
    start_ss, episode_ss = run_seed(seed, run_id).spawn(2)
    start_rng = np.random.default_rng(start_ss)
    half = np.asarray(scenario.pedestrian_start_range, dtype=float)
    shift = start_rng.uniform(-half, half)
    x0 = scenario.initial_state(shift)
    model = make_model(scenario)
    mixture = scenario.mixture(mixture_offset)
    W = scenario.W

    def noise(rng):
        return sample_true_noise(mixture, W, rng)

    return mpc_run(model, lambda t: make_cost(scenario, t), x0, solver, noise,
                   scenario.episode_steps, seed=episode_ss, ce_state=ce_state)


def summarize_episode(log: EpisodeLog, scenario: ScenarioConfig, method: str, run_id: int) -> RunResult:
    states = log.states
    ratios = [r.theta_star / r.theta_max for r in log.records if r.theta_max > 0]
    sep = min_separation(states, scenario.agent_diameter) if len(states) else math.nan
    return RunResult(
        method=method,
        run_id=run_id,
        min_sep=sep,
        collided=bool(sep < 0) if math.isfinite(sep) else False,
        tracking_err=tracking_error(states, scenario) if len(states) else 0.0,
        mean_theta_ratio=float(np.mean(ratios)) if ratios else 0.0,
        total_cost=log.total_cost,
        steps=len(log.records),
        aborted=log.aborted,
        error=log.error,
    )


def _one(args):
    scenario, method, solver, seed, run_id, keep_log, ce_state = args
    log = run_episode(scenario, solver, seed, run_id, ce_state=ce_state)
    return summarize_episode(log, scenario, method, run_id), (log if keep_log else None)


def run_experiment(
    scenario: ScenarioConfig,
    solvers: dict,
    num_runs: int,
    seed: int,
    workers: int = 1,
    keep_logs: bool = False,
    ce_state: Optional[CrossEntropyState] = None,
) -> ExperimentReport:
    """``num_runs`` randomized episodes per named solver configuration.

    Run ``i`` of every method uses the same pedestrian start and ground-truth
    noise stream.  Results are ordered by method then run index regardless
    of how runs are scheduled.
    """
    jobs = [(scenario, name, cfg, seed, i, keep_logs, ce_state) for name, cfg in solvers.items() for i in range(num_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    report = ExperimentReport()
    for res, log in results:
        report.runs.append(res)
        if log is not None:
            report.logs[(res.method, res.run_id)] = log
    report.runs.sort(key=lambda r: (list(solvers).index(r.method), r.run_id))
    return report
