"""RAT iLQR: bilevel risk-auto-tuning iLEQG run as receding-horizon MPC.

Each MPC step minimizes ``s0(θ) + d/θ`` over θ with the cross-entropy method,
where ``s0(θ)`` is the iLEQG cost-to-go warm-started from the previous
step's shifted nominal controls, then returns the iLEQG policy at the
selected θ*.  ``d = 0`` short-circuits to the risk-neutral iLQG solve.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from . import cross_entropy as ce
from .dynamics import AffinePolicy, ApproximationError, CostModel, SystemModel, shift_controls
from .ileqg import ILEQGConfig, ILEQGSolution, NeuroticBreakdown, solve

EPISODE_SCHEMA_VERSION = 1


class Mode(str, Enum):
    RAT_ILQR = "rat-ilqr"
    ILQG_BASELINE = "ilqg-baseline"
    ILEQG_FIXED_THETA = "ileqg-fixed-theta"
    ILEQG_THETA_MAX = "ileqg-theta-max"


@dataclass(frozen=True)
class RatIlqrConfig:
    """Solver configuration.

    ``ileqg.theta`` is ignored except in fixed-θ mode, where ``fixed_theta``
    takes precedence when set.  ``ileqg-theta-max`` runs the same
    cross-entropy search but executes the policy at the largest feasible θ
    it sampled.
    """

    kl_bound: float = 0.0
    ileqg: ILEQGConfig = field(default_factory=ILEQGConfig)
    ce: ce.CEConfig = field(default_factory=ce.CEConfig)
    mode: Mode = Mode.RAT_ILQR
    fixed_theta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (self.kl_bound >= 0 and math.isfinite(self.kl_bound)):
            raise ValueError("kl_bound must be finite and >= 0")
        if self.mode is Mode.ILEQG_FIXED_THETA:
            theta = self.ileqg.theta if self.fixed_theta is None else self.fixed_theta
            if not theta > 0:
                raise ValueError("fixed-theta mode needs a positive theta")


@dataclass(frozen=True)
class MpcStepResult:
    policy: AffinePolicy
    theta_star: float
    theta_max_seen: float
    cost_to_go: float
    wall_time: float
    ce_state: ce.CrossEntropyState
    short_circuited: bool = False
    degraded: bool = False
    fallback: bool = False


def _solve_at(model, cost, x0, controls, gains, cfg: ILEQGConfig, theta: float) -> ILEQGSolution:
    return solve(model, cost, x0, controls, replace(cfg, theta=theta), initial_gains=gains)


def solve_once(
    model: SystemModel,
    cost: CostModel,
    x0,
    warm_controls,
    config: RatIlqrConfig,
    state: ce.CrossEntropyState,
    rng: np.random.Generator,
    warm_gains: Optional[np.ndarray] = None,
    map_fn: Optional[Callable] = None,
) -> MpcStepResult:
    """One bilevel solve from ``x0`` (Algorithm "RAT iLQR" for a single MPC step)."""
    t0 = time.perf_counter()
    mode = config.mode
    d = config.kl_bound

    def finish(sol, theta_star, theta_max, new_state, **flags):
        return MpcStepResult(sol.policy, float(theta_star), float(theta_max), sol.cost_to_go,
                             time.perf_counter() - t0, new_state, **flags)

    if mode is Mode.ILQG_BASELINE or (mode is Mode.RAT_ILQR and d == 0.0):
        sol = _solve_at(model, cost, x0, warm_controls, warm_gains, config.ileqg, 0.0)
        return finish(sol, 0.0, 0.0, state, short_circuited=mode is Mode.RAT_ILQR)

    if mode is Mode.ILEQG_FIXED_THETA:
        theta = config.ileqg.theta if config.fixed_theta is None else config.fixed_theta
        sol = _solve_at(model, cost, x0, warm_controls, warm_gains, config.ileqg, theta)
        return finish(sol, theta, theta, state)

    solutions: dict[float, ILEQGSolution] = {}

    def inner(theta: float) -> float:
        sol = _solve_at(model, cost, x0, warm_controls, warm_gains, config.ileqg, theta)
        solutions[theta] = sol
        return sol.cost_to_go

    res = ce.optimize(state, config.ce, inner, d, rng, map_fn=map_fn)

    if mode is Mode.ILEQG_THETA_MAX:
        theta = res.theta_max_seen
        sol = solutions.get(theta) or _solve_at(model, cost, x0, warm_controls, warm_gains, config.ileqg, theta)
        return finish(sol, theta, res.theta_max_seen, res.state, degraded=res.degraded)

    theta_star = res.theta_star
    fallback = False
    try:
        sol = solutions.get(theta_star) or _solve_at(model, cost, x0, warm_controls, warm_gains, config.ileqg, theta_star)
    except NeuroticBreakdown:
        # the Gaussian mean itself may be infeasible: fall back to the best evaluated sample
        theta_star, fallback = res.best_theta, True
        sol = solutions[theta_star]
    return finish(sol, theta_star, max(res.theta_max_seen, theta_star), res.state,
                  degraded=res.degraded, fallback=fallback)


@dataclass
class StepRecord:
    step: int
    state: np.ndarray
    control: np.ndarray
    theta_star: float
    theta_max: float
    cost_to_go: float
    wall_time_s: float
    noise: np.ndarray
    stage_cost: float


@dataclass
class EpisodeLog:
    """Per-step record of one closed-loop MPC episode.

    ``final_state`` is the state after the last applied control; ``aborted``
    and ``error`` describe a solver failure that ended the episode early.
    """

    records: list = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    aborted: bool = False
    error: str = ""

    @property
    def states(self) -> np.ndarray:
        xs = [r.state for r in self.records]
        if self.final_state is not None:
            xs.append(self.final_state)
        return np.array(xs)

    @property
    def controls(self) -> np.ndarray:
        return np.array([r.control for r in self.records])

    @property
    def total_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records))

    def to_jsonl(self, header: Optional[dict] = None, include_timing: bool = True) -> str:
        """Serialize as JSON lines: one header record, then one record per step.

        Step records hold ``step, state, control, theta_star, theta_max,
        cost_to_go, wall_time_s`` (``null`` when timing is suppressed) plus
        the applied ``noise`` and realized ``stage_cost`` for replay.
        """
        head = {"type": "header", "schema_version": EPISODE_SCHEMA_VERSION,
                "aborted": self.aborted, "error": self.error,
                "final_state": None if self.final_state is None else self.final_state.tolist()}
        if header:
            head.update(header)
        lines = [json.dumps(head, sort_keys=True)]
        for r in self.records:
            lines.append(json.dumps({
                "type": "step",
                "step": r.step,
                "state": r.state.tolist(),
                "control": r.control.tolist(),
                "theta_star": r.theta_star,
                "theta_max": r.theta_max,
                "cost_to_go": r.cost_to_go,
                "wall_time_s": r.wall_time_s if include_timing else None,
                "noise": r.noise.tolist(),
                "stage_cost": r.stage_cost,
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        log = cls(aborted=head["aborted"], error=head["error"])
        if head.get("final_state") is not None:
            log.final_state = np.array(head["final_state"])
        for row in rows[1:]:
            log.records.append(StepRecord(
                row["step"], np.array(row["state"]), np.array(row["control"]), row["theta_star"],
                row["theta_max"], row["cost_to_go"], row["wall_time_s"] or 0.0,
                np.array(row["noise"]), row["stage_cost"]))
        return log


NoiseSource = Callable[[np.random.Generator], np.ndarray]


def mpc_run(
    model: SystemModel,
    cost: Union[CostModel, Callable[[int], CostModel]],
    x0,
    config: RatIlqrConfig,
    noise_source: NoiseSource,
    num_steps: int,
    seed: Union[int, np.random.SeedSequence] = 0,
    true_transition: Optional[Callable] = None,
    initial_controls: Optional[np.ndarray] = None,
    ce_state: Optional[ce.CrossEntropyState] = None,
    map_fn: Optional[Callable] = None,
) -> EpisodeLog:
    """Closed-loop receding-horizon episode.

    ``cost`` is a fixed cost model or a factory ``t -> CostModel`` for
    time-varying objectives.  The ground-truth system is
    ``true_transition(x, u) + noise_source(rng)`` (``true_transition``
    defaults to the model's).  Solver and noise draw from independent
    streams spawned from ``seed``, so every method sees the same noise.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    cost_at = cost if callable(cost) and not isinstance(cost, CostModel) else (lambda t: cost)
    f_true = true_transition or model.transition
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    solver_ss, noise_ss = ss.spawn(2)
    solver_rng, noise_rng = np.random.default_rng(solver_ss), np.random.default_rng(noise_ss)

    first_cost = cost_at(0)
    N1 = first_cost.horizon + 1
    controls = np.zeros((N1, model.control_dim)) if initial_controls is None else np.array(initial_controls, dtype=float)
    gains = None
    state = ce_state or ce.CrossEntropyState()
    x = np.asarray(x0, dtype=float).copy()
    log = EpisodeLog()

    for t in range(num_steps):
        c_t = cost_at(t)
        try:
            res = solve_once(model, c_t, x, controls, config, state, solver_rng, warm_gains=gains, map_fn=map_fn)
        except (ce.InfeasibleProblemError, ApproximationError, ArithmeticError) as exc:
            log.aborted, log.error = True, f"step {t}: {exc}"
            break
        state = res.ce_state
        u = res.policy.trajectory.controls[0].copy()
        w = np.asarray(noise_source(noise_rng), dtype=float)
        log.records.append(StepRecord(t, x.copy(), u, res.theta_star, res.theta_max_seen, res.cost_to_go,
                                      res.wall_time, w, float(c_t.stage_cost(0, x, u))))
        x = np.asarray(f_true(x, u), dtype=float) + w
        controls = shift_controls(res.policy.trajectory.controls)
        gains = shift_controls(res.policy.gains)
    log.final_state = x
    return log
