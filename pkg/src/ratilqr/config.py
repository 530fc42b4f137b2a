"""Plain-text configuration files (INI-style ``key = value`` in sections).

Sections
--------
``[problem]``
    ``type = crossing | lq``
``[scenario]``
    any :class:`~ratilqr.benchmark.crossing.ScenarioConfig` field, e.g.
    ``dt``, ``horizon``, ``noise_diag``, ``tracking_weights``,
    ``mixture_offset``.  Vectors are comma separated; nested tuples use
    ``;`` between rows.
``[lq]``
    ``A``, ``B``, ``Q``, ``R``, ``Qf``, ``W`` as matrices (rows separated by
    ``;``), ``x0`` and ``horizon``.
``[solver]``
    ``mode``, ``kl_bound``, ``fixed_theta``.
``[ileqg]`` / ``[cross_entropy]``
    fields of :class:`~ratilqr.ileqg.ILEQGConfig` /
    :class:`~ratilqr.cross_entropy.CEConfig`; ``[cross_entropy]`` also takes
    ``mu_init`` and ``sigma_init``.
``[experiment]``
    ``num_runs``, ``methods`` (comma separated modes), ``kl_levels`` and the
    matching calibrated ``mixture_offsets`` (used by ``compare``).
``[kl]``
    ``n_samples``, ``target`` and ``max_offset`` for KL estimation and
    calibration.
``[sweep]``
    ``thetas`` (explicit grid) or ``theta_min``, ``theta_max``, ``num``
    (geometric grid).
``[lq]`` also accepts ``episode_steps`` for closed-loop runs.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from .benchmark.crossing import ScenarioConfig
from .cross_entropy import CEConfig, CrossEntropyState
from .dynamics import CostModel, SystemModel, linear_model, quadratic_cost
from .ileqg import ILEQGConfig
from .rat_ilqr import Mode, RatIlqrConfig

SECTIONS = ("problem", "scenario", "lq", "solver", "ileqg", "cross_entropy", "experiment", "kl", "sweep")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message names the offending key."""


def parse_vector(text: str) -> tuple:
    return tuple(_finite(float(p)) for p in text.replace(",", " ").split())


def parse_matrix(text: str) -> np.ndarray:
    rows = [parse_vector(r) for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix")
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class LQProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    W: np.ndarray
    x0: np.ndarray
    horizon: int
    episode_steps: int = 20

    def model(self) -> SystemModel:
        return linear_model(self.A, self.B, self.W)

    def cost(self) -> CostModel:
        return quadratic_cost(self.Q, self.R, self.Qf, self.horizon)


@dataclass(frozen=True)
class KLSettings:
    n_samples: int = 1_000_000
    target: Optional[float] = None
    max_offset: float = 2.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.target is not None and not self.target > 0:
            raise ValueError("target KL must be > 0")
        if not self.max_offset > 0:
            raise ValueError("max_offset must be > 0")


@dataclass(frozen=True)
class SweepSettings:
    thetas: tuple = ()
    theta_min: float = 0.01
    theta_max: float = 1.0
    num: int = 25

    def __post_init__(self):
        if not 0 < self.theta_min < self.theta_max or self.num < 2:
            raise ValueError("need 0 < theta_min < theta_max and num >= 2")
        grid = self.thetas
        if grid and (min(grid) <= 0 or any(b <= a for a, b in zip(grid, grid[1:]))):
            raise ValueError("thetas must be strictly positive and ascending")

    def grid(self) -> np.ndarray:
        if self.thetas:
            return np.asarray(self.thetas, dtype=float)
        return np.geomspace(self.theta_min, self.theta_max, self.num)


@dataclass(frozen=True)
class RunConfig:
    problem: str
    scenario: Optional[ScenarioConfig]
    lq: Optional[LQProblem]
    solver: RatIlqrConfig
    ce_state: CrossEntropyState
    num_runs: int = 30
    methods: tuple = ("rat-ilqr", "ilqg-baseline")
    kl_levels: tuple = ()
    mixture_offsets: tuple = ()
    kl: KLSettings = field(default_factory=KLSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)


def _coerce(value: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            v = value.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {value!r}")
            return v in ("true", "1", "yes")
        if isinstance(default, int):
            x = float(value)
            if x != int(x):
                raise ValueError(f"not an integer: {value!r}")
            return int(x)
        if isinstance(default, float) or default is None:
            return _finite(float(value))
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(_finite(v) for v in parse_vector(r)) for r in value.split(";") if r.strip())
            return tuple(_finite(v) for v in parse_vector(value))
        return value.strip()
    except (ValueError, OverflowError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _finite(x: float) -> float:
    if not np.isfinite(x):
        raise ValueError(f"not a finite number: {x}")
    return x


def _fill(cls, section: dict, where: str, skip: Iterable[str] = ()):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in section.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"{where}.{key}: unknown key")
        f = known[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[key] = _coerce(text, default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def read_config(text: str, overrides: Iterable[str] = ()) -> RunConfig:
    """Parse configuration text, then apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override {ov!r}: expected section.key=value")
        key, value = ov.split("=", 1)
        sec, opt = key.strip().split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, value.strip())
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"[{sec}]: unknown section")
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    return build_config(raw)


def load_config(path, overrides: Iterable[str] = ()) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return read_config(text, overrides)


def build_config(raw: dict) -> RunConfig:
    extra = set(raw.get("problem", {})) - {"type"}
    if extra:
        raise ConfigError(f"problem.{sorted(extra)[0]}: unknown key")
    problem = raw.get("problem", {}).get("type", "crossing").strip()
    if problem not in ("crossing", "lq"):
        raise ConfigError(f"problem.type: expected 'crossing' or 'lq', got {problem!r}")

    scenario = _fill(ScenarioConfig, raw.get("scenario", {}), "scenario") if problem == "crossing" else None
    lq = _lq(raw.get("lq", {})) if problem == "lq" else None

    ileqg = _fill(ILEQGConfig, raw.get("ileqg", {}), "ileqg")
    ce_sec = raw.get("cross_entropy", {})
    ce_cfg = _fill(CEConfig, ce_sec, "cross_entropy", skip=("mu_init", "sigma_init"))
    try:
        mu0 = _coerce(ce_sec.get("mu_init", "1.0"), 1.0, "cross_entropy.mu_init")
        s0 = _coerce(ce_sec.get("sigma_init", "2.0"), 2.0, "cross_entropy.sigma_init")
        ce_state = CrossEntropyState(mu=mu0, sigma=s0, mu_init=mu0, sigma_init=s0)
    except ValueError as exc:
        raise ConfigError(f"cross_entropy.mu_init/sigma_init: {exc}") from None

    sol = raw.get("solver", {})
    unknown = set(sol) - {"mode", "kl_bound", "fixed_theta"}
    if unknown:
        raise ConfigError(f"solver.{sorted(unknown)[0]}: unknown key")
    try:
        mode = Mode(sol.get("mode", "rat-ilqr").strip())
    except ValueError:
        raise ConfigError(f"solver.mode: unknown mode {sol.get('mode')!r}") from None
    kl = _coerce(sol.get("kl_bound", "0"), 0.0, "solver.kl_bound")
    fixed = _coerce(sol["fixed_theta"], None, "solver.fixed_theta") if "fixed_theta" in sol else None
    try:
        solver = RatIlqrConfig(kl_bound=kl, ileqg=ileqg, ce=ce_cfg, mode=mode, fixed_theta=fixed)
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}") from None

    exp = raw.get("experiment", {})
    num_runs = _coerce(exp.get("num_runs", "30"), 0, "experiment.num_runs")
    methods = tuple(m.strip() for m in exp.get("methods", "rat-ilqr, ilqg-baseline").split(",") if m.strip())
    for m in methods:
        try:
            Mode(m)
        except ValueError:
            raise ConfigError(f"experiment.methods: unknown mode {m!r}") from None
    kl_levels = _coerce(exp["kl_levels"], (), "experiment.kl_levels") if "kl_levels" in exp else ()
    offsets = _coerce(exp["mixture_offsets"], (), "experiment.mixture_offsets") if "mixture_offsets" in exp else ()
    unknown = set(exp) - {"num_runs", "methods", "kl_levels", "mixture_offsets"}
    if unknown:
        raise ConfigError(f"experiment.{sorted(unknown)[0]}: unknown key")
    if num_runs < 1:
        raise ConfigError("experiment.num_runs: must be >= 1")
    if offsets and len(offsets) != len(kl_levels):
        raise ConfigError("experiment.mixture_offsets: needs one offset per entry of kl_levels")

    kl = _fill(KLSettings, raw.get("kl", {}), "kl")
    sweep = _fill(SweepSettings, raw.get("sweep", {}), "sweep")
    return RunConfig(problem, scenario, lq, solver, ce_state, num_runs, methods, tuple(kl_levels),
                     tuple(offsets), kl, sweep)


def _lq(sec: dict) -> LQProblem:
    required = ("A", "B", "Q", "R", "W", "x0", "horizon")
    for key in required:
        if key not in sec:
            raise ConfigError(f"lq.{key}: missing")
    unknown = set(sec) - set(required) - {"Qf", "episode_steps"}
    if unknown:
        raise ConfigError(f"lq.{sorted(unknown)[0]}: unknown key")
    try:
        A, B, Q, R, W = (parse_matrix(sec[k]) for k in ("A", "B", "Q", "R", "W"))
        Qf = parse_matrix(sec["Qf"]) if "Qf" in sec else Q
        x0 = np.array(parse_vector(sec["x0"]))
        horizon = _coerce(sec["horizon"], 0, "lq.horizon")
        steps = _coerce(sec.get("episode_steps", "20"), 0, "lq.episode_steps")
    except ValueError as exc:
        raise ConfigError(f"[lq]: {exc}") from None
    n, m = A.shape[0], B.shape[1]
    shapes = {"A": (A, (n, n)), "B": (B, (n, m)), "Q": (Q, (n, n)), "R": (R, (m, m)), "Qf": (Qf, (n, n)),
              "W": (W, (n, n)), "x0": (x0, (n,))}
    for key, (arr, shape) in shapes.items():
        if arr.shape != shape:
            raise ConfigError(f"lq.{key}: expected shape {shape}, got {arr.shape}")
    if horizon < 0 or steps < 1:
        raise ConfigError("lq.horizon/episode_steps: need horizon >= 0 and episode_steps >= 1")
    return LQProblem(A, B, Q, R, Qf, W, x0, horizon, steps)


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, Mode):
        return value.value
    return value


def resolved(cfg: RunConfig) -> dict:
    """Every effective setting, defaults included, as a JSON-friendly mapping."""
    out = {
        "problem": {"type": cfg.problem},
        "solver": {"mode": cfg.solver.mode.value, "kl_bound": cfg.solver.kl_bound,
                   "fixed_theta": cfg.solver.fixed_theta},
        "ileqg": dataclasses.asdict(cfg.solver.ileqg),
        "cross_entropy": {**dataclasses.asdict(cfg.solver.ce), "mu_init": cfg.ce_state.mu_init,
                          "sigma_init": cfg.ce_state.sigma_init},
        "experiment": {"num_runs": cfg.num_runs, "methods": list(cfg.methods),
                       "kl_levels": list(cfg.kl_levels), "mixture_offsets": list(cfg.mixture_offsets)},
        "kl": dataclasses.asdict(cfg.kl),
        "sweep": dataclasses.asdict(cfg.sweep),
    }
    if cfg.scenario is not None:
        out["scenario"] = dataclasses.asdict(cfg.scenario)
    if cfg.lq is not None:
        out["lq"] = {f.name: getattr(cfg.lq, f.name) for f in dataclasses.fields(cfg.lq)}
    return _plain(out)
