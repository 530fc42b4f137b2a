"""Cross-entropy search over the risk-sensitivity parameter θ.

A univariate Gaussian over θ is sampled, each positive sample is scored with
the bilevel objective ``s0(θ) + d/θ`` (infinite on neurotic breakdown), and
the Gaussian is refit to the elite samples.  Iterations with too few finite
scores are re-sampled; in the first iteration the initial parameters are
also halved on re-sampling and doubled when every sample is finite.  The
adapted initial parameters persist in :class:`CrossEntropyState` between
calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .ileqg import NeuroticBreakdown


class InfeasibleProblemError(RuntimeError):
    """No sampled θ produced a finite objective within the re-sampling budget."""


@dataclass(frozen=True)
class CrossEntropyState:
    mu: float = 1.0
    sigma: float = 2.0
    mu_init: float = 1.0
    sigma_init: float = 2.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.mu_init > 0 and self.sigma_init > 0):
            raise ValueError("sigma, mu_init and sigma_init must be positive")


@dataclass(frozen=True)
class CEConfig:
    num_samples: int = 10
    num_elite: int = 3
    num_steps: int = 5
    max_resamples: int = 10
    sigma_floor_ratio: float = 1e-4

    def __post_init__(self):
        if self.num_samples < 1 or self.num_elite < 1 or self.num_steps < 1 or self.max_resamples < 1:
            raise ValueError("cross-entropy counts must be positive")
        if self.num_elite > self.num_samples:
            raise ValueError("num_elite must not exceed num_samples")

    @property
    def min_valid(self) -> int:
        return max(self.num_elite, math.ceil(self.num_samples / 2))


@dataclass(frozen=True)
class CEResult:
    theta_star: float
    theta_max_seen: float
    state: CrossEntropyState
    degraded: bool
    best_theta: float  # evaluated θ with the lowest objective
    num_evaluations: int


def draw_samples(mu: float, sigma: float, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    """``num_samples`` draws from N(mu, sigma²) with non-positive values discarded."""
    theta = rng.normal(mu, sigma, size=num_samples)
    return theta[theta > 0]


def evaluate_objective(theta: float, inner: Callable[[float], float], d: float) -> float:
    """Bilevel objective ``s0(θ) + d/θ``; ``inf`` when the inner solve breaks down."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    try:
        s0 = inner(theta)
    except NeuroticBreakdown:
        return math.inf
    if s0 is None or not math.isfinite(s0):
        return math.inf
    return s0 + d / theta


def count_valid(evaluations: Iterable[float]) -> int:
    return sum(1 for r in evaluations if math.isfinite(r))


def select_elite_and_fit(samples: Sequence[float], objectives: Sequence[float], num_elite: int, sigma_floor: float = 0.0):
    """Maximum-likelihood Gaussian fit to the ``num_elite`` best finite samples.

    Ties in objective are broken by smaller θ, then input order.  Returns
    ``(mu, sigma)`` with ``sigma`` floored at ``sigma_floor``.
    """
    ranked = sorted(
        (r, t, i) for i, (t, r) in enumerate(zip(samples, objectives)) if math.isfinite(r)
    )
    if len(ranked) < num_elite:
        raise ValueError(f"need {num_elite} finite samples, got {len(ranked)}")
    elite = np.array([t for _, t, _ in ranked[:num_elite]])
    mu = float(elite.mean())
    sigma = float(np.sqrt(np.mean((elite - mu) ** 2)))
    return mu, max(sigma, sigma_floor)


def optimize(
    state: CrossEntropyState,
    config: CEConfig,
    inner: Callable[[float], float],
    d: float,
    rng: np.random.Generator,
    map_fn: Optional[Callable] = None,
) -> CEResult:
    """Minimize ``s0(θ) + d/θ`` over θ > 0.

    ``inner(θ)`` returns the iLEQG cost-to-go or raises ``NeuroticBreakdown``.
    ``map_fn`` (e.g. ``executor.map``) may evaluate a batch of samples in
    parallel; samples are drawn before evaluation so the result does not
    depend on evaluation order.
    """
    mapper = map_fn if map_fn is not None else map
    mu_init, sigma_init = state.mu_init, state.sigma_init
    mu, sigma = state.mu, state.sigma
    need = config.min_valid
    seen_theta: list[float] = []
    seen_r: list[float] = []
    degraded = False

    for i in range(1, config.num_steps + 1):
        resamples = 0
        while True:
            m, s = (mu_init, sigma_init) if i == 1 else (mu, sigma)
            theta = draw_samples(m, s, config.num_samples, rng)
            r = list(mapper(lambda t: evaluate_objective(float(t), inner, d), theta))
            seen_theta.extend(float(t) for t in theta)
            seen_r.extend(r)
            m_v = count_valid(r)
            if i == 1 and m_v < need:
                mu_init, sigma_init = mu_init / 2, sigma_init / 2
            elif i == 1 and m_v == config.num_samples:
                mu_init, sigma_init = 2 * mu_init, 2 * sigma_init
                break
            elif m_v >= need:
                break
            resamples += 1
            if resamples > config.max_resamples:
                degraded = True
                break
        if degraded:
            break
        mu, sigma = select_elite_and_fit(theta, r, config.num_elite, config.sigma_floor_ratio * mu_init)

    finite = [(rv, t) for t, rv in zip(seen_theta, seen_r) if math.isfinite(rv)]
    if not finite:
        raise InfeasibleProblemError("no feasible risk-sensitivity parameter found")
    best_r, best_theta = min(finite)
    theta_max = max(t for _, t in finite)
    theta_star = best_theta if degraded else mu
    new_state = CrossEntropyState(mu=mu, sigma=sigma, mu_init=mu_init, sigma_init=sigma_init)
    return CEResult(theta_star, theta_max, new_state, degraded, best_theta, len(seen_theta))
