"""Iterative Linear-Exponential-Quadratic-Gaussian (iLEQG) trajectory optimization.

One iteration linearizes the model along the nominal trajectory, runs the
risk-sensitive dynamic-programming recursion, computes regularized feedback
gains and offset updates, and picks a new nominal trajectory by backtracking
line search on the approximate cost-to-go ``s0`` (the entropic risk
``(1/θ) log E exp(θ J)`` of the local model).

``θ = 0`` selects the risk-neutral (iLQG) limit of the same recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .dynamics import (
    AffinePolicy,
    ApproximationError,
    CostModel,
    NominalTrajectory,
    StageApproximation,
    SystemModel,
    approximate,
    check_finite,
    rollout_nominal,
)

Array = np.ndarray


class NeuroticBreakdown(ArithmeticError):
    """``M_k = W_k^{-1} - θ S_{k+1}`` lost positive definiteness at ``stage``.

    The cost-to-go is infinite: θ lies outside the feasible set for this
    local model.
    """

    def __init__(self, stage: int, theta: float):
        super().__init__(f"neurotic breakdown at stage {stage} (theta={theta:g})")
        self.stage = stage
        self.theta = theta


class NotPositiveDefinite(ArithmeticError):
    """``H_k + μI`` is not positive definite; the caller should raise μ."""

    def __init__(self, stage: int, mu: float):
        super().__init__(f"H + mu*I not positive definite at stage {stage} (mu={mu:g})")
        self.stage = stage
        self.mu = mu


@dataclass(frozen=True)
class ILEQGConfig:
    theta: float = 0.0
    convergence_tolerance: float = 1e-4
    max_iterations: int = 100
    regularization_init: float = 1e-6
    regularization_min: float = 1e-6
    regularization_max: float = 1e10
    regularization_scale: float = 10.0
    max_linesearch_steps: int = 20

    def __post_init__(self):
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be finite and >= 0, got {self.theta}")
        if self.convergence_tolerance < 0:
            raise ValueError("convergence_tolerance must be nonnegative")
        if self.max_iterations < 1 or self.max_linesearch_steps < 1:
            raise ValueError("iteration limits must be positive")
        if min(self.regularization_init, self.regularization_min) <= 0 or self.regularization_scale <= 1:
            raise ValueError("regularization parameters must be positive (scale > 1)")


@dataclass(frozen=True)
class ValueRecursion:
    """Backward-pass quantities; value arrays carry the terminal entry last."""

    s: Array  # (N+2,)
    s_vec: Array  # (N+2, n)
    S: Array  # (N+2, n, n)
    M: Array  # (N+1, n, n)
    g: Array  # (N+1, m)
    G: Array  # (N+1, m, n)
    H: Array  # (N+1, m, m)
    gains: Array  # (N+1, m, n) gains the recursion was evaluated with
    offsets: Array  # (N+1, m)

    @property
    def cost_to_go(self) -> float:
        return float(self.s[0])


@dataclass(frozen=True)
class ILEQGSolution:
    policy: AffinePolicy
    cost_to_go: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LineSearchResult:
    trajectory: NominalTrajectory
    cost_to_go: float
    epsilon: float
    accepted: bool
    approximation: Optional[StageApproximation] = None
    recursion: Optional[ValueRecursion] = None


def _stage_gain(H: Array, G: Array, g: Array, mu: float, stage: int):
    Hreg = H + mu * np.eye(H.shape[0])
    try:
        c = np.linalg.cholesky(Hreg)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(stage, mu) from None
    rhs = np.column_stack([G, g])
    sol = solve_triangular(c.T, solve_triangular(c, rhs, lower=True, check_finite=False), lower=False, check_finite=False)
    return -sol[:, :-1], -sol[:, -1]


@dataclass(frozen=True)
class NoiseFactors:
    """Cholesky factors and inverses of the per-stage noise covariances."""

    cov: Array
    chol: Array
    inv: Array

    @classmethod
    def from_covariances(cls, W: Array) -> "NoiseFactors":
        W = np.ascontiguousarray(W, dtype=float)
        return cls(W, np.linalg.cholesky(W), np.linalg.inv(W))


def backward_pass(
    approx: StageApproximation,
    gains: Optional[Array],
    offsets: Optional[Array],
    theta: float,
    W,
    mu: float = 0.0,
) -> ValueRecursion:
    """Risk-sensitive DP recursion from stage ``N`` down to ``0``.

    With ``gains`` given, the quadratic value model is evaluated for the
    affine policy ``δu = L_k δx + l_k`` (``offsets`` are ``l_k``, measured from
    the linearization point; ``None`` means zero).  With ``gains=None`` the
    gains and offsets are chosen greedily at each stage as
    ``-(H_k + μI)^{-1}(G_k, g_k)`` and substituted into the same recursion.

    ``M_k = W_k^{-1} - θ S_{k+1}`` is congruent to ``I - θ L_kᵀ S_{k+1} L_k``
    with ``W_k = L_k L_kᵀ``; a Cholesky test of the latter decides
    definiteness and also yields ``log det(I - θ W_k S_{k+1})``.  ``θ = 0``
    uses the limits ``½ tr(W_k S_{k+1})`` for the log-det term and ``I`` for
    ``I + θ S_{k+1} M_k^{-1}``.

    Raises ``NeuroticBreakdown`` if some ``M_k`` is not positive definite and,
    in greedy mode, ``NotPositiveDefinite`` if some ``H_k + μI`` is not.
    A failed or non-finite recursion on an approximation with non-finite
    entries raises ``ApproximationError`` instead.
    """
    theta = float(theta)
    if theta < 0:
        raise ValueError("theta must be >= 0")
    K, n, m = approx.B.shape
    noise = W if isinstance(W, NoiseFactors) else NoiseFactors.from_covariances(np.broadcast_to(W, (K, n, n)))
    greedy = gains is None
    Ls = np.zeros((K, m, n)) if greedy else np.ascontiguousarray(gains, dtype=float)
    ls = np.zeros((K, m)) if (greedy or offsets is None) else np.ascontiguousarray(offsets, dtype=float)
    c = np.ascontiguousarray
    status, stage, s, sv, S, Ms, gs, Gs, Hs, Ls, ls = _kernels.recursion(
        c(approx.A), c(approx.B), c(approx.q), c(approx.qx), c(approx.Qxx), c(approx.r), c(approx.Ruu),
        c(approx.Pux), float(approx.q_terminal), c(approx.qx_terminal), c(approx.Qxx_terminal),
        c(noise.chol[:K]), c(noise.inv[:K]), Ls, ls, theta, float(mu), greedy,
    )
    if status != _kernels.OK or not math.isfinite(s[0]):
        check_finite(approx)  # garbage in: report the approximation, not the recursion
    if status == _kernels.BREAKDOWN:
        raise NeuroticBreakdown(stage, theta)
    if status == _kernels.NOT_PD:
        raise NotPositiveDefinite(stage, mu)
    return ValueRecursion(s=s, s_vec=sv, S=S, M=Ms, g=gs, G=Gs, H=Hs, gains=Ls, offsets=ls)


def compute_gains(recursion: ValueRecursion, mu: float = 0.0) -> tuple[Array, Array]:
    """New gains ``-(H_k + μI)^{-1} G_k`` and offset updates ``-(H_k + μI)^{-1} g_k``.

    Raises ``NotPositiveDefinite`` when ``H_k + μI`` fails a Cholesky test.
    """
    K, m, n = recursion.G.shape
    L = np.empty((K, m, n))
    dl = np.empty((K, m))
    for k in range(K):
        L[k], dl[k] = _stage_gain(recursion.H[k], recursion.G[k], recursion.g[k], mu, k)
    return L, dl


def evaluate(
    model: SystemModel, cost: CostModel, traj: NominalTrajectory, gains: Array, theta: float,
    noise: Optional[NoiseFactors] = None,
) -> tuple[StageApproximation, ValueRecursion]:
    """Approximate along ``traj`` and evaluate the policy ``gains`` there."""
    approx = approximate(model, cost, traj, check=False)
    if noise is None:
        noise = NoiseFactors.from_covariances(model.covariances(approx.num_stages))
    return approx, backward_pass(approx, gains, None, theta, noise)


def candidate_trajectory(model: SystemModel, current: NominalTrajectory, gains: Array, offset_updates: Array, epsilon: float) -> NominalTrajectory:
    """Forward pass ``l̂_k = L_k(x̂_k - x̄_k) + l_k + ε dl_k``, ``x̂_{k+1} = f(x̂_k, l̂_k)``."""
    if model.feedback_rollout is not None:
        xs, us = model.feedback_rollout(current.states[0], current.states, current.controls, gains,
                                        epsilon * offset_updates)
        return NominalTrajectory(controls=us, states=xs)
    K = current.controls.shape[0]
    xs = np.empty_like(current.states)
    us = np.empty_like(current.controls)
    xs[0] = current.states[0]
    for k in range(K):
        us[k] = gains[k] @ (xs[k] - current.states[k]) + current.controls[k] + epsilon * offset_updates[k]
        xs[k + 1] = model.transition(xs[k], us[k])
    return NominalTrajectory(controls=us, states=xs)


def line_search(
    model: SystemModel,
    cost: CostModel,
    current: NominalTrajectory,
    current_cost: float,
    new_gains: Array,
    offset_updates: Array,
    theta: float,
    config: ILEQGConfig,
    noise: Optional[NoiseFactors] = None,
) -> LineSearchResult:
    """Backtracking search over ε = 1, 1/2, 1/4, ... on the candidate's cost-to-go.

    Each candidate is re-approximated and evaluated with ``new_gains``; a
    candidate is accepted when its cost-to-go is strictly below
    ``current_cost``.  Breakdown of a candidate counts as a rejection.
    """
    eps = 1.0
    for _ in range(config.max_linesearch_steps):
        cand = candidate_trajectory(model, current, new_gains, offset_updates, eps)
        if np.isfinite(cand.states).all():
            try:
                approx, rec = evaluate(model, cost, cand, new_gains, theta, noise)
            except (NeuroticBreakdown, ApproximationError):
                rec = None
            if rec is not None and np.isfinite(rec.cost_to_go) and rec.cost_to_go < current_cost:
                return LineSearchResult(cand, rec.cost_to_go, eps, True, approx, rec)
        eps *= 0.5
    return LineSearchResult(current, current_cost, 0.0, False)


def solve(
    model: SystemModel,
    cost: CostModel,
    x0,
    initial_controls,
    config: ILEQGConfig,
    initial_gains: Optional[Array] = None,
) -> ILEQGSolution:
    """Run iLEQG from ``initial_controls`` until the nominal controls settle.

    Raises ``NeuroticBreakdown`` when the risk-sensitive recursion breaks down
    under the locally optimal gains, i.e. θ is infeasible for this problem.
    """
    theta = config.theta
    traj = rollout_nominal(model, x0, initial_controls)
    K, m, n = traj.controls.shape[0], model.control_dim, model.state_dim
    if cost.horizon + 1 != K:
        raise ValueError(f"cost horizon {cost.horizon} does not match {K} controls")
    W = NoiseFactors.from_covariances(model.covariances(K))
    gains = np.zeros((K, m, n)) if initial_gains is None else np.asarray(initial_gains, dtype=float)

    approx = approximate(model, cost, traj, check=False)
    try:
        current_cost = backward_pass(approx, gains, None, theta, W).cost_to_go
    except NeuroticBreakdown:
        current_cost = math.inf

    mu = 0.0
    converged = False
    it = 0
    while it < config.max_iterations:
        it += 1
        while True:
            try:
                rec = backward_pass(approx, None, None, theta, W, mu=mu)
                break
            except NotPositiveDefinite:
                mu = max(config.regularization_init, mu * config.regularization_scale)
                if mu > config.regularization_max:
                    raise
        new_gains, dl = rec.gains, rec.offsets

        if float(np.abs(dl).max()) < config.convergence_tolerance:
            # stationary nominal: only adopt the refreshed gains if they do not hurt
            cand = candidate_trajectory(model, traj, new_gains, dl, 1.0)
            try:
                cand_approx, cand_rec = evaluate(model, cost, cand, new_gains, theta, W)
                if cand_rec.cost_to_go <= current_cost:
                    traj, gains, current_cost, approx = cand, new_gains, cand_rec.cost_to_go, cand_approx
            except NeuroticBreakdown:
                pass
            converged = math.isfinite(current_cost)
            break

        result = line_search(model, cost, traj, current_cost, new_gains, dl, theta, config, W)
        if not result.accepted:
            mu = max(config.regularization_init, mu * config.regularization_scale)
            if not math.isfinite(current_cost):
                # no finite candidate and an infinite incumbent: give up on θ
                raise NeuroticBreakdown(0, theta)
            converged = True
            break
        change = float(np.abs(result.trajectory.controls - traj.controls).max())
        traj, gains, current_cost = result.trajectory, new_gains, result.cost_to_go
        approx = result.approximation
        if result.epsilon == 1.0:
            mu = mu / config.regularization_scale
            if mu < config.regularization_min:
                mu = 0.0
        else:
            mu = max(config.regularization_init, mu * config.regularization_scale)
        if change < config.convergence_tolerance:
            converged = True
            break

    if not math.isfinite(current_cost):
        raise NeuroticBreakdown(0, theta)
    return ILEQGSolution(AffinePolicy(gains, traj), current_cost, it, converged)
