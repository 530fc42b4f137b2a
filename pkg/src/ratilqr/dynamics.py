"""Stochastic system and cost models, rollouts and local approximations.

The system is ``x[k+1] = f(x[k], u[k]) + w[k]`` with ``w[k] ~ N(0, W[k])`` and
the cost is ``J = sum_k c(k, x[k], u[k]) + h(x[N+1])`` with stages
``k = 0..N``.  Trajectories are stored as stacked arrays: controls have shape
``(N+1, m)`` and states ``(N+2, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray

# (xs (K, n), us (K, m)) -> (A (K, n, n), B (K, n, m))
JacobianFn = Callable[[Array, Array], tuple[Array, Array]]
# (ks (K,), xs (K, n), us (K, m)) -> (q, qx, Qxx, r, Ruu, Pux)
CostDerivativeFn = Callable[[Array, Array, Array], tuple[Array, ...]]
# (x0, ref_states, ref_controls, gains, offsets) -> (states, controls)
FeedbackRolloutFn = Callable[[Array, Array, Array, Array, Array], tuple[Array, Array]]
# x (n,) -> (q, qx, Qxx)
TerminalDerivativeFn = Callable[[Array], tuple[float, Array, Array]]


class InvalidInputError(ValueError):
    """Raised on dimension mismatches or malformed model data."""


class ApproximationError(RuntimeError):
    """A local approximation produced non-finite entries."""

    def __init__(self, stage: int, what: str):
        super().__init__(f"non-finite {what} at stage {stage}")
        self.stage = stage


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time model ``f`` with additive Gaussian noise.

    ``noise_covariance`` is either a single ``(n, n)`` matrix shared by every
    stage or a stack ``(N+1, n, n)`` of per-stage covariances.  ``jacobians``
    is an optional analytic derivative callback evaluated on stacked stages;
    when absent, central finite differences are used.  ``feedback_rollout``
    optionally replaces the per-stage Python loop of a closed-loop forward
    pass ``u_k = ref_u_k + offsets_k + gains_k (x_k - ref_x_k)``.
    """

    state_dim: int
    control_dim: int
    transition: Callable[[Array, Array], Array]
    noise_covariance: Array
    jacobians: Optional[JacobianFn] = None
    feedback_rollout: Optional[FeedbackRolloutFn] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise InvalidInputError("state_dim and control_dim must be positive")
        W = np.asarray(self.noise_covariance, dtype=float)
        if W.ndim == 2:
            W = W[None]
        if W.ndim != 3 or W.shape[1:] != (self.state_dim, self.state_dim):
            raise InvalidInputError(
                f"noise covariance must be (n, n) or (K, n, n) with n={self.state_dim}, got {W.shape}"
            )
        if not np.allclose(W, np.swapaxes(W, 1, 2), rtol=0.0, atol=1e-12 * max(1.0, np.abs(W).max())):
            raise InvalidInputError("noise covariance is not symmetric")
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("noise covariance is not positive definite") from exc
        W.setflags(write=False)
        object.__setattr__(self, "noise_covariance", W)

    def covariances(self, num_stages: int) -> Array:
        """Per-stage covariance stack of shape ``(num_stages, n, n)``."""
        W = self.noise_covariance
        if W.shape[0] == 1:
            return np.broadcast_to(W, (num_stages,) + W.shape[1:])
        if W.shape[0] < num_stages:
            raise InvalidInputError(f"model has {W.shape[0]} covariances, need {num_stages}")
        return W[:num_stages]


@dataclass(frozen=True)
class CostModel:
    """Stage cost ``c(k, x, u)``, terminal cost ``h(x)`` and horizon ``N``.

    Both costs must be nonnegative.  ``derivatives`` and
    ``terminal_derivatives`` are optional analytic callbacks.
    """

    stage_cost: Callable[[int, Array, Array], float]
    terminal_cost: Callable[[Array], float]
    horizon: int
    derivatives: Optional[CostDerivativeFn] = None
    terminal_derivatives: Optional[TerminalDerivativeFn] = None

    def __post_init__(self):
        if self.horizon < 0:
            raise InvalidInputError("horizon must be nonnegative")

    @property
    def num_stages(self) -> int:
        return self.horizon + 1

    def total(self, states: Array, controls: Array) -> float:
        """Trajectory cost ``sum_k c(k, x_k, u_k) + h(x_{N+1})``."""
        J = sum(float(self.stage_cost(k, states[k], controls[k])) for k in range(len(controls)))
        return J + float(self.terminal_cost(states[len(controls)]))


@dataclass(frozen=True)
class NominalTrajectory:
    """Nominal controls ``l[0..N]`` and the noiseless states ``x̄[0..N+1]``."""

    controls: Array
    states: Array

    def __post_init__(self):
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise InvalidInputError("need len(states) == len(controls) + 1")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0] - 1


@dataclass(frozen=True)
class AffinePolicy:
    """Time-varying affine feedback ``u_k = L_k (x_k - x̄_k) + l_k``."""

    gains: Array
    trajectory: NominalTrajectory

    def __call__(self, k: int, x: Array) -> Array:
        return self.gains[k] @ (x - self.trajectory.states[k]) + self.trajectory.controls[k]

    @property
    def horizon(self) -> int:
        return self.trajectory.horizon


@dataclass(frozen=True)
class StageApproximation:
    """Linearized dynamics and quadratic cost blocks along a trajectory.

    Stage arrays are stacked over ``k = 0..N``; the terminal triple comes from
    ``h`` at ``x̄[N+1]``.
    """

    A: Array  # (N+1, n, n)
    B: Array  # (N+1, n, m)
    q: Array  # (N+1,)
    qx: Array  # (N+1, n)
    Qxx: Array  # (N+1, n, n)
    r: Array  # (N+1, m)
    Ruu: Array  # (N+1, m, m)
    Pux: Array  # (N+1, m, n)
    q_terminal: float
    qx_terminal: Array  # (n,)
    Qxx_terminal: Array  # (n, n)

    @property
    def num_stages(self) -> int:
        return self.A.shape[0]


def _as_controls(model: SystemModel, controls) -> Array:
    u = np.asarray(controls, dtype=float)
    if u.ndim == 1 and model.control_dim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != model.control_dim:
        raise InvalidInputError(f"controls must have shape (N+1, {model.control_dim}), got {u.shape}")
    return u


def _as_state(model: SystemModel, x0) -> Array:
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (model.state_dim,):
        raise InvalidInputError(f"x0 must have length {model.state_dim}, got {x.shape}")
    return x


def rollout_nominal(model: SystemModel, x0, controls) -> NominalTrajectory:
    """Apply ``controls`` to the noiseless dynamics starting at ``x0``."""
    x = _as_state(model, x0)
    u = _as_controls(model, controls)
    states = np.empty((u.shape[0] + 1, model.state_dim))
    states[0] = x
    for k in range(u.shape[0]):
        states[k + 1] = model.transition(states[k], u[k])
    return NominalTrajectory(controls=u.copy(), states=states)


def rollout_stochastic(model: SystemModel, cost: CostModel, policy: AffinePolicy, x0, noise):
    """Closed-loop rollout of ``policy`` under a given noise sequence.

    Returns ``(states, controls, cost)`` where ``states`` has ``N+2`` rows.
    """
    x = _as_state(model, x0)
    w = np.asarray(noise, dtype=float)
    N1 = policy.gains.shape[0]
    if w.shape != (N1, model.state_dim):
        raise InvalidInputError(f"noise must have shape ({N1}, {model.state_dim}), got {w.shape}")
    states = np.empty((N1 + 1, model.state_dim))
    controls = np.empty((N1, model.control_dim))
    states[0] = x
    for k in range(N1):
        controls[k] = policy(k, states[k])
        states[k + 1] = model.transition(states[k], controls[k]) + w[k]
    return states, controls, cost.total(states, controls)


# -- finite differences ------------------------------------------------------

FD_REL_STEP = 1e-5
# Second differences need a larger step: roundoff scales as eps / h**2.
FD_HESS_STEP = np.finfo(float).eps ** 0.25


def _steps(z: Array, rel: float) -> Array:
    return rel * np.maximum(1.0, np.abs(z))


def fd_jacobian(fun: Callable[[Array], Array], z: Array, rel_step: float = FD_REL_STEP) -> Array:
    """Central-difference Jacobian of a vector function."""
    z = np.asarray(z, dtype=float)
    h = _steps(z, rel_step)
    cols = []
    for i in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[i] += h[i]
        zm[i] -= h[i]
        cols.append((np.asarray(fun(zp), dtype=float) - np.asarray(fun(zm), dtype=float)) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def fd_gradient(fun: Callable[[Array], float], z: Array, rel_step: float = FD_REL_STEP) -> Array:
    return fd_jacobian(lambda y: np.atleast_1d(fun(y)), z, rel_step)[0]


def fd_hessian(fun: Callable[[Array], float], z: Array, rel_step: float = FD_HESS_STEP) -> Array:
    """Central second differences, symmetrized."""
    z = np.asarray(z, dtype=float)
    h = _steps(z, rel_step)
    d = z.size
    f0 = float(fun(z))
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (float(fun(z + ei)) - 2 * f0 + float(fun(z - ei))) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                float(fun(z + ei + ej)) - float(fun(z + ei - ej)) - float(fun(z - ei + ej)) + float(fun(z - ei - ej))
            ) / (4 * h[i] * h[j])
    return 0.5 * (H + H.T)


def _sym(M: Array) -> Array:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def approximate(model: SystemModel, cost: CostModel, traj: NominalTrajectory, check: bool = True) -> StageApproximation:
    """Linearize dynamics and quadraticize costs along ``traj``.

    Finite-difference Hessians are symmetrized; analytic callbacks are
    trusted to return symmetric ones.  With ``check`` (the default) any
    non-finite entry raises ``ApproximationError``; callers that detect
    non-finite downstream results can pass ``check=False`` and call
    :func:`check_finite` themselves.
    """
    n, m = model.state_dim, model.control_dim
    xs, us = traj.states[:-1], traj.controls
    K = us.shape[0]

    if model.jacobians is not None:
        A, B = model.jacobians(xs, us)
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
    else:
        A = np.empty((K, n, n))
        B = np.empty((K, n, m))
        for k in range(K):
            J = fd_jacobian(lambda z: model.transition(z[:n], z[n:]), np.concatenate([xs[k], us[k]]))
            A[k], B[k] = J[:, :n], J[:, n:]

    ks = np.arange(K)
    if cost.derivatives is not None:
        q, qx, Qxx, r, Ruu, Pux = (np.asarray(a, dtype=float) for a in cost.derivatives(ks, xs, us))
    else:
        q = np.empty(K)
        qx = np.empty((K, n))
        r = np.empty((K, m))
        Qxx = np.empty((K, n, n))
        Ruu = np.empty((K, m, m))
        Pux = np.empty((K, m, n))
        for k in range(K):
            z = np.concatenate([xs[k], us[k]])

            def c(y, k=k):
                return cost.stage_cost(k, y[:n], y[n:])

            q[k] = c(z)
            grad = fd_gradient(c, z)
            hess = fd_hessian(c, z)
            qx[k], r[k] = grad[:n], grad[n:]
            Qxx[k], Ruu[k], Pux[k] = hess[:n, :n], hess[n:, n:], hess[n:, :n]
        Qxx, Ruu = _sym(Qxx), _sym(Ruu)

    xN = traj.states[-1]
    if cost.terminal_derivatives is not None:
        qT, qxT, QT = cost.terminal_derivatives(xN)
    else:
        qT = cost.terminal_cost(xN)
        qxT = fd_gradient(cost.terminal_cost, xN)
        QT = _sym(fd_hessian(cost.terminal_cost, xN))

    approx = StageApproximation(
        A=A, B=B, q=q, qx=qx, Qxx=Qxx, r=r, Ruu=Ruu, Pux=Pux,
        q_terminal=float(qT), qx_terminal=np.asarray(qxT, dtype=float),
        Qxx_terminal=np.asarray(QT, dtype=float),
    )
    if check:
        check_finite(approx)
    return approx


def check_finite(approx: StageApproximation) -> None:
    """Raise ``ApproximationError`` naming the first stage with a non-finite entry."""
    total = sum(float(getattr(approx, name).sum()) for name in ("A", "B", "q", "qx", "Qxx", "r", "Ruu", "Pux"))
    total += approx.q_terminal + float(approx.qx_terminal.sum()) + float(approx.Qxx_terminal.sum())
    if math.isfinite(total):
        return
    for name in ("A", "B", "q", "qx", "Qxx", "r", "Ruu", "Pux"):
        arr = getattr(approx, name)
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if bad.any():
            raise ApproximationError(int(np.argmax(bad)), name)
    terminal = np.concatenate([[approx.q_terminal], approx.qx_terminal, approx.Qxx_terminal.ravel()])
    if not np.isfinite(terminal).all():
        raise ApproximationError(approx.num_stages, "terminal cost derivatives")


def shift_controls(controls: Array) -> Array:
    """Drop the first control and repeat the last one (receding-horizon warm start)."""
    return np.concatenate([controls[1:], controls[-1:]], axis=0)


def quadratic_cost(Q: Array, R: Array, Qf: Array, horizon: int, x_ref: Optional[Sequence] = None) -> CostModel:
    """``½ xᵀQx + ½ uᵀRu`` stage cost with ``½ xᵀQf x`` terminal cost, with analytic derivatives."""
    Q, R, Qf = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Q, R, Qf))
    n, m = Q.shape[0], R.shape[0]
    ref = np.zeros(n) if x_ref is None else np.asarray(x_ref, dtype=float)

    def stage(k, x, u):
        e = x - ref
        return 0.5 * e @ Q @ e + 0.5 * u @ R @ u

    def terminal(x):
        e = x - ref
        return 0.5 * e @ Qf @ e

    def derivs(ks, xs, us):
        K = len(ks)
        e = xs - ref
        q = 0.5 * np.einsum("ki,ij,kj->k", e, Q, e) + 0.5 * np.einsum("ki,ij,kj->k", us, R, us)
        return (q, e @ Q, np.broadcast_to(Q, (K, n, n)), us @ R,
                np.broadcast_to(R, (K, m, m)), np.zeros((K, m, n)))

    def terminal_derivs(x):
        e = x - ref
        return 0.5 * e @ Qf @ e, Qf @ e, Qf

    return CostModel(stage, terminal, horizon, derivatives=derivs, terminal_derivatives=terminal_derivs)


def linear_model(A: Array, B: Array, W: Array) -> SystemModel:
    """``x' = Ax + Bu + w`` with analytic Jacobians."""
    A, B, W = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, W))

    def jac(xs, us):
        K = xs.shape[0]
        return np.broadcast_to(A, (K,) + A.shape), np.broadcast_to(B, (K,) + B.shape)

    return SystemModel(A.shape[0], B.shape[1], lambda x, u: A @ x + B @ u, W, jacobians=jac)
