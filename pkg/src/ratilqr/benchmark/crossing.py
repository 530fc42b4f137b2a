"""Unicycle robot and road-crossing pedestrian.

Joint state ``x = (r_x, r_y, v, heading, p_x, p_y)``, control ``u = (a, b)``
(acceleration, angular velocity).  The robot follows Euler-integrated
unicycle kinematics, the pedestrian a constant nominal velocity; additive
noise enters every coordinate.  Costs are quadratic tracking of a straight
constant-speed reference, a soft collision penalty and a small control
penalty; all derivatives are analytic and vectorized over stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..dynamics import CostModel, SystemModel
from . import _kernels

STATE_DIM = 6
CONTROL_DIM = 2
RX, RY, V, HEADING, PX, PY = range(6)

# collision penalty  scale / (slope * dist + offset) ** exponent
COLL_SCALE, COLL_SLOPE, COLL_OFFSET, COLL_EXPONENT = 10.0, 0.2, 0.9, 10


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture over the pedestrian's per-step position increment."""

    weights: np.ndarray
    means: np.ndarray  # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float).reshape(len(w), -1)
        cov = np.asarray(self.covariances, dtype=float).reshape(len(w), mu.shape[1], mu.shape[1])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw increments; ``size=None`` returns a single ``(dim,)`` vector.

        Components with a zero covariance are sampled deterministically at
        their mean.
        """
        n = 1 if size is None else size
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = self._transform(labels, z)
        return out[0] if size is None else out

    def _transform(self, labels: np.ndarray, z: np.ndarray) -> np.ndarray:
        chol = np.stack([_psd_sqrt(c) for c in self.covariances])
        return self.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        comps = np.stack([
            math.log(w) + gaussian_logpdf(x, m, c) if w > 0 else np.full(len(x), -np.inf)
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ])
        top = comps.max(axis=0)
        safe = np.where(np.isfinite(top), top, 0.0)
        return safe + np.log(np.exp(comps - safe).sum(axis=0))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(np.array(data["weights"]), np.array(data["means"]), np.array(data["covariances"]))


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    if not np.any(c):
        return np.zeros_like(c)
    return np.linalg.cholesky(c)


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; mean, cov) computed via Cholesky."""
    x = np.atleast_2d(x)
    c = np.linalg.cholesky(cov)
    z = np.linalg.solve(c, (x - mean).T)
    d = x.shape[1]
    return -0.5 * (z * z).sum(axis=0) - np.log(np.diag(c)).sum() - 0.5 * d * math.log(2 * math.pi)


@dataclass(frozen=True)
class ScenarioConfig:
    """Crossing scenario.  Lengths in m, speeds in m/s, time in s.

    ``mixture_directions`` are the unit displacement directions of the
    pedestrian mixture components; their means are
    ``mixture_offset * direction`` and each component shares the model's
    pedestrian noise covariance scaled by ``mixture_cov_scale``.
    """

    dt: float = 0.1
    horizon: int = 19
    episode_steps: int = 60
    noise_diag: tuple = (1e-10, 1e-10, 1e-3, 1e-4, 0.02, 0.02)  # multiplied by dt
    pedestrian_velocity: tuple = (0.0, 1.0)
    robot_start: tuple = (0.0, 0.0, 1.0, 0.0)
    pedestrian_start: tuple = (2.5, -2.5)
    pedestrian_start_range: tuple = (0.5, 0.0)  # uniform half-widths in (x, y)
    reference_speed: float = 1.0
    reference_lane_y: float = 0.0
    tracking_weights: tuple = (1.0, 1.0, 0.1, 0.1)
    control_weights: tuple = (0.1, 0.1)
    collision_scale: float = COLL_SCALE
    collision_slope: float = COLL_SLOPE
    collision_offset: float = COLL_OFFSET
    collision_exponent: int = COLL_EXPONENT
    agent_diameter: float = 0.5
    mixture_weights: tuple = (0.4, 0.3, 0.3)
    mixture_directions: tuple = ((0.0, 0.0), (-1.0, 0.0), (0.0, -1.0))
    mixture_offset: float = 0.0
    mixture_cov_scale: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 0 or self.episode_steps < 1:
            raise ValueError("horizon must be >= 0 and episode_steps >= 1")
        if min(self.noise_diag) <= 0:
            raise ValueError("covariance entries must be positive")
        if len(self.mixture_weights) != len(self.mixture_directions):
            raise ValueError("mixture weights and directions differ in length")

    @property
    def W(self) -> np.ndarray:
        return np.diag(np.asarray(self.noise_diag, dtype=float) * self.dt)

    @property
    def pedestrian_cov(self) -> np.ndarray:
        return self.W[4:, 4:]

    def mixture(self, offset: Optional[float] = None) -> GaussianMixture:
        off = self.mixture_offset if offset is None else offset
        dirs = np.asarray(self.mixture_directions, dtype=float)
        K = len(dirs)
        covs = np.broadcast_to(self.mixture_cov_scale * self.pedestrian_cov, (K, 2, 2)).copy()
        return GaussianMixture(np.asarray(self.mixture_weights, dtype=float), off * dirs, covs)

    def initial_state(self, pedestrian_shift=(0.0, 0.0)) -> np.ndarray:
        px, py = self.pedestrian_start
        return np.array([*self.robot_start, px + pedestrian_shift[0], py + pedestrian_shift[1]], dtype=float)

    def with_updates(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def joint_dynamics(x: np.ndarray, u: np.ndarray, dt: float = 0.1, ped_velocity=(0.0, 1.0)) -> np.ndarray:
    """One Euler step of the joint robot/pedestrian system (noiseless)."""
    rx, ry, v, h, px, py = x
    a, b = u
    return np.array([
        rx + v * math.cos(h) * dt,
        ry + v * math.sin(h) * dt,
        v + a * dt,
        h + b * dt,
        px + ped_velocity[0] * dt,
        py + ped_velocity[1] * dt,
    ])


def joint_jacobians(xs: np.ndarray, us: np.ndarray, dt: float = 0.1):
    K = xs.shape[0]
    v, h = xs[:, V], xs[:, HEADING]
    A = np.broadcast_to(np.eye(STATE_DIM), (K, STATE_DIM, STATE_DIM)).copy()
    A[:, RX, V] = np.cos(h) * dt
    A[:, RX, HEADING] = -v * np.sin(h) * dt
    A[:, RY, V] = np.sin(h) * dt
    A[:, RY, HEADING] = v * np.cos(h) * dt
    B = np.zeros((K, STATE_DIM, CONTROL_DIM))
    B[:, V, 0] = dt
    B[:, HEADING, 1] = dt
    return A, B


def make_model(scenario: ScenarioConfig) -> SystemModel:
    dt, vel = scenario.dt, tuple(float(v) for v in scenario.pedestrian_velocity)

    def rollout(x0, ref_x, ref_u, gains, offsets):
        return _kernels.feedback_rollout(x0, ref_x, ref_u, gains, offsets, dt, vel[0], vel[1])

    return SystemModel(
        STATE_DIM, CONTROL_DIM,
        lambda x, u: joint_dynamics(x, u, dt, vel),
        scenario.W,
        jacobians=lambda xs, us: _kernels.jacobians(np.ascontiguousarray(xs), dt),
        feedback_rollout=rollout,
    )


def collision_cost(rx, ry, px, py, scale=COLL_SCALE, slope=COLL_SLOPE, offset=COLL_OFFSET, exponent=COLL_EXPONENT):
    """``scale / (slope * ||r - p|| + offset) ** exponent``."""
    dist = np.hypot(np.subtract(rx, px), np.subtract(ry, py))
    return scale / (slope * dist + offset) ** exponent


def _collision_derivs(xs: np.ndarray, sc: ScenarioConfig):
    """Value, gradient (K, 6) and Hessian (K, 6, 6) of the collision penalty."""
    K = xs.shape[0]
    delta = xs[:, [RX, RY]] - xs[:, [PX, PY]]
    rho = np.maximum(np.hypot(delta[:, 0], delta[:, 1]), 1e-9)
    base = sc.collision_slope * rho + sc.collision_offset
    p = sc.collision_exponent
    c = sc.collision_scale * base ** -p
    dc = -p * sc.collision_slope * sc.collision_scale * base ** (-p - 1)
    d2c = p * (p + 1) * sc.collision_slope ** 2 * sc.collision_scale * base ** (-p - 2)
    unit = delta / rho[:, None]
    g2 = dc[:, None] * unit
    outer = np.einsum("ki,kj->kij", unit, unit)
    H2 = d2c[:, None, None] * outer + (dc / rho)[:, None, None] * (np.eye(2) - outer)
    grad = np.zeros((K, STATE_DIM))
    grad[:, [RX, RY]] = g2
    grad[:, [PX, PY]] = -g2
    hess = np.zeros((K, STATE_DIM, STATE_DIM))
    r_idx, p_idx = [RX, RY], [PX, PY]
    hess[:, 0:2, 0:2] = H2
    hess[:, 4:6, 4:6] = H2
    hess[:, 0:2, 4:6] = -H2
    hess[:, 4:6, 0:2] = -H2
    return c, grad, hess


def reference(scenario: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    """Target robot substate ``(r_x, r_y, v, heading)`` at absolute time indices ``t``."""
    t = np.asarray(t, dtype=float)
    z = np.zeros(t.shape + (4,))
    z[..., 0] = scenario.robot_start[0] + scenario.reference_speed * scenario.dt * t
    z[..., 1] = scenario.reference_lane_y
    z[..., 2] = scenario.reference_speed
    return z


def tracking_and_control_cost(k: int, x: np.ndarray, u: Optional[np.ndarray], scenario: ScenarioConfig) -> float:
    """``½ eᵀ Q_track e + ½ uᵀ R_ctrl u`` with ``e`` the robot's deviation from the reference at time ``k``."""
    e = np.asarray(x[:4], dtype=float) - reference(scenario, k)
    Qt = np.asarray(scenario.tracking_weights, dtype=float)
    val = 0.5 * float(e @ (Qt * e))
    if u is not None:
        val += 0.5 * float(np.asarray(u) @ (np.asarray(scenario.control_weights) * np.asarray(u)))
    return val


def make_cost(scenario: ScenarioConfig, t0: int = 0, horizon: Optional[int] = None) -> CostModel:
    """Cost model for an MPC solve starting at absolute time index ``t0``."""
    N = scenario.horizon if horizon is None else horizon
    Qt = np.asarray(scenario.tracking_weights, dtype=float)
    Rc = np.asarray(scenario.control_weights, dtype=float)
    coll = dict(scale=scenario.collision_scale, slope=scenario.collision_slope,
                offset=scenario.collision_offset, exponent=scenario.collision_exponent)

    def stage(k, x, u):
        return tracking_and_control_cost(t0 + k, x, u, scenario) + float(collision_cost(x[RX], x[RY], x[PX], x[PY], **coll))

    def terminal(x):
        return tracking_and_control_cost(t0 + N + 1, x, None, scenario) + float(collision_cost(x[RX], x[RY], x[PX], x[PY], **coll))

    refs = reference(scenario, t0 + np.arange(N + 2))
    p = float(scenario.collision_exponent)

    def state_terms(ks, xs):
        return _kernels.state_terms(np.ascontiguousarray(xs), refs[ks], Qt, scenario.collision_scale,
                                    scenario.collision_slope, scenario.collision_offset, p)

    R_diag = np.diag(Rc)

    def derivs(ks, xs, us):
        K = len(ks)
        q, qx, Qxx = state_terms(np.asarray(ks), xs)
        q = q + 0.5 * (us * us * Rc).sum(axis=1)
        return q, qx, Qxx, us * Rc, np.broadcast_to(R_diag, (K, 2, 2)), np.zeros((K, 2, STATE_DIM))

    def terminal_derivs(x):
        q, g, H = state_terms(np.array([N + 1]), x[None])
        return float(q[0]), g[0], H[0]

    return CostModel(stage, terminal, N, derivatives=derivs, terminal_derivatives=terminal_derivs)


def sample_true_noise(mixture: GaussianMixture, model_cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Joint noise: robot block from the model Gaussian, pedestrian increment from ``mixture``."""
    robot = np.linalg.cholesky(model_cov[:4, :4]) @ rng.standard_normal(4)
    return np.concatenate([robot, mixture.sample(rng)])


def min_separation(states: np.ndarray, diameter: float) -> float:
    """Smallest center distance minus the agent diameter over a state log."""
    d = np.hypot(states[:, RX] - states[:, PX], states[:, RY] - states[:, PY])
    return float(d.min() - diameter)


def tracking_error(states: np.ndarray, scenario: ScenarioConfig) -> float:
    """Time-averaged positional deviation from the reference."""
    ref = reference(scenario, np.arange(len(states)))
    return float(np.hypot(states[:, RX] - ref[:, 0], states[:, RY] - ref[:, 1]).mean())
