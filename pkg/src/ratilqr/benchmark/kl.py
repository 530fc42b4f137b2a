"""Monte-Carlo KL divergence between the ground-truth and model noise, and mixture calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .crossing import GaussianMixture, ScenarioConfig, gaussian_logpdf


class CalibrationError(RuntimeError):
    """Target KL not reachable within the offset bracket."""


@dataclass(frozen=True)
class KLEstimate:
    value: float
    stderr: float
    n_samples: int


def estimate_kl_mc(
    logpdf_p: Callable[[np.ndarray], np.ndarray],
    sample_p: Callable[[np.random.Generator, int], np.ndarray],
    logpdf_q: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
    rng: np.random.Generator,
) -> KLEstimate:
    """``(1/n) Σ log p(xᵢ)/q(xᵢ)`` with ``xᵢ ~ p``, all in log space.

    A sample with ``log q = -inf`` makes the estimate infinite.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = sample_p(rng, n_samples)
    return kl_from_samples(logpdf_p(x), logpdf_q(x))


def kl_from_samples(logp: np.ndarray, logq: np.ndarray) -> KLEstimate:
    n = len(logp)
    if np.any(np.isneginf(logq)):
        return KLEstimate(math.inf, math.inf, n)
    ratio = logp - logq
    se = float(ratio.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return KLEstimate(float(ratio.mean()), se, n)


def joint_noise_densities(scenario: ScenarioConfig, mixture: GaussianMixture):
    """Per-stage ground-truth and model densities over the 6-D joint noise.

    Ground truth: robot block from the model Gaussian, pedestrian block from
    ``mixture``, independent.  Model: ``N(0, W)``.
    """
    W = scenario.W
    Wr = W[:4, :4]
    chol_r = np.linalg.cholesky(Wr)
    zero = np.zeros(6)

    def logp(x):
        return gaussian_logpdf(x[:, :4], zero[:4], Wr) + mixture.logpdf(x[:, 4:])

    def sample(rng, n):
        robot = rng.standard_normal((n, 4)) @ chol_r.T
        return np.hstack([robot, mixture.sample(rng, n)])

    def logq(x):
        return gaussian_logpdf(x, zero, W)

    return logp, sample, logq


def scenario_kl(scenario: ScenarioConfig, n_samples: int, rng: np.random.Generator, offset=None) -> KLEstimate:
    """KL over one MPC horizon: per-stage KL summed over the ``N+1`` white noise stages."""
    mix = scenario.mixture(offset)
    est = estimate_kl_mc(*joint_noise_densities(scenario, mix), n_samples, rng)
    stages = scenario.horizon + 1
    return KLEstimate(est.value * stages, est.stderr * stages, est.n_samples)


def _crn_kl(scenario: ScenarioConfig, n_samples: int, rng: np.random.Generator) -> Callable[[float], float]:
    """Horizon KL as a smooth function of the mixture offset using common random numbers."""
    base = scenario.mixture(1.0)
    labels = rng.choice(len(base.weights), size=n_samples, p=base.weights)
    z_ped = rng.standard_normal((n_samples, 2))
    W = scenario.W
    chol_p = np.stack([np.linalg.cholesky(c) for c in base.covariances])
    noise_ped = np.einsum("nij,nj->ni", chol_p[labels], z_ped)
    q_ped = W[4:, 4:]
    stages = scenario.horizon + 1

    def kl(offset: float) -> float:
        mix = scenario.mixture(offset)
        x = mix.means[labels] + noise_ped
        # the robot blocks of p and q coincide and cancel in the log ratio
        ratio = mix.logpdf(x) - gaussian_logpdf(x, np.zeros(2), q_ped)
        return float(ratio.mean()) * stages

    return kl


def calibrate_offset(
    scenario: ScenarioConfig,
    target: float,
    n_samples: int = 1_000_000,
    seed: int = 0,
    max_offset: float = 2.0,
    rtol: float = 1e-6,
) -> float:
    """Mixture offset whose horizon KL equals ``target`` (root of a CRN estimate)."""
    if not target > 0:
        raise ValueError("target KL must be > 0")
    f = _crn_kl(scenario, n_samples, np.random.default_rng(seed))
    lo, hi = 0.0, max_offset
    f_hi = f(hi)
    if not f_hi >= target:
        raise CalibrationError(f"KL at max offset {max_offset} is {f_hi:.4g} < target {target}")
    return float(brentq(lambda o: f(o) - target, lo, hi, rtol=rtol))
