import math

import numpy as np
import pytest

from ratilqr.benchmark.crossing import GaussianMixture, ScenarioConfig, gaussian_logpdf
from ratilqr.benchmark.kl import (
    CalibrationError,
    calibrate_offset,
    estimate_kl_mc,
    joint_noise_densities,
    kl_from_samples,
    scenario_kl,
)


def gauss1(mean, var=1.0):
    def logpdf(x):
        return -0.5 * (x[:, 0] - mean) ** 2 / var - 0.5 * math.log(2 * math.pi * var)

    def sample(rng, n):
        return mean + math.sqrt(var) * rng.standard_normal((n, 1))

    return logpdf, sample


def pedestrian_kl_by_quadrature(scenario, offset, half_width=12.0, num=1201):
    """Per-stage KL on the 2-D pedestrian marginal by a dense tensor grid."""
    mix = scenario.mixture(offset)
    q_cov = scenario.pedestrian_cov
    s = math.sqrt(q_cov[0, 0])
    g = np.linspace(-half_width * s, half_width * s, num)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    logp = mix.logpdf(pts)
    logq = gaussian_logpdf(pts, np.zeros(2), q_cov)
    h = g[1] - g[0]
    return float(np.sum(np.exp(logp) * (logp - logq)) * h * h)


def test_scalar_gaussian_kl_half():
    logp, sample = gauss1(1.0)
    logq, _ = gauss1(0.0)
    est = estimate_kl_mc(logp, sample, logq, 100_000, np.random.default_rng(0))
    assert abs(est.value - 0.5) < 3 * est.stderr


def test_identical_distributions_give_zero():
    sc = ScenarioConfig(mixture_weights=(1.0,), mixture_directions=((0.0, 0.0),))
    est = estimate_kl_mc(*joint_noise_densities(sc, sc.mixture()), 10_000, np.random.default_rng(1))
    assert abs(est.value) < 1e-12


def test_kl_nonnegative_in_expectation():
    sc = ScenarioConfig(mixture_offset=0.05)
    dens = joint_noise_densities(sc, sc.mixture())
    values = [estimate_kl_mc(*dens, 10_000, np.random.default_rng(s)).value for s in range(50)]
    se = np.std(values, ddof=1) / math.sqrt(len(values))
    assert np.mean(values) >= -3 * se


def test_infinite_when_model_density_vanishes():
    est = kl_from_samples(np.zeros(3), np.array([0.0, -np.inf, 0.0]))
    assert est.value == math.inf


def test_rejects_empty_sample():
    logp, sample = gauss1(0.0)
    with pytest.raises(ValueError):
        estimate_kl_mc(logp, sample, logp, 0, np.random.default_rng(0))


@pytest.mark.parametrize("offset", [0.0356, 0.1267])
def test_scenario_kl_matches_quadrature(offset):
    sc = ScenarioConfig()
    ref = pedestrian_kl_by_quadrature(sc, offset) * (sc.horizon + 1)
    est = scenario_kl(sc, 1_000_000, np.random.default_rng(2), offset)
    assert est.value == pytest.approx(ref, rel=0.02)
    assert abs(est.value - ref) < 4 * est.stderr + 1e-3 * ref


def test_calibration_hits_target_and_is_monotone():
    sc = ScenarioConfig()
    offsets = [calibrate_offset(sc, d, n_samples=200_000, seed=0) for d in (1.34, 7.78, 32.02)]
    assert offsets[0] < offsets[1] < offsets[2]
    for d, off in zip((1.34, 7.78, 32.02), offsets):
        ref = pedestrian_kl_by_quadrature(sc, off) * (sc.horizon + 1)
        assert ref == pytest.approx(d, rel=0.03)


def test_calibration_errors():
    sc = ScenarioConfig()
    with pytest.raises(ValueError):
        calibrate_offset(sc, 0.0, n_samples=1000)
    with pytest.raises(CalibrationError):
        calibrate_offset(sc, 32.02, n_samples=10_000, max_offset=0.01)


def test_single_component_mixture_equal_to_model_has_zero_kl():
    sc = ScenarioConfig()
    mix = GaussianMixture(np.ones(1), np.zeros((1, 2)), sc.pedestrian_cov[None])
    est = estimate_kl_mc(*joint_noise_densities(sc, mix), 5_000, np.random.default_rng(0))
    assert est.value == pytest.approx(0.0, abs=1e-12)
