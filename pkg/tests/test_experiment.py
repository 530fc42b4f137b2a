import math

import numpy as np

from ratilqr.benchmark.crossing import ScenarioConfig
from ratilqr.benchmark.experiment import run_episode, run_experiment
from ratilqr.rat_ilqr import Mode, RatIlqrConfig

SMALL = ScenarioConfig(horizon=6, episode_steps=4, mixture_offset=0.07)
SOLVERS = {"rat-ilqr": RatIlqrConfig(kl_bound=5.0), "ilqg-baseline": RatIlqrConfig(mode=Mode.ILQG_BASELINE)}


def test_same_seed_gives_identical_report():
    a = run_experiment(SMALL, SOLVERS, 2, seed=3)
    b = run_experiment(SMALL, SOLVERS, 2, seed=3)
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    assert [r.method for r in a.runs] == ["rat-ilqr", "rat-ilqr", "ilqg-baseline", "ilqg-baseline"]


def test_methods_see_the_same_start_and_noise():
    a = run_episode(SMALL, SOLVERS["rat-ilqr"], 5, 1)
    b = run_episode(SMALL, SOLVERS["ilqg-baseline"], 5, 1)
    np.testing.assert_array_equal(a.states[0], b.states[0])
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.noise, rb.noise)


def test_distant_pedestrian_never_collides():
    far = SMALL.with_updates(pedestrian_start=(40.0, -40.0), episode_steps=10)
    report = run_experiment(far, SOLVERS, 2, seed=0)
    for r in report.runs:
        assert not r.collided and r.min_sep > 30 and not r.aborted
        assert math.isfinite(r.tracking_err)


def test_theta_ratio_in_unit_interval():
    report = run_experiment(SMALL, {"rat-ilqr": SOLVERS["rat-ilqr"]}, 2, seed=1)
    for r in report.runs:
        assert 0 < r.mean_theta_ratio <= 1
