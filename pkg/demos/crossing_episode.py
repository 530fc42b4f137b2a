"""One closed-loop crossing episode for RAT iLQR and the iLQG baseline.

Both controllers face the same pedestrian start and noise.  Prints the
trajectory every ten steps, then the episode metrics.
"""

from dataclasses import replace
from pathlib import Path

from ratilqr.benchmark.experiment import run_episode, summarize_episode
from ratilqr.config import load_config
from ratilqr.rat_ilqr import Mode

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "crossing_d32.02.ini")
sc = cfg.scenario
for mode in (Mode.RAT_ILQR, Mode.ILQG_BASELINE):
    log = run_episode(sc, replace(cfg.solver, mode=mode), seed=0, run_id=0, ce_state=cfg.ce_state)
    print(f"\n{mode.value}")
    print(f"{'t':>3} {'robot x':>8} {'robot y':>8} {'ped x':>7} {'ped y':>7} {'theta*':>7}")
    for r in log.records[::10]:
        x = r.state
        print(f"{r.step:3d} {x[0]:8.3f} {x[1]:8.3f} {x[4]:7.3f} {x[5]:7.3f} {r.theta_star:7.3f}")
    res = summarize_episode(log, sc, mode.value, 0)
    print(f"min separation {res.min_sep:.3f} m, tracking error {res.tracking_err:.3f}, "
          f"mean theta*/theta_max {res.mean_theta_ratio:.3f}")
