"""How θ trades expected cost for tail risk on a double integrator.

Solves the sample LQ problem for a few θ, then checks each policy by
closed-loop Monte Carlo: larger θ buys a smaller cost spread at a slightly
higher mean, until the recursion breaks down.
"""

from pathlib import Path

import numpy as np

from ratilqr.config import load_config
from ratilqr.dynamics import rollout_stochastic
from ratilqr.ileqg import ILEQGConfig, NeuroticBreakdown, solve

lq = load_config(Path(__file__).resolve().parents[1] / "configs" / "lq_sample.ini").lq
model, cost = lq.model(), lq.cost()
u0 = np.zeros((lq.horizon + 1, 1))
chol = np.linalg.cholesky(lq.W)
rng = np.random.default_rng(0)
noise = rng.standard_normal((2000, lq.horizon + 1, 2)) @ chol.T

print(f"{'theta':>6} {'s0':>9} {'mean J':>9} {'std J':>9} {'p99 J':>9}")
for theta in (0.0, 0.5, 1.0, 1.5, 1.6):
    try:
        sol = solve(model, cost, lq.x0, u0, ILEQGConfig(theta=theta))
    except NeuroticBreakdown as exc:
        print(f"{theta:6.2f}  breakdown ({exc})")
        continue
    J = np.array([rollout_stochastic(model, cost, sol.policy, lq.x0, w)[2] for w in noise])
    print(f"{theta:6.2f} {sol.cost_to_go:9.4f} {J.mean():9.4f} {J.std():9.4f} {np.quantile(J, 0.99):9.4f}")
