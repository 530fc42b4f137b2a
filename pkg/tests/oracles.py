"""Independent reference implementations used as test oracles.

These deliberately use explicit inverses and textbook forms rather than the
factorized recursion of the package.
"""

import numpy as np


def leqg_dp(A, B, Q, R, Qf, W, horizon, theta, x0):
    """Exact LEQG dynamic programming for ``x' = Ax + Bu + w``, cost ``½xᵀQx + ½uᵀRu``.

    Returns ``(s0, gains)`` where ``s0 = (1/θ) log E exp(θ J)`` under the
    optimal linear feedback (``θ = 0``: expected cost) and ``gains[k]`` are
    the optimal feedback matrices.  Raises ``ArithmeticError`` when
    ``W⁻¹ - θP`` is not positive definite.
    """
    n = A.shape[0]
    P = np.array(Qf, dtype=float)
    c = 0.0
    gains = []
    for _ in range(horizon + 1):
        if theta > 0:
            M = np.linalg.inv(W) - theta * P
            if not np.isfinite(M).all() or np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) <= 0:
                raise ArithmeticError("breakdown")
            Pt = P + theta * P @ np.linalg.inv(M) @ P
            sign, logdet = np.linalg.slogdet(np.eye(n) - theta * W @ P)
            c += -logdet / (2 * theta)
        else:
            Pt = P
            c += 0.5 * np.trace(W @ P)
        K = -np.linalg.inv(R + B.T @ Pt @ B) @ B.T @ Pt @ A
        P = Q + A.T @ Pt @ A + A.T @ Pt @ B @ K
        gains.append(K)
    return 0.5 * x0 @ P @ x0 + c, np.array(gains[::-1])


def lqg_riccati(A, B, Q, R, Qf, W, horizon, x0):
    """Finite-horizon LQG: textbook discrete Riccati recursion plus the noise constant."""
    P = np.array(Qf, dtype=float)
    const = 0.0
    gains = []
    for _ in range(horizon + 1):
        const += 0.5 * np.trace(W @ P)
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        gains.append(-K)
    return 0.5 * x0 @ P @ x0 + const, np.array(gains[::-1])


def bilevel_objective(A, B, Q, R, Qf, W, horizon, x0, d, thetas):
    """``s0(θ) + d/θ`` on a grid, ``inf`` where the recursion breaks down."""
    out = np.empty(len(thetas))
    for i, t in enumerate(thetas):
        try:
            out[i] = leqg_dp(A, B, Q, R, Qf, W, horizon, t, x0)[0] + d / t
        except ArithmeticError:
            out[i] = np.inf
    return out


def unicycle_jacobian(x, u, dt):
    """Hand-derived Jacobian of one Euler step of the joint robot/pedestrian model."""
    _, _, v, h, _, _ = x
    A = np.eye(6)
    A[0, 2], A[0, 3] = np.cos(h) * dt, -v * np.sin(h) * dt
    A[1, 2], A[1, 3] = np.sin(h) * dt, v * np.cos(h) * dt
    B = np.zeros((6, 2))
    B[2, 0] = B[3, 1] = dt
    return A, B


def random_lq(rng, n_max=4, m_max=2, N_max=10):
    """Random stabilizable LQ instance with moderate noise."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    N = int(rng.integers(1, N_max + 1))
    A = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    G = rng.standard_normal((n, n))
    Q = G @ G.T / n + 0.1 * np.eye(n)
    H = rng.standard_normal((m, m))
    R = H @ H.T / m + 0.1 * np.eye(m)
    Qf = 2 * Q
    V = rng.standard_normal((n, n))
    W = 0.05 * (V @ V.T / n + 0.2 * np.eye(n))
    x0 = rng.standard_normal(n)
    return A, B, Q, R, Qf, W, N, x0


def max_feasible_theta(A, B, Q, R, Qf, W, N, x0, hi=1e3, iters=60):
    """Largest θ (by bisection) for which the exact recursion stays finite."""
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        try:
            s0, _ = leqg_dp(A, B, Q, R, Qf, W, N, mid, x0)
            if not np.isfinite(s0):
                raise ArithmeticError("overflow")
            lo = mid
        except (ArithmeticError, np.linalg.LinAlgError):
            hi = mid
    return lo
