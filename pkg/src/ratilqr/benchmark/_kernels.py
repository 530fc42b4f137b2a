"""Compiled stage loops for the crossing model."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def step(x, u, dt, vx, vy, out):
    v, h = x[2], x[3]
    out[0] = x[0] + v * math.cos(h) * dt
    out[1] = x[1] + v * math.sin(h) * dt
    out[2] = v + u[0] * dt
    out[3] = h + u[1] * dt
    out[4] = x[4] + vx * dt
    out[5] = x[5] + vy * dt


@njit(cache=True)
def feedback_rollout(x0, ref_x, ref_u, gains, offsets, dt, vx, vy):
    K, m = ref_u.shape
    n = x0.shape[0]
    xs = np.empty((K + 1, n))
    us = np.empty((K, m))
    xs[0] = x0
    for k in range(K):
        for i in range(m):
            acc = ref_u[k, i] + offsets[k, i]
            for j in range(n):
                acc += gains[k, i, j] * (xs[k, j] - ref_x[k, j])
            us[k, i] = acc
        step(xs[k], us[k], dt, vx, vy, xs[k + 1])
    return xs, us


@njit(cache=True)
def jacobians(xs, dt):
    K = xs.shape[0]
    A = np.zeros((K, 6, 6))
    B = np.zeros((K, 6, 2))
    for k in range(K):
        for i in range(6):
            A[k, i, i] = 1.0
        v, h = xs[k, 2], xs[k, 3]
        c, s = math.cos(h), math.sin(h)
        A[k, 0, 2] = c * dt
        A[k, 0, 3] = -v * s * dt
        A[k, 1, 2] = s * dt
        A[k, 1, 3] = v * c * dt
        B[k, 2, 0] = dt
        B[k, 3, 1] = dt
    return A, B


@njit(cache=True)
def state_terms(xs, ref, Qt, scale, slope, offset, p):
    """Tracking plus collision value, gradient and Hessian at each row of ``xs``."""
    K = xs.shape[0]
    q = np.empty(K)
    g = np.zeros((K, 6))
    H = np.zeros((K, 6, 6))
    for k in range(K):
        val = 0.0
        for i in range(4):
            e = xs[k, i] - ref[k, i]
            val += 0.5 * Qt[i] * e * e
            g[k, i] = Qt[i] * e
            H[k, i, i] = Qt[i]
        dx = xs[k, 0] - xs[k, 4]
        dy = xs[k, 1] - xs[k, 5]
        rho = max(math.hypot(dx, dy), 1e-9)
        base = slope * rho + offset
        c = scale * base ** -p
        dc = -p * slope * scale * base ** (-p - 1)
        d2c = p * (p + 1) * slope * slope * scale * base ** (-p - 2)
        ux, uy = dx / rho, dy / rho
        unit = (ux, uy)
        q[k] = val + c
        for a in range(2):
            ga = dc * unit[a]
            g[k, a] += ga
            g[k, 4 + a] -= ga
            for b in range(2):
                eye = 1.0 if a == b else 0.0
                h2 = d2c * unit[a] * unit[b] + (dc / rho) * (eye - unit[a] * unit[b])
                H[k, a, b] += h2
                H[k, 4 + a, 4 + b] += h2
                H[k, a, 4 + b] -= h2
                H[k, 4 + a, b] -= h2
    return q, g, H
