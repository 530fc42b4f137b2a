"""Compiled inner loops for the risk-sensitive backward recursion."""

from __future__ import annotations

import math

import numba
import numpy as np

OK = 0
BREAKDOWN = 1  # M_k not positive definite
NOT_PD = 2  # H_k + mu I not positive definite


@numba.njit(cache=True, error_model="numpy")
def cholesky(A):
    """Lower Cholesky factor and a success flag (no exception on failure)."""
    n = A.shape[0]
    Lc = np.zeros((n, n))
    for j in range(n):
        d = A[j, j]
        for p in range(j):
            d -= Lc[j, p] * Lc[j, p]
        if not d > 0.0:
            return Lc, False
        Lc[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            v = A[i, j]
            for p in range(j):
                v -= Lc[i, p] * Lc[j, p]
            Lc[i, j] = v / Lc[j, j]
    return Lc, True


@numba.njit(cache=True, error_model="numpy")
def forward_sub(Lc, Bm):
    """Solve ``Lc X = Bm`` for lower-triangular ``Lc``."""
    n, k = Bm.shape
    X = np.empty((n, k))
    for c in range(k):
        for i in range(n):
            v = Bm[i, c]
            for p in range(i):
                v -= Lc[i, p] * X[p, c]
            X[i, c] = v / Lc[i, i]
    return X


@numba.njit(cache=True, error_model="numpy")
def back_sub(Lc, Bm):
    """Solve ``Lcᵀ X = Bm`` for lower-triangular ``Lc``."""
    n, k = Bm.shape
    X = np.empty((n, k))
    for c in range(k):
        for i in range(n - 1, -1, -1):
            v = Bm[i, c]
            for p in range(i + 1, n):
                v -= Lc[p, i] * X[p, c]
            X[i, c] = v / Lc[i, i]
    return X


@numba.njit(cache=True, error_model="numpy")
def _mm(X, Y, out):
    """``out = X @ Y`` without BLAS dispatch (the matrices here are tiny)."""
    a, b = X.shape
    c = Y.shape[1]
    for i in range(a):
        for j in range(c):
            v = 0.0
            for p in range(b):
                v += X[i, p] * Y[p, j]
            out[i, j] = v


@numba.njit(cache=True, error_model="numpy")
def _mtm(X, Y, out):
    """``out = Xᵀ @ Y``."""
    b, a = X.shape
    c = Y.shape[1]
    for i in range(a):
        for j in range(c):
            v = 0.0
            for p in range(b):
                v += X[p, i] * Y[p, j]
            out[i, j] = v


@numba.njit(cache=True, error_model="numpy")
def _mtv(X, y, out):
    """``out = Xᵀ @ y``."""
    b, a = X.shape
    for i in range(a):
        v = 0.0
        for p in range(b):
            v += X[p, i] * y[p]
        out[i] = v


@numba.njit(cache=True, error_model="numpy")
def _mv(X, y, out):
    a, b = X.shape
    for i in range(a):
        v = 0.0
        for p in range(b):
            v += X[i, p] * y[p]
        out[i] = v


@numba.njit(cache=True, error_model="numpy")
def recursion(A, B, q, qx, Qxx, r, Ruu, Pux, qT, qxT, QT, Wc, Winv, gains, offsets, theta, mu, greedy):
    K, n, m = B.shape
    s = np.empty(K + 1)
    sv = np.empty((K + 1, n))
    S = np.empty((K + 1, n, n))
    Ms = np.empty((K, n, n))
    gs = np.empty((K, m))
    Gs = np.empty((K, m, n))
    Hs = np.empty((K, m, m))
    Ls = gains.copy()
    ls = offsets.copy()
    s[K] = qT
    sv[K] = qxT
    S[K] = QT
    # workspaces
    T1 = np.empty((n, n))
    C = np.empty((n, n))
    Minv = np.empty((n, n))
    E = np.empty((n, n))
    ES = np.empty((n, n))
    T2 = np.empty((n, n))
    Es = np.empty(n)
    Ms_s = np.empty(n)
    BtES = np.empty((m, n))
    Bg = np.empty(m)
    G = np.empty((m, n))
    H = np.empty((m, m))
    Hreg = np.empty((m, m))
    HL = np.empty((m, n))
    LtHL = np.empty((n, n))
    Hl = np.empty(m)
    rhs = np.empty((m, n + 1))
    tmp_n = np.empty(n)
    for k in range(K - 1, -1, -1):
        S1 = S[k + 1]
        s1 = sv[k + 1]
        Ak = A[k]
        Bk = B[k]
        if theta > 0.0:
            Lw = Wc[k]
            _mm(S1, Lw, T1)
            _mtm(Lw, T1, T2)
            for i in range(n):
                for j in range(n):
                    C[i, j] = (1.0 if i == j else 0.0) - theta * 0.5 * (T2[i, j] + T2[j, i])
            cC, ok = cholesky(C)
            if not ok:
                return BREAKDOWN, k, s, sv, S, Ms, gs, Gs, Hs, Ls, ls
            Z = forward_sub(cC, np.ascontiguousarray(Lw.T))
            _mtm(Z, Z, Minv)
            _mm(S1, Minv, E)
            for i in range(n):
                for j in range(n):
                    E[i, j] = (1.0 if i == j else 0.0) + theta * E[i, j]
            logdet = 0.0
            for i in range(n):
                logdet += math.log(cC[i, i])
            _mv(Minv, s1, Ms_s)
            quad = 0.0
            for i in range(n):
                quad += s1[i] * Ms_s[i]
            risk = -logdet / theta + 0.5 * theta * quad
            for i in range(n):
                for j in range(n):
                    Ms[k, i, j] = Winv[k, i, j] - theta * S1[i, j]
            _mm(E, S1, T2)
            _mv(E, s1, Es)
        else:
            _mm(Wc[k], Wc[k].T, T1)
            tr = 0.0
            for i in range(n):
                for j in range(n):
                    tr += T1[i, j] * S1[j, i]
            risk = 0.5 * tr
            Ms[k] = Winv[k]
            T2[:, :] = S1
            Es[:] = s1
        for i in range(n):
            for j in range(n):
                ES[i, j] = 0.5 * (T2[i, j] + T2[j, i])
        _mtm(Bk, ES, BtES)
        _mtv(Bk, Es, Bg)
        g = gs[k]
        for i in range(m):
            g[i] = r[k, i] + Bg[i]
        _mm(BtES, Ak, G)
        for i in range(m):
            for j in range(n):
                G[i, j] += Pux[k, i, j]
        _mm(BtES, Bk, Hreg)
        for i in range(m):
            for j in range(m):
                H[i, j] = Ruu[k, i, j] + 0.5 * (Hreg[i, j] + Hreg[j, i])
        if greedy:
            for i in range(m):
                for j in range(m):
                    Hreg[i, j] = H[i, j] + (mu if i == j else 0.0)
            cH, ok = cholesky(Hreg)
            if not ok:
                return NOT_PD, k, s, sv, S, Ms, gs, Gs, Hs, Ls, ls
            for i in range(m):
                for j in range(n):
                    rhs[i, j] = G[i, j]
                rhs[i, n] = g[i]
            sol = back_sub(cH, forward_sub(cH, rhs))
            for i in range(m):
                for j in range(n):
                    Ls[k, i, j] = -sol[i, j]
                ls[k, i] = -sol[i, n]
        L = Ls[k]
        l = ls[k]
        _mv(H, l, Hl)
        val = q[k] + s[k + 1] + risk
        for i in range(m):
            val += 0.5 * l[i] * Hl[i] + l[i] * g[i]
        s[k] = val
        # s_k = q_x + Aᵀ E s' + Lᵀ(H l + g) + Gᵀ l
        _mtv(Ak, Es, tmp_n)
        for i in range(m):
            Hl[i] += g[i]
        for j in range(n):
            v = qx[k, j] + tmp_n[j]
            for i in range(m):
                v += L[i, j] * Hl[i] + G[i, j] * l[i]
            sv[k, j] = v
        # S_k = Q + Aᵀ ES A + Lᵀ H L + Lᵀ G + Gᵀ L
        _mm(ES, Ak, T1)
        _mtm(Ak, T1, C)
        _mm(H, L, HL)
        _mtm(L, HL, LtHL)
        for i in range(n):
            for j in range(n):
                LtG = 0.0
                LtGt = 0.0
                for p in range(m):
                    LtG += L[p, i] * G[p, j]
                    LtGt += L[p, j] * G[p, i]
                T2[i, j] = Qxx[k, i, j] + C[i, j] + LtHL[i, j] + LtG + LtGt
        for i in range(n):
            for j in range(n):
                S[k, i, j] = 0.5 * (T2[i, j] + T2[j, i])
        Gs[k] = G
        Hs[k] = H
    return OK, -1, s, sv, S, Ms, gs, Gs, Hs, Ls, ls
