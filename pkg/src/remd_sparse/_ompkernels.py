"""Compiled batch greedy-coding kernels.

The per-patch loop runs orthogonal matching pursuit against a
precomputed gram matrix, growing a Cholesky factor of the selected
sub-gram one atom at a time. Everything is float64 and sequential, so
results are bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def omp_batch(G, A0, y2, err2, max_nnz):
    """Greedy residual-projection coding of many patches at once.

    G is the K x K column gram, A0 the K x N initial correlations, y2
    the squared patch norms, err2 the squared stopping error. Returns
    (idx, coef, counts): per patch the selected column indices, their
    least-squares coefficients, and how many were selected.
    """
    K, N = A0.shape
    idx = np.full((max_nnz, N), -1, dtype=np.int64)
    coef = np.zeros((max_nnz, N))
    counts = np.zeros(N, dtype=np.int64)

    L = np.zeros((max_nnz, max_nnz))
    w = np.zeros(max_nnz)
    fwd = np.zeros(max_nnz)
    sol = np.zeros(max_nnz)
    a0I = np.zeros(max_nnz)
    alpha = np.zeros(K)
    used = np.zeros(K, dtype=np.bool_)

    for p in range(N):
        eps = y2[p]
        if eps <= err2:
            continue
        for k in range(K):
            alpha[k] = A0[k, p]
            used[k] = False
        s = 0
        while s < max_nnz and eps > err2:
            best = -1
            bestv = 1e-12
            for k in range(K):
                if not used[k]:
                    v = abs(alpha[k])
                    if v > bestv:
                        bestv = v
                        best = k
            if best < 0:
                break

            # grow the Cholesky factor of the selected sub-gram
            if s == 0:
                L[0, 0] = 1.0
            else:
                for t in range(s):
                    acc = G[idx[t, p], best]
                    for u in range(t):
                        acc -= L[t, u] * w[u]
                    w[t] = acc / L[t, t]
                d = 1.0
                for t in range(s):
                    d -= w[t] * w[t]
                if d <= 1e-12:
                    break       # nearly dependent column, stop here
                for t in range(s):
                    L[s, t] = w[t]
                L[s, s] = np.sqrt(d)

            idx[s, p] = best
            used[best] = True
            a0I[s] = A0[best, p]
            s += 1

            # least-squares coefficients over the support
            for t in range(s):
                acc = a0I[t]
                for u in range(t):
                    acc -= L[t, u] * fwd[u]
                fwd[t] = acc / L[t, t]
            for t in range(s - 1, -1, -1):
                acc = fwd[t]
                for u in range(t + 1, s):
                    acc -= L[u, t] * sol[u]
                sol[t] = acc / L[t, t]

            # refreshed correlations and residual energy
            proj = 0.0
            for t in range(s):
                proj += sol[t] * a0I[t]
            eps = y2[p] - proj
            for k in range(K):
                acc = A0[k, p]
                for t in range(s):
                    acc -= G[k, idx[t, p]] * sol[t]
                alpha[k] = acc

        for t in range(s):
            coef[t, p] = sol[t]
        counts[p] = s
    return idx, coef, counts


@njit(cache=True)
def reconstruct_batch(D, idx, coef, counts):
    """Sum the selected columns into dense patch columns."""
    n = D.shape[0]
    N = counts.size
    out = np.zeros((n, N))
    for p in range(N):
        for t in range(counts[p]):
            k = idx[t, p]
            c = coef[t, p]
            for r in range(n):
                out[r, p] += D[r, k] * c
    return out
