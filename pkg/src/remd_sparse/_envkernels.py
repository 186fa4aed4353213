"""Numba kernels for the envelope linear operator.

The operator is A = diag(pins) + lam * (I - W)^T (I - W) where W holds
row-normalized bilateral weights. W's rows are stored as a dense
(rows, cols, K) stack, K = (2H+1)^2 - 1 neighbor offsets per pixel;
out-of-bounds neighbors carry exact zero weight. Applies stream the
stack once per pass, which is what keeps the solver usable on one core.
"""

import numpy as np
from numba import njit


def neighbor_offsets(H: int):
    """(K, 2) array of (m, n) offsets, row-major, center excluded."""
    offs = [(m, n) for m in range(-H, H + 1) for n in range(-H, H + 1)
            if (m, n) != (0, 0)]
    return np.asarray(offs, dtype=np.int64)


def flat_offsets(H: int, padded_cols: int):
    """Flat pad-array index deltas for reading x[p - o]."""
    offs = neighbor_offsets(H)
    return -offs[:, 0] * padded_cols - offs[:, 1]


@njit(cache=True)
def build_stack(img_pad, spatial, inv_two_sr2, H, st):
    """Fill st[r, c, k] with normalized bilateral weights of pixel (r, c).

    img_pad is padded by H with a huge sentinel so out-of-bounds
    neighbors get weight exactly 0 (the squared difference overflows the
    exponential into 0). spatial holds the per-offset Gaussian factors.
    """
    rows = img_pad.shape[0] - 2 * H
    pc = img_pad.shape[1]
    cols = pc - 2 * H
    K = st.shape[2]
    flat = img_pad.ravel()
    for r in range(rows):
        row_base = (r + H) * pc + H
        for c in range(cols):
            base = row_base + c
            center = flat[base]
            total = 0.0
            k = 0
            for m in range(-H, H + 1):
                mrow = base - m * pc
                for n in range(-H, H + 1):
                    if m == 0 and n == 0:
                        continue
                    d = flat[mrow - n] - center
                    w = spatial[k] * np.exp(-d * d * inv_two_sr2)
                    st[r, c, k] = w
                    total += w
                    k += 1
            inv = 1.0 / total
            for k in range(K):
                st[r, c, k] *= inv


@njit(cache=True)
def apply_operator(st, offs, xpad, pins, lam, H, zpad, spad, out):
    """out = pins*x + lam*(z - W^T z) with z = x - W x.

    xpad carries x in its interior with a zero halo of width H; zpad and
    spad are scratch pads of the same shape. Two streaming passes over
    the stack: a gather for W x, a scatter for W^T z.
    """
    rows, cols, K = st.shape
    pc = xpad.shape[1]
    xf = xpad.ravel()
    zf = zpad.ravel()
    sf = spad.ravel()
    for i in range(sf.size):
        sf[i] = 0.0
    for r in range(rows):
        row_base = (r + H) * pc + H
        for c in range(cols):
            base = row_base + c
            acc = 0.0
            for k in range(K):
                acc += st[r, c, k] * xf[base + offs[k]]
            zf[base] = xf[base] - acc
    for r in range(rows):
        row_base = (r + H) * pc + H
        for c in range(cols):
            base = row_base + c
            zv = zf[base]
            for k in range(K):
                sf[base + offs[k]] += st[r, c, k] * zv
    for r in range(rows):
        row_base = (r + H) * pc + H
        for c in range(cols):
            base = row_base + c
            out[r, c] = pins[r, c] * xf[base] + lam * (zf[base] - sf[base])


@njit(cache=True)
def woodbury_gram(g, pr, pc):
    """K[i, j] = g[(pr_i - pr_j) mod R, (pc_i - pc_j) mod C] + I."""
    R, C = g.shape
    s = pr.size
    K = np.empty((s, s))
    for i in range(s):
        for j in range(s):
            K[i, j] = g[(pr[i] - pr[j]) % R, (pc[i] - pc[j]) % C]
        K[i, i] += 1.0
    return K
