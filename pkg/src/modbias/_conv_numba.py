"""Valid 2-D convolution, im2col kernels compiled with numba.

The patch gather, scatter, and bias stages are nopython loops; the two
matrix products go through np.dot so they hit the same BLAS the numpy
backend uses.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(x, k):
    # x: (B, C, H, W) -> (B*OH*OW, C*k*k), row-major over (b, i, j).
    # The k == 5 nest is identical to the generic one; the literal bound
    # lets LLVM unroll the tap loops (~30% faster on the shipped nets).
    B, C, H, W = x.shape
    OH, OW = H - k + 1, W - k + 1
    cols = np.empty((B * OH * OW, C * k * k))
    if k == 5:
        for bi in range(B):
            for i in range(OH):
                for j in range(OW):
                    row = (bi * OH + i) * OW + j
                    for c in range(C):
                        base = c * 25
                        for ki in range(5):
                            o = base + ki * 5
                            for kj in range(5):
                                cols[row, o + kj] = x[bi, c, i + ki, j + kj]
        return cols
    for bi in range(B):
        for i in range(OH):
            for j in range(OW):
                row = (bi * OH + i) * OW + j
                for c in range(C):
                    base = c * k * k
                    for ki in range(k):
                        o = base + ki * k
                        for kj in range(k):
                            cols[row, o + kj] = x[bi, c, i + ki, j + kj]
    return cols


@njit(cache=True)
def _col2im(dcols, B, C, H, W, k):
    OH, OW = H - k + 1, W - k + 1
    dx = np.zeros((B, C, H, W))
    for bi in range(B):
        for i in range(OH):
            for j in range(OW):
                row = (bi * OH + i) * OW + j
                for c in range(C):
                    base = c * k * k
                    for ki in range(k):
                        for kj in range(k):
                            dx[bi, c, i + ki, j + kj] += dcols[row, base + ki * k + kj]
    return dx


@njit(cache=True)
def conv2d_fwd(x, w, b):
    B, C, H, W = x.shape
    F = w.shape[0]
    k = w.shape[3]
    OH, OW = H - k + 1, W - k + 1
    cols = _im2col(x, k)
    wf = np.ascontiguousarray(w.reshape(F, C * k * k).T)
    out2 = np.dot(cols, wf)
    out = np.empty((B, F, OH, OW))
    for bi in range(B):
        for f in range(F):
            bf = b[f]
            for i in range(OH):
                base = (bi * OH + i) * OW
                for j in range(OW):
                    out[bi, f, i, j] = out2[base + j, f] + bf
    return out


@njit(cache=True)
def conv2d_bwd(x, w, dy, need_dx=True):
    B, C, H, W = x.shape
    F = w.shape[0]
    k = w.shape[3]
    OH, OW = H - k + 1, W - k + 1
    cols = _im2col(x, k)
    dyf = np.empty((B * OH * OW, F))
    db = np.zeros(F)
    for bi in range(B):
        for i in range(OH):
            for j in range(OW):
                row = (bi * OH + i) * OW + j
                for f in range(F):
                    g = dy[bi, f, i, j]
                    dyf[row, f] = g
                    db[f] += g
    dw = np.dot(np.ascontiguousarray(dyf.T), cols).reshape(F, C, k, k)
    if need_dx:
        wf = w.reshape(F, C * k * k)
        dcols = np.dot(dyf, np.ascontiguousarray(wf))
        dx = _col2im(dcols, B, C, H, W, k)
    else:
        dx = np.zeros((1, 1, 1, 1))
    return dx, dw, db
