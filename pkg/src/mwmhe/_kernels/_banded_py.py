"""Pure-Python twin of the compiled banded kernels (same storage, same API)."""
import numpy as np


def band_cholesky(ab):
    p = ab.shape[0] - 1
    n = ab.shape[1]
    for j in range(n):
        d = ab[0, j]
        if not d > 0.0:
            return j + 1
        d = np.sqrt(d)
        ab[0, j] = d
        lim = min(p, n - 1 - j)
        if lim == 0:
            continue
        col = ab[1:lim + 1, j]
        col /= d
        for kk in range(1, lim + 1):
            lkj = col[kk - 1]
            if lkj != 0.0:
                ab[0:lim + 1 - kk, j + kk] -= col[kk - 1:lim] * lkj
    return 0


def band_solve(L, b):
    p = L.shape[0] - 1
    n = L.shape[1]
    for j in range(n):
        b[j] /= L[0, j]
        lim = min(p, n - 1 - j)
        if lim:
            b[j + 1:j + 1 + lim] -= np.outer(L[1:lim + 1, j], b[j])
    for j in range(n - 1, -1, -1):
        lim = min(p, n - 1 - j)
        if lim:
            b[j] -= L[1:lim + 1, j] @ b[j + 1:j + 1 + lim]
        b[j] /= L[0, j]


def band_add_outer(ab, vals, starts, weights):
    w = vals.shape[1]
    for a in range(w):
        for bb in range(a + 1):
            np.add.at(ab[a - bb], starts + bb, weights * vals[:, a] * vals[:, bb])


def band_symv(ab, x, out):
    out[:] = ab[0] * x
    n = x.size
    for d in range(1, ab.shape[0]):
        n_d = n - d
        if n_d <= 0:
            break
        out[d:] += ab[d, :n_d] * x[:n_d]
        out[:n_d] += ab[d, :n_d] * x[d:]


def span_matvec(vals, starts, x, out):
    idx = starts[:, None] + np.arange(vals.shape[1])[None, :]
    out[:] = np.einsum("ij,ij->i", vals, x[idx])


def span_rmatvec(vals, starts, y, out):
    idx = starts[:, None] + np.arange(vals.shape[1])[None, :]
    out += np.bincount(idx.ravel(), weights=(vals * y[:, None]).ravel(), minlength=out.size)


def band_add_dense(ab, start, C):
    w = C.shape[0]
    for d in range(min(w, ab.shape[0])):
        ab[d, start:start + w - d] += np.diagonal(C, -d)
