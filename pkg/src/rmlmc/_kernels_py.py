"""Pure-Python (numpy) fallback for :mod:`rmlmc._kernels`.

Vectorised over rows, looping over fine time steps.  Operation order mirrors
the compiled kernels exactly so that both backends produce identical floats.
"""

import math

import numpy as np


def _scalar_step(kind, p, x, d, h, t):
    if kind == 0:
        return x + p[0]*x*h + p[1]*x*d + 0.5*p[1]*p[1]*x*(d*d - h)
    if kind == 1:
        xp = np.maximum(x, 0.0)
        y = x + p[0]*(p[1] - x)*h + p[2]*np.sqrt(xp)*d
        return np.where(xp > 0.0, y + 0.25*p[2]*p[2]*(d*d - h), y)
    return x + t*t*x*h + p[0]*x*d + 0.5*p[0]*p[0]*x*(d*d - h)


def scalar_advance(kind, params, dW, fine_level, step0, slot, acc, x, T):
    p = [float(v) for v in params]
    h = [T / float(1 << lvl) for lvl in range(fine_level + 1)]
    requested = [lvl for lvl in range(fine_level + 1) if slot[lvl] >= 0]
    coarsest = min(requested) if requested else fine_level
    for k in range(dW.shape[1]):
        g = step0 + k + 1
        inc = dW[:, k]
        lvl = fine_level
        while True:
            cnt = g >> (fine_level - lvl)
            s = slot[lvl]
            if s >= 0:
                x[:, s] = _scalar_step(kind, p, x[:, s], inc, h[lvl], float(cnt - 1) * h[lvl])
            if lvl == coarsest:
                break
            if cnt & 1:
                acc[:, lvl - 1] = inc
                break
            inc = acc[:, lvl - 1] + inc
            lvl -= 1


def _heston_step(p, sr, s, v, d1, d2, h):
    vp = np.maximum(v, 0.0)
    sv = np.sqrt(vp)
    b1 = p[4]*d2 + sr*d1
    b2 = d2
    sn = s + p[0]*s*h + sv*s*b1 + 0.5*vp*s*(b1*b1 - h)
    vn = v + p[1]*(p[2] - v)*h + p[3]*sv*b2
    pos = vp > 0.0
    sn = np.where(pos, sn + 0.25*p[3]*s*(b1*b2 - p[4]*h), sn)
    vn = np.where(pos, vn + 0.25*p[3]*p[3]*(b2*b2 - h), vn)
    return sn, vn


def heston_advance(params, dW1, dW2, fine_level, step0, slot, acc1, acc2, s, v,
                   antithetic, anti, T):
    p = [float(q) for q in params]
    sr = math.sqrt(1.0 - p[4]*p[4])
    h = [T / float(1 << lvl) for lvl in range(fine_level + 1)]
    requested = [lvl for lvl in range(fine_level + 1) if slot[lvl] >= 0]
    coarsest = min(requested) if requested else fine_level
    hf = h[fine_level]
    for k in range(dW1.shape[1]):
        g = step0 + k + 1
        i1 = dW1[:, k]
        i2 = dW2[:, k]
        if antithetic:
            if g & 1:
                anti[:, 2] = i1
                anti[:, 3] = i2
            else:
                sa, va = _heston_step(p, sr, anti[:, 0], anti[:, 1], i1, i2, hf)
                sa, va = _heston_step(p, sr, sa, va, anti[:, 2], anti[:, 3], hf)
                anti[:, 0] = sa
                anti[:, 1] = va
        lvl = fine_level
        while True:
            cnt = g >> (fine_level - lvl)
            sl = slot[lvl]
            if sl >= 0:
                s[:, sl], v[:, sl] = _heston_step(p, sr, s[:, sl], v[:, sl], i1, i2, h[lvl])
            if lvl == coarsest:
                break
            if cnt & 1:
                acc1[:, lvl - 1] = i1
                acc2[:, lvl - 1] = i2
                break
            i1 = acc1[:, lvl - 1] + i1
            i2 = acc2[:, lvl - 1] + i2
            lvl -= 1


def _bin_rows(idx, K):
    rows = idx.shape[0]
    flat = idx + K * np.arange(rows, dtype=np.int64)[:, None]
    return np.bincount(flat.ravel(), minlength=rows * K).reshape(rows, K).astype(np.int64)


def sweep_counts(u_tilde, cdf):
    rows, n = u_tilde.shape
    u = (np.arange(n, dtype=np.float64) + u_tilde) / float(n)
    idx = np.minimum(np.searchsorted(cdf, u, side="left"), cdf.shape[0] - 1)
    return _bin_rows(idx, cdf.shape[0])


def sweep_counts_shared(offset, n, cdf):
    u = (np.arange(n, dtype=np.float64)[None, :] + offset[:, None]) / float(n)
    idx = np.minimum(np.searchsorted(cdf, u, side="left"), cdf.shape[0] - 1)
    return _bin_rows(idx, cdf.shape[0])


def sweep_levels(u_tilde, cdf):
    n = u_tilde.shape[0]
    u = (np.arange(n, dtype=np.float64) + u_tilde) / float(n)
    return np.minimum(np.searchsorted(cdf, u, side="left"), cdf.shape[0] - 1).astype(np.int64) + 1
