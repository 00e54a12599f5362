# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: streaming multi-mesh Milstein paths and the CDF sweep.

Every function here has a twin in ``_kernels_py`` with the same signature and
the same floating-point operation order, so both backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline double _scalar_step(int kind, const double* p, double x, double d,
                                double h, double t) noexcept nogil:
    cdef double xp, y
    if kind == 0:
        # gbm: p = (mu, sigma)
        return x + p[0]*x*h + p[1]*x*d + 0.5*p[1]*p[1]*x*(d*d - h)
    elif kind == 1:
        # cir: p = (kappa, theta, sigma); sqrt argument floored at zero
        xp = x if x > 0.0 else 0.0
        y = x + p[0]*(p[1] - x)*h + p[2]*sqrt(xp)*d
        if xp > 0.0:
            y = y + 0.25*p[2]*p[2]*(d*d - h)
        return y
    else:
        # modgbm: p = (sigma,), drift t^2 x evaluated at the left endpoint
        return x + t*t*x*h + p[0]*x*d + 0.5*p[0]*p[0]*x*(d*d - h)


def scalar_advance(int kind, const double[::1] params, const double[:, ::1] dW, int fine_level,
                   i64 step0, const i64[::1] slot, double[:, ::1] acc, double[:, ::1] x,
                   double T):
    """Push a block of fine increments through all requested dyadic meshes.

    ``slot[l]`` is the column of ``x`` holding the state on mesh ``l`` (or -1).
    ``acc[:, l]`` carries the half-finished pairwise sum feeding mesh ``l``.
    """
    cdef Py_ssize_t rows = dW.shape[0], c = dW.shape[1]
    cdef Py_ssize_t r, k
    cdef int lvl, coarsest = fine_level, s
    cdef i64 g, cnt
    cdef double inc
    cdef double h[64]
    cdef const double* p = &params[0]
    for lvl in range(fine_level + 1):
        h[lvl] = T / <double>(<i64>1 << lvl)
        if slot[lvl] >= 0 and lvl < coarsest:
            coarsest = lvl
    with nogil:
        for r in range(rows):
            for k in range(c):
                g = step0 + k + 1
                inc = dW[r, k]
                lvl = fine_level
                while True:
                    cnt = g >> (fine_level - lvl)
                    s = slot[lvl]
                    if s >= 0:
                        x[r, s] = _scalar_step(kind, p, x[r, s], inc, h[lvl],
                                               <double>(cnt - 1) * h[lvl])
                    if lvl == coarsest:
                        break
                    if cnt & 1:
                        acc[r, lvl - 1] = inc
                        break
                    inc = acc[r, lvl - 1] + inc
                    lvl -= 1


cdef inline void _heston_step(const double* p, double sr, double* s, double* v,
                              double d1, double d2, double h) noexcept nogil:
    # p = (mu, kappa, theta, sigma, rho); truncated Milstein, no Levy areas
    cdef double vp, sv, b1, b2, sn, vn
    vp = v[0] if v[0] > 0.0 else 0.0
    sv = sqrt(vp)
    b1 = p[4]*d2 + sr*d1
    b2 = d2
    sn = s[0] + p[0]*s[0]*h + sv*s[0]*b1 + 0.5*vp*s[0]*(b1*b1 - h)
    vn = v[0] + p[1]*(p[2] - v[0])*h + p[3]*sv*b2
    if vp > 0.0:
        sn = sn + 0.25*p[3]*s[0]*(b1*b2 - p[4]*h)
        vn = vn + 0.25*p[3]*p[3]*(b2*b2 - h)
    s[0] = sn
    v[0] = vn


def heston_advance(const double[::1] params, const double[:, ::1] dW1, const double[:, ::1] dW2,
                   int fine_level, i64 step0, const i64[::1] slot,
                   double[:, ::1] acc1, double[:, ::1] acc2,
                   double[:, ::1] s, double[:, ::1] v,
                   bint antithetic, double[:, ::1] anti, double T):
    """Heston analogue of :func:`scalar_advance`.

    With ``antithetic`` set, ``anti`` columns are (S, V, held dW1, held dW2)
    of the fine path driven by the pair-swapped increments.
    """
    cdef Py_ssize_t rows = dW1.shape[0], c = dW1.shape[1]
    cdef Py_ssize_t r, k
    cdef int lvl, coarsest = fine_level, sl
    cdef i64 g, cnt
    cdef double i1, i2, hf
    cdef double h[64]
    cdef const double* p = &params[0]
    cdef double sr = sqrt(1.0 - params[4]*params[4])
    for lvl in range(fine_level + 1):
        h[lvl] = T / <double>(<i64>1 << lvl)
        if slot[lvl] >= 0 and lvl < coarsest:
            coarsest = lvl
    hf = h[fine_level]
    with nogil:
        for r in range(rows):
            for k in range(c):
                g = step0 + k + 1
                i1 = dW1[r, k]
                i2 = dW2[r, k]
                if antithetic:
                    if g & 1:
                        anti[r, 2] = i1
                        anti[r, 3] = i2
                    else:
                        _heston_step(p, sr, &anti[r, 0], &anti[r, 1], i1, i2, hf)
                        _heston_step(p, sr, &anti[r, 0], &anti[r, 1],
                                     anti[r, 2], anti[r, 3], hf)
                lvl = fine_level
                while True:
                    cnt = g >> (fine_level - lvl)
                    sl = slot[lvl]
                    if sl >= 0:
                        _heston_step(p, sr, &s[r, sl], &v[r, sl], i1, i2, h[lvl])
                    if lvl == coarsest:
                        break
                    if cnt & 1:
                        acc1[r, lvl - 1] = i1
                        acc2[r, lvl - 1] = i2
                        break
                    i1 = acc1[r, lvl - 1] + i1
                    i2 = acc2[r, lvl - 1] + i2
                    lvl -= 1


def sweep_counts(const double[:, ::1] u_tilde, const double[::1] cdf):
    """Stratified counts: row ``r`` uses U_j = (j + u_tilde[r, j]) / n."""
    cdef Py_ssize_t rows = u_tilde.shape[0], n = u_tilde.shape[1]
    cdef Py_ssize_t K = cdf.shape[0], r, j, k
    cdef double u, F, dn = <double>n
    out = np.zeros((rows, K), dtype=np.int64)
    cdef i64[:, ::1] o = out
    with nogil:
        for r in range(rows):
            k = 0
            F = cdf[0]
            for j in range(n):
                u = (<double>j + u_tilde[r, j]) / dn
                while u > F and k < K - 1:
                    k += 1
                    F = cdf[k]
                o[r, k] += 1
    return out


def sweep_counts_shared(const double[::1] offset, i64 n, const double[::1] cdf):
    """Systematic counts: one offset per row shared by all n strata."""
    cdef Py_ssize_t rows = offset.shape[0], K = cdf.shape[0], r, j, k
    cdef double u, F, dn = <double>n
    out = np.zeros((rows, K), dtype=np.int64)
    cdef i64[:, ::1] o = out
    with nogil:
        for r in range(rows):
            k = 0
            F = cdf[0]
            for j in range(n):
                u = (<double>j + offset[r]) / dn
                while u > F and k < K - 1:
                    k += 1
                    F = cdf[k]
                o[r, k] += 1
    return out


def sweep_levels(const double[::1] u_tilde, const double[::1] cdf):
    """Draws R^(1..n) (1-based levels) for one stratified allocation."""
    cdef Py_ssize_t n = u_tilde.shape[0], K = cdf.shape[0], j, k = 0
    cdef double u, F = cdf[0], dn = <double>n
    out = np.empty(n, dtype=np.int64)
    cdef i64[::1] o = out
    with nogil:
        for j in range(n):
            u = (<double>j + u_tilde[j]) / dn
            while u > F and k < K - 1:
                k += 1
                F = cdf[k]
            o[j] = k + 1
    return out
