# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: batched GFDM stencil solves and pair flux assembly.

Results match :mod:`ncdmm._kernels_py` to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

cdef double CROSS_EPS = 1e-12


cdef int _invert(double[:, ::1] A, double[:, ::1] Ainv, int k) noexcept nogil:
    """Gauss-Jordan with partial pivoting on the leading k x k block; 0 on failure."""
    cdef int r, c, piv, q
    cdef double best, f, tmp
    for r in range(k):
        for c in range(k):
            Ainv[r, c] = 1.0 if r == c else 0.0
    for c in range(k):
        piv = c
        best = fabs(A[c, c])
        for r in range(c + 1, k):
            if fabs(A[r, c]) > best:
                best = fabs(A[r, c])
                piv = r
        if best == 0.0:
            return 0
        if piv != c:
            for q in range(k):
                tmp = A[c, q]; A[c, q] = A[piv, q]; A[piv, q] = tmp
                tmp = Ainv[c, q]; Ainv[c, q] = Ainv[piv, q]; Ainv[piv, q] = tmp
        f = 1.0 / A[c, c]
        for q in range(k):
            A[c, q] *= f
            Ainv[c, q] *= f
        for r in range(k):
            if r != c:
                f = A[r, c]
                if f != 0.0:
                    for q in range(k):
                        A[r, q] -= f * A[c, q]
                        Ainv[r, q] -= f * Ainv[c, q]
    return 1


def stencil_batch(offsets, dx, dy, wsq):
    cdef cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef double[::1] vx = np.ascontiguousarray(dx, dtype=np.float64)
    cdef double[::1] vy = np.ascontiguousarray(dy, dtype=np.float64)
    cdef double[::1] vw = np.ascontiguousarray(wsq, dtype=np.float64)
    cdef Py_ssize_t nc = off.shape[0] - 1
    cdef Py_ssize_t nnz = vx.shape[0]
    out_coeffs = np.zeros((5, nnz))
    out_cond = np.empty(nc)
    out_red = np.zeros(nc, dtype=np.int8)
    cdef double[:, ::1] coeffs = out_coeffs
    cdef double[::1] cond = out_cond
    cdef signed char[::1] reduced = out_red
    cdef double[:, ::1] A = np.zeros((5, 5))
    cdef double[:, ::1] Awork = np.zeros((5, 5))
    cdef double[:, ::1] Ainv = np.zeros((5, 5))
    cdef double l[5]
    cdef double unscale[5]
    cdef Py_ssize_t c, j, a, b
    cdef int r, q, k
    cdef double s, d, wmax, w, x, y, cross, na, ninv, colsum, acc
    with nogil:
        for c in range(nc):
            a = off[c]
            b = off[c + 1]
            if b == a:
                cond[c] = INFINITY
                continue
            s = 0.0
            wmax = 0.0
            cross = 0.0
            for j in range(a, b):
                d = sqrt(vx[j] * vx[j] + vy[j] * vy[j])
                if d > s:
                    s = d
                if vw[j] > wmax:
                    wmax = vw[j]
            if s <= 0.0 or wmax <= 0.0:
                cond[c] = INFINITY
                continue
            for j in range(a, b):
                x = vx[j] / s
                y = vy[j] / s
                if fabs(x * y) > cross:
                    cross = fabs(x * y)
            k = 5
            if cross < CROSS_EPS:
                k = 4
                reduced[c] = 1
            for r in range(5):
                for q in range(5):
                    A[r, q] = 0.0
            for j in range(a, b):
                x = vx[j] / s
                y = vy[j] / s
                w = vw[j] / wmax
                l[0] = x; l[1] = y; l[2] = 0.5 * x * x; l[3] = 0.5 * y * y; l[4] = x * y
                for r in range(k):
                    for q in range(k):
                        A[r, q] += w * l[r] * l[q]
            na = 0.0
            for q in range(k):
                colsum = 0.0
                for r in range(k):
                    colsum += fabs(A[r, q])
                    Awork[r, q] = A[r, q]
                if colsum > na:
                    na = colsum
            if not _invert(Awork, Ainv, k):
                cond[c] = INFINITY
                continue
            ninv = 0.0
            for q in range(k):
                colsum = 0.0
                for r in range(k):
                    colsum += fabs(Ainv[r, q])
                if colsum > ninv:
                    ninv = colsum
            cond[c] = na * ninv
            unscale[0] = 1.0 / s; unscale[1] = 1.0 / s
            unscale[2] = 1.0 / (s * s); unscale[3] = unscale[2]; unscale[4] = unscale[2]
            for j in range(a, b):
                x = vx[j] / s
                y = vy[j] / s
                w = vw[j] / wmax
                l[0] = x; l[1] = y; l[2] = 0.5 * x * x; l[3] = 0.5 * y * y; l[4] = x * y
                for r in range(k):
                    acc = 0.0
                    for q in range(k):
                        acc += Ainv[r, q] * l[q]
                    coeffs[r, j] = acc * w * unscale[r]
    return out_coeffs, out_cond, out_red


def pair_flux(pi, pj, T, p, krw, kro, dkrw, dkro, bw, bo, dbw, dbo, muw, muo,
              idx_p, idx_s, row_o, row_w, R, jr, jc, jv):
    cdef cnp.int64_t[::1] vi = np.ascontiguousarray(pi, dtype=np.int64)
    cdef cnp.int64_t[::1] vj = np.ascontiguousarray(pj, dtype=np.int64)
    cdef double[::1] vT = np.ascontiguousarray(T, dtype=np.float64)
    cdef double[::1] vp = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] kr_w = np.ascontiguousarray(krw, dtype=np.float64)
    cdef double[::1] kr_o = np.ascontiguousarray(kro, dtype=np.float64)
    cdef double[::1] dkr_w = np.ascontiguousarray(dkrw, dtype=np.float64)
    cdef double[::1] dkr_o = np.ascontiguousarray(dkro, dtype=np.float64)
    cdef double[::1] Bw = np.ascontiguousarray(bw, dtype=np.float64)
    cdef double[::1] Bo = np.ascontiguousarray(bo, dtype=np.float64)
    cdef double[::1] dBw = np.ascontiguousarray(dbw, dtype=np.float64)
    cdef double[::1] dBo = np.ascontiguousarray(dbo, dtype=np.float64)
    cdef double[::1] Mw = np.ascontiguousarray(muw, dtype=np.float64)
    cdef double[::1] Mo = np.ascontiguousarray(muo, dtype=np.float64)
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(idx_p, dtype=np.int64)
    cdef cnp.int64_t[::1] isw = np.ascontiguousarray(idx_s, dtype=np.int64)
    cdef cnp.int64_t[::1] ro = np.ascontiguousarray(row_o, dtype=np.int64)
    cdef cnp.int64_t[::1] rw = np.ascontiguousarray(row_w, dtype=np.int64)
    cdef double[::1] vR = R
    cdef cnp.int64_t[::1] vjr = jr
    cdef cnp.int64_t[::1] vjc = jc
    cdef double[::1] vjv = jv
    cdef Py_ssize_t npair = vi.shape[0]
    out_fo = np.empty(npair)
    out_fw = np.empty(npair)
    cdef double[::1] fo = out_fo
    cdef double[::1] fw = out_fw
    cdef Py_ssize_t e, i, j, up, k, ph, side
    cdef int q
    cdef cnp.int64_t row, cols[3]
    cdef double dp, bavg, muavg, m, g, F, dmi, dmj, vals[3], sign, kr_up, dkr_up
    with nogil:
        for e in range(npair):
            i = vi[e]
            j = vj[e]
            dp = vp[j] - vp[i]
            up = j if dp >= 0.0 else i
            for ph in range(2):
                if ph == 0:
                    bavg = 0.5 * (Bo[i] + Bo[j]); muavg = 0.5 * (Mo[i] + Mo[j])
                    kr_up = kr_o[up]; dkr_up = dkr_o[up]
                    dmi = -0.5 * dBo[i]; dmj = -0.5 * dBo[j]
                else:
                    bavg = 0.5 * (Bw[i] + Bw[j]); muavg = 0.5 * (Mw[i] + Mw[j])
                    kr_up = kr_w[up]; dkr_up = dkr_w[up]
                    dmi = -0.5 * dBw[i]; dmj = -0.5 * dBw[j]
                m = 1.0 / (bavg * muavg)
                dmi = dmi / (bavg * bavg * muavg)
                dmj = dmj / (bavg * bavg * muavg)
                g = kr_up * vT[e]
                F = g * m * dp
                if ph == 0:
                    fo[e] = F
                else:
                    fw[e] = F
                vals[0] = g * (dmi * dp - m)
                vals[1] = g * (dmj * dp + m)
                vals[2] = dkr_up * vT[e] * m * dp
                cols[0] = ip[i]; cols[1] = ip[j]; cols[2] = isw[up]
                k = 12 * e + 6 * ph
                for side in range(2):
                    if side == 0:
                        row = ro[i] if ph == 0 else rw[i]
                        sign = 1.0
                    else:
                        row = ro[j] if ph == 0 else rw[j]
                        sign = -1.0
                    if row >= 0:
                        vR[row] += sign * F
                    for q in range(3):
                        if row >= 0:
                            vjr[k] = row
                            vjc[k] = cols[q]
                            vjv[k] = sign * vals[q]
                        else:
                            vjr[k] = -1
                            vjc[k] = 0
                            vjv[k] = 0.0
                        k += 1
    return out_fo, out_fw
