# cython: language_level=3
"""Compiled temporal convolution and matching kernels.

Same contracts and channels-last layout as ``fusiongen._pykernels``.  With
kernels flattened to ``(d_out, 2*r*d_in)`` every output window is a
contiguous run of the padded input row, so each kernel reduces to short
axpy loops that the C compiler vectorizes.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

NAME = "compiled"


cdef inline Py_ssize_t _clip_lo(Py_ssize_t v) nogil:
    return v if v > 0 else 0


def _flat_kernel(K):
    K = np.asarray(K, dtype=np.float64)
    d_out, d_in, k = K.shape
    return np.ascontiguousarray(K.transpose(0, 2, 1)).reshape(d_out, k * d_in)


def corr_down(x, K, Py_ssize_t r):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], t = x.shape[2], di = x.shape[3]
    cdef Py_ssize_t do = K.shape[0]
    cdef Py_ssize_t J = t // r, span = 2 * r * di, hop = r * di, off = (r // 2) * di
    cdef Py_ssize_t row = t * di
    cdef double[:, ::1] xv = x.reshape(B * C, row)
    cdef double[:, ::1] Wt = np.ascontiguousarray(_flat_kernel(K).T)  # (span, do)
    out = np.zeros((B * C, J * do), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t n, j, q, o, q0, q1, base
    cdef double v
    cdef double* op
    cdef const double* wp
    with nogil:
        for n in range(B * C):
            for j in range(J):
                base = j * hop - off
                q0 = _clip_lo(-base)
                q1 = row - base
                if q1 > span:
                    q1 = span
                op = &ov[n, j * do]
                for q in range(q0, q1):
                    v = xv[n, base + q]
                    wp = &Wt[q, 0]
                    for o in range(do):
                        op[o] += wp[o] * v
    return out.reshape(B, C, J, do)


def scatter_up(y, K, Py_ssize_t r, Py_ssize_t t):
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t B = y.shape[0], C = y.shape[1], J = y.shape[2], do = y.shape[3]
    cdef Py_ssize_t di = K.shape[1]
    cdef Py_ssize_t span = 2 * r * di, hop = r * di, off = (r // 2) * di
    cdef Py_ssize_t row = t * di
    cdef double[:, ::1] yv = y.reshape(B * C, J * do)
    cdef double[:, ::1] W = _flat_kernel(K)  # (do, span)
    out = np.zeros((B * C, row), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t n, j, q, o, q0, q1, base
    cdef double v
    with nogil:
        for n in range(B * C):
            for j in range(J):
                base = j * hop - off
                q0 = _clip_lo(-base)
                q1 = row - base
                if q1 > span:
                    q1 = span
                for o in range(do):
                    v = yv[n, j * do + o]
                    for q in range(q0, q1):
                        ov[n, base + q] += v * W[o, q]
    return out.reshape(B, C, t, di)


def kernel_grad(x, g, Py_ssize_t r):
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], t = x.shape[2], di = x.shape[3]
    cdef Py_ssize_t J = g.shape[2], do = g.shape[3]
    cdef Py_ssize_t span = 2 * r * di, hop = r * di, off = (r // 2) * di
    cdef Py_ssize_t row = t * di
    cdef double[:, ::1] xv = x.reshape(B * C, row)
    cdef double[:, ::1] gv = g.reshape(B * C, J * do)
    gW = np.zeros((do, span), dtype=np.float64)
    cdef double[:, ::1] wv = gW
    cdef Py_ssize_t n, j, q, o, q0, q1, base
    cdef double v
    with nogil:
        for n in range(B * C):
            for j in range(J):
                base = j * hop - off
                q0 = _clip_lo(-base)
                q1 = row - base
                if q1 > span:
                    q1 = span
                for o in range(do):
                    v = gv[n, j * do + o]
                    for q in range(q0, q1):
                        wv[o, q] += v * xv[n, base + q]
    return np.ascontiguousarray(gW.reshape(do, 2 * r, di).transpose(0, 2, 1))


def cosine_argmax(targets, sources):
    cdef double[:, ::1] tv = np.ascontiguousarray(targets, dtype=np.float64)
    cdef double[:, ::1] sv = np.ascontiguousarray(sources, dtype=np.float64)
    cdef Py_ssize_t nq = tv.shape[0], N = sv.shape[0], d = tv.shape[1]
    idx = np.full(nq, -1, dtype=np.int64)
    best = np.full(nq, np.nan, dtype=np.float64)
    cdef long long[::1] iv = idx
    cdef double[::1] bv = best
    unit_arr = np.zeros((N, d), dtype=np.float64)
    ok_arr = np.zeros(N, dtype=np.uint8)
    tq_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] un = unit_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef double[::1] tq = tq_arr
    cdef Py_ssize_t q, p, a, arg
    cdef double nrm, acc, top
    with nogil:
        for p in range(N):
            acc = 0.0
            for a in range(d):
                acc = acc + sv[p, a] * sv[p, a]
            nrm = sqrt(acc)
            if nrm > 0.0:
                ok[p] = 1
                for a in range(d):
                    un[p, a] = sv[p, a] / nrm
        for q in range(nq):
            acc = 0.0
            for a in range(d):
                acc = acc + tv[q, a] * tv[q, a]
            nrm = sqrt(acc)
            if nrm == 0.0:
                continue
            for a in range(d):
                tq[a] = tv[q, a] / nrm
            top = -INFINITY
            arg = -1
            for p in range(N):
                if not ok[p]:
                    continue
                acc = 0.0
                for a in range(d):
                    acc = acc + tq[a] * un[p, a]
                if acc > top:
                    top = acc
                    arg = p
            if arg >= 0:
                iv[q] = arg
                bv[q] = top
    return idx, best
