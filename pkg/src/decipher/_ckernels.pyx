# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DP kernels.

Same signatures and results as :mod:`decipher._pykernels`; see that module
for the recurrences written out in plain Python.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

cdef enum:
    OP_NONE = 0
    OP_SUB = 1
    OP_DEL = 2
    OP_INS = 3


def align_chunk(const int[::1] x, const int[::1] phones, const cnp.int64_t[::1] offsets,
                const double[:, ::1] log_map, double log_alpha,
                int min_len, int max_len, bint keep_backpointers=True):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nstems = offsets.shape[0] - 1
    cdef int eps = log_map.shape[1] - 1
    cdef int nl = max_len - min_len + 1
    cdef int maxy = 0
    cdef Py_ssize_t s, y, tau, i, j, width, hi, ylen, base
    cdef int k
    cdef double best, cand, lm_del
    cdef signed char op

    for y in range(nstems):
        if offsets[y + 1] - offsets[y] > maxy:
            maxy = offsets[y + 1] - offsets[y]

    V_arr = np.full((n, nstems, nl), -np.inf)
    cdef double[:, :, ::1] V = V_arr
    bp_arr = np.zeros((n if keep_backpointers else 1, nstems, maxy + 1, max_len + 1), dtype=np.int8)
    cdef signed char[:, :, :, ::1] bp = bp_arr
    table_arr = np.empty((maxy + 1, max_len + 1))
    cdef double[:, ::1] T = table_arr

    with nogil:
        for s in range(n):
            width = n - s
            if width > max_len:
                width = max_len
            if width < min_len:
                continue
            for y in range(nstems):
                base = offsets[y]
                ylen = offsets[y + 1] - base
                if 2 * ylen < min_len:
                    continue
                T[0, 0] = 0.0
                for i in range(1, width + 1):
                    T[0, i] = -INFINITY
                for tau in range(1, ylen + 1):
                    k = phones[base + tau - 1]
                    lm_del = log_map[k, eps]
                    hi = 2 * tau
                    if hi > width:
                        hi = width
                    for i in range(hi + 1):
                        # tie-break order: substitute, delete, insert
                        best = -INFINITY
                        op = OP_NONE
                        if i >= 1:
                            cand = T[tau - 1, i - 1] + log_map[k, x[s + i - 1]]
                            if cand > best:
                                best = cand
                                op = OP_SUB
                        cand = T[tau - 1, i] + lm_del
                        if cand > best:
                            best = cand
                            op = OP_DEL
                        if i >= 2:
                            cand = (T[tau - 1, i - 2] + log_map[k, x[s + i - 2]]
                                    + log_alpha + log_map[k, x[s + i - 1]])
                            if cand > best:
                                best = cand
                                op = OP_INS
                        T[tau, i] = best
                        if keep_backpointers:
                            bp[s, y, tau, i] = op
                    for i in range(hi + 1, width + 1):
                        T[tau, i] = -INFINITY
                        if keep_backpointers:
                            bp[s, y, tau, i] = OP_NONE
                hi = 2 * ylen
                if hi > width:
                    hi = width
                for j in range(min_len, hi + 1):
                    V[s, y, j - min_len] = T[ylen, j]
    return V_arr, (bp_arr if keep_backpointers else None)


def align_backward(const int[::1] x, const int[::1] phones, const cnp.int64_t[::1] offsets,
                   const signed char[:, :, :, ::1] bp, const double[:, :, ::1] dV,
                   int min_len, double[:, ::1] grad_log_map):
    """Accumulate dV along every argmax path into ``grad_log_map`` (in place).

    Returns the summed adjoint of ``log_alpha`` (one unit per insertion).
    """
    cdef Py_ssize_t n = dV.shape[0]
    cdef Py_ssize_t nstems = dV.shape[1]
    cdef Py_ssize_t nl = dV.shape[2]
    cdef int eps = grad_log_map.shape[1] - 1
    cdef Py_ssize_t s, y, j, tau, i, base
    cdef double g
    cdef double g_alpha = 0.0
    cdef int k
    cdef signed char op

    with nogil:
        for s in range(n):
            for y in range(nstems):
                base = offsets[y]
                for j in range(nl):
                    g = dV[s, y, j]
                    if g == 0.0:
                        continue
                    tau = offsets[y + 1] - base
                    i = j + min_len
                    while tau > 0:
                        op = bp[s, y, tau, i]
                        k = phones[base + tau - 1]
                        if op == OP_SUB:
                            grad_log_map[k, x[s + i - 1]] += g
                            i -= 1
                        elif op == OP_DEL:
                            grad_log_map[k, eps] += g
                        elif op == OP_INS:
                            grad_log_map[k, x[s + i - 2]] += g
                            grad_log_map[k, x[s + i - 1]] += g
                            g_alpha += g
                            i -= 2
                        else:
                            break
                        tau -= 1
    return g_alpha


def segment_forward(const double[:, ::1] log_span, const double[::1] log_prior,
                    double log_p0, int min_len):
    """Prefix log-marginals plus posterior-expected quality and coverage.

    ``log_span[s, l - min_len]`` is the log-likelihood of the span starting
    at ``s`` with length ``l``; ``log_prior[0]`` is log Pr(O) and
    ``log_prior[1 + l - min_len]`` is log Pr(E_l).
    """
    cdef Py_ssize_t n = log_span.shape[0]
    cdef Py_ssize_t nl = log_span.shape[1]
    cdef Py_ssize_t i, j, l, start
    cdef double t, mx, tot, w, rq, rc, log_o

    a_arr = np.empty(n + 1)
    rq_arr = np.zeros(n + 1)
    rc_arr = np.zeros(n + 1)
    cdef double[::1] a = a_arr
    cdef double[::1] q = rq_arr
    cdef double[::1] c = rc_arr

    log_o = log_prior[0] + log_p0
    a[0] = 0.0
    with nogil:
        for i in range(1, n + 1):
            mx = log_o + a[i - 1]
            for j in range(nl):
                l = j + min_len
                if l > i:
                    break
                t = log_prior[1 + j] + log_span[i - l, j] + a[i - l]
                if t > mx:
                    mx = t
            if mx == -INFINITY:
                a[i] = -INFINITY
                q[i] = 0.0
                c[i] = 0.0
                continue
            tot = 0.0
            rq = 0.0
            rc = 0.0
            t = log_o + a[i - 1]
            if t > -INFINITY:
                w = exp(t - mx)
                tot += w
                rq += w * q[i - 1]
                rc += w * c[i - 1]
            for j in range(nl):
                l = j + min_len
                if l > i:
                    break
                start = i - l
                t = log_prior[1 + j] + log_span[start, j] + a[start]
                if t > -INFINITY:
                    w = exp(t - mx)
                    tot += w
                    rq += w * (q[start] + exp(log_span[start, j] / l))
                    rc += w * (c[start] + l)
            a[i] = mx + log(tot)
            q[i] = rq / tot
            c[i] = rc / tot
    return a_arr, rq_arr, rc_arr


def segment_backward(const double[:, ::1] log_span, const double[::1] log_prior,
                     double log_p0, int min_len,
                     const double[::1] a, const double[::1] q, const double[::1] c,
                     double g_a, double g_q, double g_c):
    """Reverse mode of :func:`segment_forward` for the output triple at n."""
    cdef Py_ssize_t n = log_span.shape[0]
    cdef Py_ssize_t nl = log_span.shape[1]
    cdef Py_ssize_t i, j, l, start
    cdef double t, pi, tbar, phi, ab, qb, cb, log_o

    grad_arr = np.zeros((n, nl))
    cdef double[:, ::1] grad = grad_arr
    abar_arr = np.zeros(n + 1)
    qbar_arr = np.zeros(n + 1)
    cbar_arr = np.zeros(n + 1)
    cdef double[::1] abar = abar_arr
    cdef double[::1] qbar = qbar_arr
    cdef double[::1] cbar = cbar_arr

    log_o = log_prior[0] + log_p0
    abar[n] = g_a
    qbar[n] = g_q
    cbar[n] = g_c
    with nogil:
        for i in range(n, 0, -1):
            if a[i] == -INFINITY:
                continue
            ab = abar[i]
            qb = qbar[i]
            cb = cbar[i]
            if ab == 0.0 and qb == 0.0 and cb == 0.0:
                continue
            t = log_o + a[i - 1]
            if t > -INFINITY:
                pi = exp(t - a[i])
                tbar = pi * (ab + qb * (q[i - 1] - q[i]) + cb * (c[i - 1] - c[i]))
                abar[i - 1] += tbar
                qbar[i - 1] += qb * pi
                cbar[i - 1] += cb * pi
            for j in range(nl):
                l = j + min_len
                if l > i:
                    break
                start = i - l
                t = log_prior[1 + j] + log_span[start, j] + a[start]
                if t == -INFINITY:
                    continue
                pi = exp(t - a[i])
                phi = exp(log_span[start, j] / l)
                tbar = pi * (ab + qb * (q[start] + phi - q[i]) + cb * (c[start] + l - c[i]))
                abar[start] += tbar
                qbar[start] += qb * pi
                cbar[start] += cb * pi
                grad[start, j] += tbar + qb * pi * phi / l
    return grad_arr
