"""Pure-Python DP kernels.

Reference implementation of the compiled kernels in ``_ckernels.pyx``.  Used
when the extension is not built, and by the test-suite to cross-check the
compiled path.

Alignment lattice
-----------------
State ``(tau, i)`` is "first ``tau`` stem phones have produced the first
``i`` span characters".  Transitions into ``(tau, i)``:

* substitute from ``(tau-1, i-1)``: ``log M[y_tau, x_i]``
* delete from ``(tau-1, i)``: ``log M[y_tau, eps]``
* insert from ``(tau-1, i-2)``:
  ``log M[y_tau, x_{i-1}] + log alpha + log M[y_tau, x_i]``

Segmentation lattice
--------------------
``a[i]`` is the log-probability of the prefix ``x[:i]``; ``q[i]`` and
``c[i]`` are the posterior expectations, given that prefix, of the summed
length-normalised span likelihood and of the matched character count.
"""

import math

import numpy as np

OP_NONE, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3
NEG_INF = -math.inf


def align_chunk(x, phones, offsets, log_map, log_alpha, min_len, max_len, keep_backpointers=True):
    n = len(x)
    nstems = len(offsets) - 1
    eps = log_map.shape[1] - 1
    nl = max_len - min_len + 1
    maxy = max((offsets[y + 1] - offsets[y] for y in range(nstems)), default=0)
    V = np.full((n, nstems, nl), NEG_INF)
    bp = np.zeros((n if keep_backpointers else 1, nstems, maxy + 1, max_len + 1), dtype=np.int8)
    lm = log_map.tolist()
    xs = [int(v) for v in x]

    for s in range(n):
        width = min(max_len, n - s)
        if width < min_len:
            continue
        for y in range(nstems):
            stem = [int(p) for p in phones[offsets[y]:offsets[y + 1]]]
            if 2 * len(stem) < min_len:
                continue
            prev = [0.0] + [NEG_INF] * width
            for tau, k in enumerate(stem, start=1):
                row = lm[k]
                cur = [NEG_INF] * (width + 1)
                for i in range(min(2 * tau, width) + 1):
                    best, op = NEG_INF, OP_NONE
                    if i >= 1:
                        cand = prev[i - 1] + row[xs[s + i - 1]]
                        if cand > best:
                            best, op = cand, OP_SUB
                    cand = prev[i] + row[eps]
                    if cand > best:
                        best, op = cand, OP_DEL
                    if i >= 2:
                        cand = prev[i - 2] + row[xs[s + i - 2]] + log_alpha + row[xs[s + i - 1]]
                        if cand > best:
                            best, op = cand, OP_INS
                    cur[i] = best
                    if keep_backpointers:
                        bp[s, y, tau, i] = op
                prev = cur
            for j in range(min_len, min(2 * len(stem), width) + 1):
                V[s, y, j - min_len] = prev[j]
    return V, (bp if keep_backpointers else None)


def align_backward(x, phones, offsets, bp, dV, min_len, grad_log_map):
    eps = grad_log_map.shape[1] - 1
    g_alpha = 0.0
    n, nstems, nl = dV.shape
    for s, y, j in zip(*np.nonzero(dV)):
        g = dV[s, y, j]
        tau = offsets[y + 1] - offsets[y]
        i = j + min_len
        while tau > 0:
            op = bp[s, y, tau, i]
            k = phones[offsets[y] + tau - 1]
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


def _terms(log_span, log_prior, log_o, min_len, a, i):
    """(log weight, predecessor index, span length or 0 for O) for every tag ending at i."""
    out = [(log_o + a[i - 1], i - 1, 0)]
    for j in range(log_span.shape[1]):
        l = j + min_len
        if l > i:
            break
        out.append((log_prior[1 + j] + log_span[i - l, j] + a[i - l], i - l, l))
    return out


def segment_forward(log_span, log_prior, log_p0, min_len):
    n = log_span.shape[0]
    a = np.empty(n + 1)
    q = np.zeros(n + 1)
    c = np.zeros(n + 1)
    a[0] = 0.0
    log_o = log_prior[0] + log_p0
    for i in range(1, n + 1):
        terms = _terms(log_span, log_prior, log_o, min_len, a, i)
        mx = max(t for t, _, _ in terms)
        if mx == NEG_INF:
            a[i] = NEG_INF
            continue
        tot = rq = rc = 0.0
        for t, prev, l in terms:
            if t == NEG_INF:
                continue
            w = math.exp(t - mx)
            tot += w
            phi = math.exp(log_span[prev, l - min_len] / l) if l else 0.0
            rq += w * (q[prev] + phi)
            rc += w * (c[prev] + l)
        a[i] = mx + math.log(tot)
        q[i] = rq / tot
        c[i] = rc / tot
    return a, q, c


def segment_backward(log_span, log_prior, log_p0, min_len, a, q, c, g_a, g_q, g_c):
    n = log_span.shape[0]
    grad = np.zeros_like(log_span)
    abar = np.zeros(n + 1)
    qbar = np.zeros(n + 1)
    cbar = np.zeros(n + 1)
    abar[n], qbar[n], cbar[n] = g_a, g_q, g_c
    log_o = log_prior[0] + log_p0
    for i in range(n, 0, -1):
        if a[i] == NEG_INF:
            continue
        ab, qb, cb = abar[i], qbar[i], cbar[i]
        if ab == 0.0 and qb == 0.0 and cb == 0.0:
            continue
        for t, prev, l in _terms(log_span, log_prior, log_o, min_len, a, i):
            if t == NEG_INF:
                continue
            pi = math.exp(t - a[i])
            phi = math.exp(log_span[prev, l - min_len] / l) if l else 0.0
            tbar = pi * (ab + qb * (q[prev] + phi - q[i]) + cb * (c[prev] + l - c[i]))
            abar[prev] += tbar
            qbar[prev] += qb * pi
            cbar[prev] += cb * pi
            if l:
                grad[prev, l - min_len] += tbar + qb * pi * phi / l
    return grad
