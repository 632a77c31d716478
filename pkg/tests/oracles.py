"""Brute-force reference implementations, independent of the package DP code.

Everything here enumerates explicitly and uses plain ``math`` on Python
floats.  ``python tests/oracles.py`` regenerates the frozen fixture in
``tests/data/oracle_cases.json``.
"""

import itertools
import json
import math
import os
import random

NEG_INF = float("-inf")
SUB, DEL, INS = "substitute", "delete", "insert"
WIDTH = {SUB: 1, DEL: 0, INS: 2}

FIXTURE = os.path.join(os.path.dirname(__file__), "data", "oracle_cases.json")


def op_sequences(nx, ny):
    """Every assignment of an op to each stem position consuming exactly ``nx`` chars."""
    for ops in itertools.product((SUB, DEL, INS), repeat=ny):
        if sum(WIDTH[o] for o in ops) == nx:
            yield ops


def score_ops(ops, x, y, log_m, log_a, eps_col):
    s, i = 0.0, 0
    for tau, op in enumerate(ops):
        k = y[tau]
        if op == SUB:
            s += log_m[k][x[i]]
        elif op == DEL:
            s += log_m[k][eps_col]
        else:
            s += log_m[k][x[i]] + log_a + log_m[k][x[i + 1]]
        i += WIDTH[op]
    return s


def brute_align(x, y, log_m, log_a):
    """``(best log-prob, best op tuple)``; ``(-inf, None)`` when nothing is valid."""
    best, ties = brute_align_all(x, y, log_m, log_a)
    return best, (ties[0] if ties else None)


def brute_align_all(x, y, log_m, log_a, tol=1e-12):
    """Best log-prob and every op tuple within ``tol`` of it."""
    eps_col = len(log_m[0]) - 1
    scored = [(score_ops(ops, x, y, log_m, log_a, eps_col), ops)
              for ops in op_sequences(len(x), len(y))]
    best = max((s for s, _ in scored), default=NEG_INF)
    if best == NEG_INF:
        return best, []
    return best, [ops for s, ops in scored if s >= best - tol]


def tag_sequences(n, m, M):
    """Tag sequences as lists of ``0`` (O) or span lengths, covering ``n`` chars."""
    if n == 0:
        yield []
        return
    for first in [0] + list(range(m, M + 1)):
        w = max(first, 1)
        if w <= n:
            for rest in tag_sequences(n - w, m, M):
                yield [first] + rest


def brute_segmentation(x, stems, log_m, log_a, log_prior, log_p0, m, M):
    """Marginal log-likelihood, expected quality, expected coverage and Viterbi decode.

    ``log_prior[0]`` is Pr(O), ``log_prior[1 + l - m]`` is Pr(E_l).
    """
    n = len(x)
    span_cache = {}

    def span(i, l):
        key = (i, l)
        if key not in span_cache:
            seg = x[i:i + l]
            scores = [brute_align(seg, y, log_m, log_a)[0] for y in stems]
            mean = sum(math.exp(s) for s in scores) / len(stems) if stems else 0.0
            best = max(scores) - math.log(len(stems)) if stems else NEG_INF
            span_cache[key] = (mean, best)
        return span_cache[key]

    total = 0.0
    q_num = 0.0
    c_num = 0.0
    vit = []
    for tags in tag_sequences(n, m, M):
        logp = 0.0
        vlog = 0.0
        phi = psi = 0.0
        i = 0
        for t in tags:
            if t == 0:
                logp += log_prior[0] + log_p0
                vlog += log_prior[0] + log_p0
                i += 1
            else:
                mean, best = span(i, t)
                lp = math.log(mean) if mean > 0 else NEG_INF
                logp += log_prior[1 + t - m] + lp
                vlog += log_prior[1 + t - m] + best
                if mean > 0:
                    phi += mean ** (1.0 / t)
                psi += t
                i += t
        p = math.exp(logp) if logp > NEG_INF else 0.0
        total += p
        q_num += p * phi
        c_num += p * psi
        vit.append((vlog, tags))
    vit_best = max(v for v, _ in vit)
    # ties: longest tag at the earliest position, O ranked below any span
    vit_tags = max((t for v, t in vit if v >= vit_best - 1e-12), key=lambda t: [w or 0.5 for w in t])
    return {
        "log_likelihood": math.log(total) if total > 0 else NEG_INF,
        "quality": q_num / total if total > 0 else 0.0,
        "coverage": c_num / total if total > 0 else 0.0,
        "viterbi_score": vit_best,
        "viterbi_tags": vit_tags,
    }


def central_differences(f, x, eps=1e-4):
    """Numerical gradient of ``f`` at the list ``x``."""
    out = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += eps
        xm[i] -= eps
        out.append((f(xp) - f(xm)) / (2 * eps))
    return out


def random_log_matrix(rng, n_known, n_cols):
    rows = []
    for _ in range(n_known):
        w = [rng.random() + 0.05 for _ in range(n_cols)]
        s = sum(w)
        rows.append([math.log(v / s) for v in w])
    return rows


def _alignment_cases(rng, n):
    cases = []
    for _ in range(n):
        log_m = random_log_matrix(rng, 3, 4)
        log_a = math.log(rng.uniform(0.01, 1.0))
        x = [rng.randrange(3) for _ in range(rng.randint(1, 4))]
        y = [rng.randrange(3) for _ in range(rng.randint(1, 4))]
        score, ties = brute_align_all(x, y, log_m, log_a)
        cases.append({"x": x, "y": y, "log_map": log_m, "log_alpha": log_a,
                      "score": score if score > NEG_INF else None,
                      "best_ops": [list(t) for t in ties]})
    return cases


def _segmentation_cases(rng, n):
    cases = []
    for _ in range(n):
        log_m = random_log_matrix(rng, 3, 4)
        log_a = math.log(rng.uniform(0.01, 1.0))
        x = [rng.randrange(3) for _ in range(rng.randint(1, 6))]
        stems = [[rng.randrange(3) for _ in range(rng.randint(1, 3))]
                 for _ in range(rng.randint(1, 3))]
        w = [rng.random() + 0.1 for _ in range(4)]
        log_prior = [math.log(v / sum(w)) for v in w]
        log_p0 = math.log(1 / 3)
        res = brute_segmentation(x, stems, log_m, log_a, log_prior, log_p0, 1, 3)
        cases.append({"x": x, "stems": stems, "log_map": log_m, "log_alpha": log_a,
                      "log_prior": log_prior, "log_p0": log_p0, "min_len": 1, "max_len": 3,
                      **res})
    return cases


def freeze(path=FIXTURE, seed=20240601):
    rng = random.Random(seed)
    data = {
        "seed": seed,
        "alignment": _alignment_cases(rng, 40),
        "segmentation": _segmentation_cases(rng, 20),
    }
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")
    return data


if __name__ == "__main__":
    freeze()
    print(f"wrote {FIXTURE}")
