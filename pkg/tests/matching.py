"""Brute-force cosine matching oracle and random instances with planted exact ties."""
import math

import numpy as np


def brute_argmax(target, sources):
    """Loop over sources, scoring <t, s> / (|t| |s|); strict ``>`` keeps the lowest index on ties.

    Zero-norm sources score minus infinity; a zero-norm target (or no
    usable source) returns ``-1``.
    """
    tn = math.sqrt(sum(float(v) * float(v) for v in target))
    if tn == 0.0:
        return -1
    best, best_s = -1, -math.inf
    for p, s in enumerate(sources):
        sn = math.sqrt(sum(float(v) * float(v) for v in s))
        if sn == 0.0:
            continue
        score = sum(float(a) * float(b) for a, b in zip(target, s)) / (tn * sn)
        if score > best_s:
            best, best_s = p, score
    return best


def random_instance(rng, max_n=200, max_d=16):
    """Bottleneck pair ``(F_t, F_m)`` of shape ``(d, C, T')`` with N = C*T' <= max_n.

    Some source vectors are exact power-of-two multiples of earlier ones and
    some are zero, so ties and degenerate vectors occur on purpose.
    """
    d = int(rng.integers(1, max_d + 1))
    C = int(rng.integers(1, 9))
    Tb = int(rng.integers(1, max_n // C + 1))
    N = C * Tb
    vt = rng.standard_normal((N, d))
    vm = rng.standard_normal((N, d))
    n_dup = int(rng.integers(0, N // 2 + 1))
    for _ in range(n_dup):
        a, b = rng.integers(0, N, size=2)
        vm[b] = vm[a] * 2.0 ** int(rng.integers(-3, 4))
    if rng.random() < 0.5:
        vm[rng.integers(0, N, size=int(rng.integers(1, 4)))] = 0.0
    if rng.random() < 0.3:
        vt[rng.integers(0, N)] = 0.0
    if rng.random() < 0.3:
        vt[rng.integers(0, N)] = vm[rng.integers(0, N)]
    to_map = lambda v: v.T.reshape(d, C, Tb).copy()
    return to_map(vt), to_map(vm)
