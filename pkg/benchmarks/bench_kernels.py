"""Time the numpy and compiled kernel backends on generator-sized tensors.

Usage: ``python benchmarks/bench_kernels.py [--repeat N] [--train-epochs E]``

Prints a per-kernel table (milliseconds per call, best of ``--repeat``) and,
with ``--train-epochs``, the wall time of a short autoencoder training run
under each backend (run in a subprocess because the backend is fixed at
import).
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fusiongen import kernels

# (stride, d_in, d_out, output length) for the layers of the default generator
# on 8 channels x 500 samples, batch 64
SHAPES = [(5, 1, 8, 100), (5, 8, 16, 20), (2, 16, 32, 10), (5, 16, 8, 100), (1, 8, 1, 500)]
B, C = 64, 8

TRAIN_SNIPPET = """
import time
from fusiongen import kernels
from fusiongen.data import SynthConfig, synthesize_dataset
from fusiongen.generator import TrainConfig, train_dae
ds = synthesize_dataset(SynthConfig(n_subjects=1, trials_per_class=32))
t = time.perf_counter()
r = train_dae(ds, TrainConfig(epochs={epochs}))
print(kernels.BACKEND, time.perf_counter() - t, r.history[-1])
"""


def time_kernels(repeat: int) -> list:
    rng = np.random.default_rng(0)
    rows = []
    for r, di, do, J in SHAPES:
        x = rng.standard_normal((B, C, J * r, di))
        K = rng.standard_normal((do, di, 2 * r))
        y = rng.standard_normal((B, C, J, do))
        for name, mod in kernels.available().items():
            calls = {
                "corr_down": lambda: mod.corr_down(x, K, r),
                "scatter_up": lambda: mod.scatter_up(y, K, r, J * r),
                "kernel_grad": lambda: mod.kernel_grad(x, y, r),
            }
            for kname, fn in calls.items():
                best = min(timeit.repeat(fn, number=3, repeat=repeat)) / 3
                rows.append((f"r={r} {di}->{do} J={J}", kname, name, best * 1e3))
    t = rng.standard_normal((200, 32))
    s = rng.standard_normal((200, 32))
    for name, mod in kernels.available().items():
        best = min(timeit.repeat(lambda: mod.cosine_argmax(t, s), number=20, repeat=repeat)) / 20
        rows.append(("N=200 d=32", "cosine_argmax", name, best * 1e3))
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--train-epochs", type=int, default=0)
    a = p.parse_args(argv)
    backends = list(kernels.available())
    print(f"backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    rows = time_kernels(a.repeat)
    print(f"{'shape':<22}{'kernel':<15}" + "".join(f"{b:>12}" for b in backends) + "   (ms/call)")
    cells = {(s, k, b): v for s, k, b, v in rows}
    for s, k in dict.fromkeys((s, k) for s, k, _, _ in rows):
        print(f"{s:<22}{k:<15}" + "".join(f"{cells[(s, k, b)]:>12.3f}" for b in backends))
    if a.train_epochs:
        for b in backends:
            env = dict(os.environ, FUSIONGEN_KERNELS=b)
            out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(epochs=a.train_epochs)],
                                 env=env, capture_output=True, text=True, check=True).stdout.split()
            print(f"train {a.train_epochs} epochs [{out[0]}]: {float(out[1]):.2f} s, final loss {out[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
