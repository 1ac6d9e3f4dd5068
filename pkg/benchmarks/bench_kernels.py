"""Time the numba kernels against their numpy twins, then one training step per backend.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from curbsense import _kernels as K

# one training step of the surface CNN (batch 64), run in a fresh interpreter per backend
STEP_CODE = """
import time, numpy as np
from curbsense import models as M
from curbsense.nn import AdamState, adam_step
from curbsense.nn import functional as F
rng = np.random.default_rng(0)
x = rng.normal(size=(64, 3, 450)).astype(np.float32)
y = rng.integers(0, 4, 64)
g = M.build_surface_cnn(seed=0)
params = [p for _, p in g.parameters()]
state = AdamState(lr=1e-4)
def step():
    out = g.forward(x, train=True)
    _, grad = F.softmax_cross_entropy(out, y, np.ones(4))
    g.backward(grad)
    adam_step(params, [d for _, d in g.gradients()], state)
step()
t0 = time.perf_counter()
for _ in range({n}):
    step()
print((time.perf_counter() - t0) / {n})
"""


def cases(rng):
    sig = rng.normal(size=(70_000, 3))
    x = rng.normal(size=(64, 450, 32)).astype(np.float32)
    _, idx = K.maxpool_forward_np(x, 2, 2)
    grad = rng.normal(size=(64, 225, 32)).astype(np.float32)
    cols = rng.normal(size=(64, 454, 5, 32)).astype(np.float32).reshape(64 * 454, 5, 32)
    p = rng.normal(size=1_000_000).astype(np.float32)
    adam = lambda: (p.copy(), rng.normal(size=p.shape).astype(np.float32), np.zeros_like(p), np.zeros_like(p))  # noqa: E731
    return {
        "centered_mean (70k x 3, L=5)": (lambda f: f(sig, 5), K.centered_mean_np, K.centered_mean_nb),
        "onepole (70k)": (lambda f: f(sig[:, 0], 0.3), K.onepole_np, K.onepole_nb),
        "maxpool_forward (64 x 450 x 32)": (lambda f: f(x, 2, 2), K.maxpool_forward_np, K.maxpool_forward_nb),
        "maxpool_backward (64 x 225 x 32)": (lambda f: f(grad, idx, 450), K.maxpool_backward_np, K.maxpool_backward_nb),
        "overlap_add (29k x 5 x 32)": (lambda f: f(cols, 64 * 454 + 4), K.overlap_add_np, K.overlap_add_nb),
        "adam_update (1M params)": (lambda f, a=adam(): f(*a, 1e-3, 0.9, 0.999, 0.5, 1e-8), K.adam_update_np, K.adam_update_nb),
    }


def train_step_seconds(disable_numba: bool, n: int) -> float:
    env = dict(os.environ, CURBSENSE_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", STEP_CODE.format(n=n)], capture_output=True, text=True, env=env, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed calls per kernel (best is reported)")
    ap.add_argument("--steps", type=int, default=5, help="timed training steps per backend")
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return 1

    rows = []
    for name, (call, f_np, f_nb) in cases(np.random.default_rng(0)).items():
        call(f_nb)  # compile
        t_np = min(timeit.repeat(lambda: call(f_np), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: call(f_nb), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb, "speedup": t_np / t_nb})
    step_np = train_step_seconds(True, args.steps)
    step_nb = train_step_seconds(False, args.steps)
    rows.append({"kernel": "CNN train step (batch 64)", "numpy_ms": 1e3 * step_np, "numba_ms": 1e3 * step_nb,
                 "speedup": step_np / step_nb})

    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:36s} {r['numpy_ms']:10.2f} {r['numba_ms']:10.2f} {r['speedup']:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
