#!/usr/bin/env python
"""Time every kernel on its numba and numpy path, plus one training step.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeat 50 --json out.json
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from pii_unlearn.numcore import kernels as K


def _time(fn, *args, repeat: int) -> float:
    fn(*args)  # JIT warm-up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def kernel_cases(rng):
    rows, width, vocab = 16 * 96, 128, 259
    x = rng.normal(size=(rows, width)).astype(np.float32)
    logits = rng.normal(size=(rows, vocab)).astype(np.float32)
    targets = rng.integers(0, vocab, size=rows)
    gamma = np.ones(width, np.float32)
    beta = np.zeros(width, np.float32)
    loss, probs = K.np_cross_entropy_fwd(logits, targets)
    _, xhat, rstd = K.np_layernorm_fwd(x, gamma, beta, 1e-5)
    wide = rng.normal(size=(rows, 4 * width)).astype(np.float32)
    a = rng.integers(97, 123, size=48)
    b = rng.integers(97, 123, size=52)
    return {
        "softmax_rows": ((logits,), K.nb_softmax_rows, K.np_softmax_rows),
        "log_softmax_rows": ((logits,), K.nb_log_softmax_rows, K.np_log_softmax_rows),
        "cross_entropy_fwd": ((logits, targets), K.nb_cross_entropy_fwd, K.np_cross_entropy_fwd),
        "cross_entropy_bwd": ((probs, targets, np.ones_like(loss)), K.nb_cross_entropy_bwd, K.np_cross_entropy_bwd),
        "layernorm_fwd": ((x, gamma, beta, 1e-5), K.nb_layernorm_fwd, K.np_layernorm_fwd),
        "layernorm_bwd": ((x, xhat, rstd, gamma), K.nb_layernorm_bwd, K.np_layernorm_bwd),
        "gelu_fwd": ((wide,), K.nb_gelu_fwd, K.np_gelu_fwd),
        "gelu_bwd": ((wide, wide), K.nb_gelu_bwd, K.np_gelu_bwd),
        "levenshtein": ((a, b), K.nb_levenshtein, K.np_levenshtein),
    }


def train_step_time(disable_numba: bool, repeat: int) -> float:
    """One forward+backward of the desk model, in a fresh interpreter."""
    code = (
        "import time, numpy as np\n"
        "from pii_unlearn.model import ModelConfig, init_model, pad_batch, token_losses\n"
        "from pii_unlearn.numcore import Tape, weighted_sum\n"
        "p = init_model(ModelConfig())\n"
        "rng = np.random.default_rng(0)\n"
        "b = pad_batch([rng.integers(0, 256, size=90) for _ in range(16)])\n"
        "def step():\n"
        "    with Tape() as tape:\n"
        "        loss = weighted_sum(token_losses(p, None, b), b.valid.reshape(-1) / b.n_tokens)\n"
        "    tape.backward(loss)\n"
        "step()\n"
        "t = time.perf_counter()\n"
        f"for _ in range({repeat}): step()\n"
        f"print((time.perf_counter() - t) / {repeat})\n"
    )
    env = dict(os.environ)
    env[K.DISABLE_ENV] = "1" if disable_numba else "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None, help="write results to this file")
    args = ap.parse_args(argv)

    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy path exists")
        return 1
    rng = np.random.default_rng(0)
    results = {}
    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  dispatch")
    for name, (args_, nb, npf) in kernel_cases(rng).items():
        t_nb = _time(nb, *args_, repeat=args.repeat) * 1e3
        t_np = _time(npf, *args_, repeat=args.repeat) * 1e3
        chosen = K.DISPATCH_NUMBA.get(name, True)
        results[name] = {"numba_ms": t_nb, "numpy_ms": t_np}
        print(f"{name:<20} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>7.2f}x  {'numba' if chosen else 'numpy'}")

    steps = max(3, args.repeat // 4)
    t_on = train_step_time(False, steps) * 1e3
    t_off = train_step_time(True, steps) * 1e3
    results["train_step"] = {"numba_ms": t_on, "numpy_ms": t_off}
    print(f"{'train_step':<20} {t_on:>10.1f} {t_off:>10.1f} {t_off / t_on:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
