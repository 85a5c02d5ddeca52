"""Compare the compiled kernel core against the numpy fallback.

Times the raw kernels and a full local-training episode on each available
backend and prints a small table.  Run from the repository root:

    python3 benchmarks/backend_bench.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from feddesk import backend as backend_mod
from feddesk.backend import available_backends
from feddesk.classifier import build_etf
from feddesk.losses import GlobalSnapshot, LossSpec
from feddesk.model import init_mlp
from feddesk.numerics import RngStream
from feddesk.training import EpisodeOptions, run_episode


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(kern):
    gen = np.random.default_rng(0)
    x = gen.standard_normal((50, 64))
    w = gen.standard_normal((64, 64))
    b = gen.standard_normal(64)
    g = gen.standard_normal((50, 64))
    p = gen.standard_normal(64 * 64)
    gr = gen.standard_normal(64 * 64)
    mo = np.zeros(64 * 64)
    return {
        "affine_nt 50x64x64": lambda: kern.affine_nt(x, w, b),
        "matmul_tn 64x50x64": lambda: kern.matmul_tn(g, x),
        "relu 50x64": lambda: kern.relu(x),
        "sgd_update 4096": lambda: kern.sgd_update(p, gr, mo, 0.1, 0.9, 1e-5),
    }


def episode_case(kern):
    backend_mod._active = kern
    cm = build_etf(32, 10, RngStream(1).child("cls"))
    params = init_mlp((32, 64, 32), cm, RngStream(1).child("net"))
    gen = np.random.default_rng(1)
    X = gen.standard_normal((80, 32))
    y = gen.integers(0, 10, size=80)
    opts = EpisodeOptions(LossSpec("drplus", beta=0.9), epochs=3, batch_size=50, lr=0.1)
    snapshot = GlobalSnapshot(params)
    return lambda: run_episode(params, X, y, opts, snapshot, RngStream(2).child("ep"))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="best-of-N timing")
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    rows = []
    for case_name in list(kernel_cases(next(iter(backends.values())))) + ["local episode"]:
        timings = {}
        for name, kern in backends.items():
            if case_name == "local episode":
                fn = episode_case(kern)
            else:
                fn = kernel_cases(kern)[case_name]
            timings[name] = time_call(fn, args.repeats)
        rows.append((case_name, timings))
    backend_mod._active = backend_mod._select()

    width = max(len(r[0]) for r in rows) + 2
    header = f"{'case':<{width}}" + "".join(f"{n:>14}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for case_name, timings in rows:
        line = f"{case_name:<{width}}"
        for name in backends:
            line += f"{timings[name] * 1e6:>12.1f}us"
        if len(timings) == 2:
            py, comp = timings["python"], timings["compiled"]
            line += f"{py / comp:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
