"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--points 512 2048] [--reps 20]

Kernel rows call both paths in one process. The ``encode`` and ``train_step``
rows rerun this script in a child with ``SCAT_NUMBA=0`` so the whole stack
(autodiff included) runs on the fallback, then report both timings.
"""
import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from scatseg import _accel, kernels


def timeit(fn, reps):
    fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def kernel_rows(n, reps, k=20, d=64):
    rng = np.random.default_rng(n)
    xyz = rng.uniform(size=(n, 3))
    nbr = kernels.knn_indices(xyz, k, use_numba=False)
    vals = rng.normal(size=(n, d))
    _, src = kernels.neighbor_max(vals, nbr, use_numba=False)
    grad = rng.normal(size=(n, d))
    cases = {
        "knn": lambda flag: kernels.knn_indices(xyz, k, use_numba=flag),
        "neighbor_max": lambda flag: kernels.neighbor_max(vals, nbr, use_numba=flag),
        "scatter_cols": lambda flag: kernels.scatter_cols(grad, src, n, use_numba=flag),
        "index_add_rows": lambda flag: kernels.index_add_rows(grad, nbr[:, 0], n, use_numba=flag),
    }
    rows = []
    for name, fn in cases.items():
        t_np = timeit(lambda: fn(False), reps)
        t_nb = timeit(lambda: fn(True), reps) if _accel.HAVE_NUMBA else float("nan")
        rows.append((name, n, t_np, t_nb))
    return rows


def pipeline_times(n, reps):
    """Seconds for one encoder forward and one full-model training step."""
    from scatseg.encoder import encode
    from scatseg.fewshot import RunConfig, build_episode, build_pool, init_params, meta_train
    from scatseg.scenes import class_split, family_scenes

    cfg = RunConfig(n_points=n, iterations=1, augment=False)
    train_cls, _ = class_split("rooms", "S0")
    pool = build_pool(family_scenes("rooms", 2, 0), train_cls, 1.0, n, 50, 0)
    ep = build_episode(pool, 1, 1, 0)
    params = init_params(cfg, 0)
    enc = lambda: encode(ep.query, params.encoder)  # noqa: E731
    step = lambda: meta_train(pool, params, cfg, "full", 0, train_cls)  # noqa: E731
    return {"encode": timeit(enc, reps), "train_step": timeit(step, max(3, reps // 4))}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, nargs="+", default=[512, 2048])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps({n: pipeline_times(n, args.reps) for n in args.points}))
        return

    print(f"numba available: {_accel.HAVE_NUMBA}")
    print(f"{'kernel':<16}{'N':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>9}")
    for n in args.points:
        for name, size, t_np, t_nb in kernel_rows(n, args.reps):
            print(f"{name:<16}{size:>6}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}")

    cmd = [sys.executable, __file__, "--child", "--reps", str(args.reps), "--points", *map(str, args.points)]
    env_np = dict(os.environ, SCAT_NUMBA="0")
    fallback = json.loads(subprocess.run(cmd, env=env_np, check=True, capture_output=True, text=True).stdout)
    fast = json.loads(subprocess.run(cmd, check=True, capture_output=True, text=True).stdout)
    for n in args.points:
        for name in ("encode", "train_step"):
            t_np, t_nb = fallback[str(n)][name], fast[str(n)][name]
            print(f"{name:<16}{n:>6}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}")


if __name__ == "__main__":
    main()
