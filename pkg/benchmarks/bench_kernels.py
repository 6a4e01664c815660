"""Time the numba and numpy paths of every kernel on SyntheticWorld-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from latentanon import kernels
from latentanon.backends import SyntheticWorld


def inputs():
    w = SyntheticWorld()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, w.shape.n_layers * w.shape.n_channels))
    img = kernels._pixel_mix_forward_np(x, w.coord_groups, w.mixing, w.pixel_locs, w._n_loc)
    n_ids = 500
    gallery = rng.standard_normal((2000, 128))
    labels = rng.integers(0, n_ids, 2000).astype(np.int64)
    dist = rng.random((500, n_ids))
    return {
        "pixel_mix_forward": (x, w.coord_groups, w.mixing, w.pixel_locs, w._n_loc),
        "pixel_mix_inverse": (img, w.coord_groups, w.unmixing, w.pixel_locs, w._n_coords),
        "pair_counts": (rng.random(200_000), rng.random(200_000)),
        "min_distance_per_identity": (rng.standard_normal((500, 128)), gallery, labels, n_ids),
        "tie_ranks": (np.round(dist, 2), rng.integers(0, n_ids, 500).astype(np.int64)),
    }


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write the timings here")
    args = p.parse_args(argv)
    data = inputs()
    rows = {}
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, jit_fn) in kernels.KERNELS.items():
        a = data[name]
        r_np, r_jit = np_fn(*a), jit_fn(*a)  # also compiles the jit path
        assert np.allclose(np.asarray(r_np, dtype=float), np.asarray(r_jit, dtype=float), atol=1e-9), name
        t_np, t_jit = best_time(np_fn, a, args.repeat), best_time(jit_fn, a, args.repeat)
        rows[name] = {"numpy_s": t_np, "numba_s": t_jit, "speedup": t_np / t_jit}
        print(f"{name:28s} {t_np * 1e3:10.2f} {t_jit * 1e3:10.2f} {t_np / t_jit:8.2f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
