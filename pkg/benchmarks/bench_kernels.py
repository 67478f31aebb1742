"""Throughput of the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--designs 200000] [--repeat 3]

Reports designs per second for validity filtering, featurization and
inference through a 6-130-38-1 network, and checks that both backends return
identical bits.
"""
import argparse
import time

import numpy as np

from nanfopt import kernels
from nanfopt.geometry import SIN45, WALL, default_search_space
from nanfopt.nn import init_model


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--designs", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    spec = default_search_space()
    rng = np.random.default_rng(0)
    n = args.designs
    designs = np.column_stack([
        rng.uniform(20, 31, n), rng.uniform(25.8, 54.3, n),
        rng.choice(spec.alpha.grid(), n), np.zeros(n),
    ])
    designs[:, 3] = rng.choice(spec.nest_fraction.grid(), n) * (1 - designs[:, 2]) * designs[:, 1]
    designs = np.ascontiguousarray(designs)
    consts = spec.rule_constants()
    model = init_model((6, 130, 38, 1), "linear", seed=0)
    w, b = model.weights, model.biases

    backends = kernels.available()
    if "cython" not in backends:
        print("compiled backend not built; showing numpy only")
    results = {}
    print(f"{'kernel':<12}{'backend':<10}{'seconds':>10}{'designs/s':>14}")
    for name, mod in backends.items():
        feats_in = mod.featurize(designs, SIN45, WALL)
        xn = np.ascontiguousarray(model.normalize(feats_in))
        jobs = {
            "validate": lambda: mod.validate_codes(designs, *consts),
            "featurize": lambda: mod.featurize(designs, SIN45, WALL),
            "mlp_logits": lambda: mod.mlp_logits(xn, w, b),
        }
        for kernel, fn in jobs.items():
            secs, out = best_of(fn, args.repeat)
            results[(kernel, name)] = out
            print(f"{kernel:<12}{name:<10}{secs:>10.3f}{n / secs:>14,.0f}")
    if len(backends) == 2:
        for kernel in ("validate", "featurize", "mlp_logits"):
            same = np.array_equal(results[(kernel, "cython")], results[(kernel, "numpy")])
            print(f"{kernel:<12}bit-identical: {same}")


if __name__ == "__main__":
    main()
