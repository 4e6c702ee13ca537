"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from rfpkit import _backend
from rfpkit.driver_sim import DriverConfig, Family, ScenarioSpec, simulate


def cases():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(2000, 3))
    queries = rng.normal(size=(2000, 3))
    driver = DriverConfig()
    specs = [ScenarioSpec(Family.LVD, (rng.uniform(5, 40), rng.uniform(0.1, 0.9), rng.uniform(0.5, 8)))
             for _ in range(50)]
    return {
        "loo_loglik (N=2000, d=3)": lambda k: k.loo_loglik(points, 0.3),
        "kde_logpdf (2000 x 2000, d=3)": lambda k: k.kde_logpdf(points, queries, 0.3),
        "simulate_run (50 LVD runs)": lambda k: [simulate(s, driver, i, kernels=k) for i, s in enumerate(specs)],
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    backends = {"python": _backend.python_kernels}
    if _backend.compiled_kernels is not None:
        backends["cython"] = _backend.compiled_kernels
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name in backends) + "     speedup")
    for label, fn in cases().items():
        times = {name: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
                 for name, k in backends.items()}
        row = f"{label:32s}" + "".join(f"{t:11.4f}s" for t in times.values())
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
