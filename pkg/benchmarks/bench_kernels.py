"""Compare the numba and pure-numpy kernel backends.

Kernel timings call both implementations in one process. The end-to-end
timing runs a short fit twice in subprocesses, once with
``HBSAE_DISABLE_NUMBA=1``, since the backend is chosen at import time.

    python3 benchmarks/bench_kernels.py [--sizes 1000 10000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hbsae import kernels

FIT_SNIPPET = """
import time
from hbsae.sim import SimConfig, simulated_dataset
from hbsae.model import preset
from hbsae.pipeline import fit_model
from hbsae.sampler import SamplerConfig
ds, _ = simulated_dataset(SimConfig(m=20, total_sample=1000, seed=1))
cfg = SamplerConfig(chains=2, iterations=400, warmup=200, seed=1)
# warm-up run so compilation is not timed
fit_model(ds, preset("M3", parameterization="noncentered"),
          SamplerConfig(chains=2, iterations=30, warmup=15, seed=1, max_divergence_rate=1.0))
t = time.perf_counter()
fit_model(ds, preset("M3", parameterization="noncentered"), cfg)
print(time.perf_counter() - t)
"""


def inputs(n: int, m: int = 50, R: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    rec = (rng.integers(0, 8, n), rng.integers(0, m, n), rng.integers(0, 2, n),
           rng.normal(size=n), rng.normal(size=n))
    y = rng.integers(0, 2, n).astype(np.float64)
    point = (rng.normal(size=8), rng.normal(size=m), rng.normal(size=2), 0.3)
    draws = (rng.normal(size=(R, 8)), rng.normal(size=(R, m)), rng.normal(size=(R, 2)),
             rng.normal(size=R))
    return rec, y, point, draws


def best_of(fn, repeat: int) -> float:
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernels(sizes, repeat):
    rows = []
    for n in sizes:
        rec, y, point, draws = inputs(n)
        pairs = {
            "loglik_grad": (lambda: kernels._loglik_grad_numba(*rec, y, *point),
                            lambda: kernels._loglik_grad_numpy(*rec, y, *point)),
            "loglik_draws": (lambda: kernels._loglik_draws_numba(*rec, y, *draws),
                             lambda: kernels._loglik_draws_numpy(*rec, y, *draws)),
        }
        for name, (fast, slow) in pairs.items():
            fast()  # compile outside the timing
            t_nb, t_np = best_of(fast, repeat), best_of(slow, repeat)
            rows.append((name, n, t_nb, t_np))
    return rows


def bench_fit() -> dict[str, float]:
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, HBSAE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, check=True,
                             capture_output=True, text=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-fit", action="store_true", help="skip the end-to-end fit timing")
    args = ap.parse_args(argv)
    if kernels.numba is None:
        print("numba is not installed; only the numpy backend exists")
        return 1
    print(f"{'kernel':<14}{'n':>8}{'numba (ms)':>14}{'numpy (ms)':>14}{'speedup':>10}")
    for name, n, t_nb, t_np in bench_kernels(args.sizes, args.repeat):
        print(f"{name:<14}{n:>8}{1e3 * t_nb:>14.3f}{1e3 * t_np:>14.3f}{t_np / t_nb:>9.1f}x")
    if not args.no_fit:
        fit = bench_fit()
        print(f"\nfit M3, 20 areas, ~1000 records, 2 x 400 iterations: "
              f"numba {fit['numba']:.1f}s, numpy {fit['numpy']:.1f}s "
              f"({fit['numpy'] / fit['numba']:.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
