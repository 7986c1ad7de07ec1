"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--records 200000] [--repeat 5]

Times each record kernel on random inputs, then a full MFRM fit of the
default simulated dataset under each backend (the backend is chosen at
import, so the fit runs in a subprocess with ``RATERIRT_PURE`` set).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from raterirt import _pykernels
from raterirt.model import cumulative_thresholds

try:
    from raterirt import _ckernels
except ImportError:
    _ckernels = None

FIT_SNIPPET = """
import time
from raterirt import _kernels
from raterirt.fitting import fit_mfrm
from raterirt.simulate import SimConfig, generate
ds, _ = generate(SimConfig(seed=0))
t = time.perf_counter()
fit = fit_mfrm(ds)
print(_kernels.BACKEND, time.perf_counter() - t, fit.sweeps_used)
"""


def inputs(n, k=7, groups=15, seed=0):
    rng = np.random.default_rng(seed)
    eta = rng.normal(0, 1.5, n)
    grp = rng.integers(0, groups, n).astype(np.int64)
    cum = cumulative_thresholds(rng.normal(0, 1, (groups, k - 1)))
    y = np.ascontiguousarray(np.eye(k)[rng.integers(0, k, n)])
    return eta, grp, cum, y, groups


def bench_kernels(n, repeat):
    eta, grp, cum, y, g = inputs(n)
    calls = {
        "record_probs": lambda m: m.record_probs(eta, grp, cum),
        "record_terms": lambda m: m.record_terms(eta, grp, cum, y),
        "record_loglik": lambda m: m.record_loglik(eta, grp, cum, y),
        "tau_terms": lambda m: m.tau_terms(eta, grp, cum, y, g),
    }
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b, _ in backends) + f"{'speedup':>10}")
    for name, fn in calls.items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=repeat)) for _, m in backends]
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{name:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed)


def bench_fit():
    for pure in ("1", "0"):
        env = dict(os.environ, RATERIRT_PURE=pure)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"full fit, {out[0]:<7} backend: {float(out[1]):.2f}s ({out[2]} sweeps)")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--records", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--no-fit", action="store_true")
    args = p.parse_args()
    bench_kernels(args.records, args.repeat)
    if not args.no_fit:
        bench_fit()


if __name__ == "__main__":
    main()
