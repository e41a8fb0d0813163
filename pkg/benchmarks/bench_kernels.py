"""Compare the compiled stencil kernels with their numpy twins.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings import both implementations directly; ``--end-to-end`` also
times a full 1D front run in subprocesses with ``KPPLAB_BACKEND`` set to each
backend, which is how the flag is meant to be used.
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from kpplab import _kernels_numpy as knp

try:
    from kpplab import _kernels_numba as knb
except ImportError:  # numba missing: only the fallback can be timed
    knb = None


def _cases(rng):
    n = 20_000
    u1 = rng.uniform(size=n)
    z1 = np.zeros(n)
    s = np.zeros(50)
    yield "local_1d", (u1, 50, 1e-4, np.full(n, 100.0), z1, z1, np.ones(n), z1, s, 0, False, False)
    shape = (300, 300)
    u2 = rng.uniform(size=shape)
    z2 = np.zeros(shape)
    c = np.full(shape, 16.0)
    neu = (False, False, False, False)
    yield "local_2d", (u2, 10, 1e-3, c, c, z2, np.ones(shape, bool), z2, z2, z2, z2, np.ones(shape), z2, s[:10], 0,
                       neu)
    yield "heat_2d", (u2, 10, 1e-3, 16.0, 16.0, np.ones(shape), z2, s[:10], 0, neu)
    offs = np.arange(1, 21, dtype=np.int64)
    yield "nonlocal_1d", (u1, 10, 1e-3, offs, np.full(20, 0.05), np.ones(n), np.ones(n), z1, s[:10], 0, False, False)


def _time(fn, args, repeat):
    fn(*args)  # warm-up (and compilation for numba)
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


_E2E = ("from kpplab.fronts import step_problem; from kpplab.local_solver import solve; import time;"
        "p = step_problem(0.02, 120.0); solve(p, 1.0, 1.0); t = time.perf_counter(); solve(p, 30.0, 1.0);"
        "print(time.perf_counter() - t)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, a in _cases(rng):
        t_np = _time(getattr(knp, name), a, args.repeat)
        if knb is None:
            print(f"{name:<12} {1e3 * t_np:11.2f} {'-':>11} {'-':>8}")
            continue
        t_nb = _time(getattr(knb, name), a, args.repeat)
        print(f"{name:<12} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f}")
    if args.end_to_end:
        for backend in ("numpy", "numba"):
            env = dict(os.environ, KPPLAB_BACKEND=backend)
            res = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True, text=True, check=True)
            print(f"1D front run to t=30 at h=0.02, backend={backend}: {float(res.stdout):.2f} s")


if __name__ == "__main__":
    main()
