"""Compare the numba and pure-numpy backends.

Two views:

* kernel level: every hot kernel timed under both implementations in one
  process (both are always importable);
* solve level: a full STSP4 sweep cell timed in two subprocesses, one with
  ``SPLITSOLVE_NUMBA=1`` and one with ``SPLITSOLVE_NUMBA=0``, since the
  backend is bound at import.

Usage: python benchmarks/bench_kernels.py [--calls 2000] [--steps 200]
"""

import argparse
import os
import subprocess
import sys

from splitsolve import kernels
from splitsolve.bench import time_kernels

_SOLVE_SNIPPET = """
import time
from splitsolve import kernels
from splitsolve.sampler import standard_problem, sample_initial
from splitsolve.splitting import solve
p = standard_problem()
x0 = sample_initial(p.dimension, p.sigma_max, 0)
solve(p.make_field(), p.make_potential(), p.schedule(5), "stsp4", x0)
best = float("inf")
for _ in range(5):
    f = p.make_field()
    t = solve(f, p.make_potential(f), p.schedule({steps}), "stsp4", x0)
    best = min(best, t.wall_time)
print(kernels.BACKEND, best)
"""


def solve_timing(steps: int, flag: str):
    env = dict(os.environ, SPLITSOLVE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", _SOLVE_SNIPPET.format(steps=steps)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    backend, secs = out.stdout.split()
    return backend, float(secs)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--calls", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba not installed; only the numpy path is timed")

    rows = time_kernels(calls=args.calls)
    print(f"{'kernel':<26s}{'backend':<8s}{'us/call':>12s}")
    base = {}
    for r in rows:
        us = r.seconds_per_call * 1e6
        if r.backend == "numpy":
            base[r.kernel] = us
            print(f"{r.kernel:<26s}{r.backend:<8s}{us:12.2f}")
        else:
            print(f"{r.kernel:<26s}{r.backend:<8s}{us:12.2f}   x{base[r.kernel] / us:.1f}")

    print()
    print(f"stsp4 solve, {args.steps} steps (best of 5)")
    times = {}
    for flag in ("0", "1"):
        backend, secs = solve_timing(args.steps, flag)
        times[backend] = secs
        print(f"  {backend:<6s}{secs * 1e3:10.2f} ms")
    if "numba" in times:
        print(f"  speedup x{times['numpy'] / times['numba']:.1f}")


if __name__ == "__main__":
    main()
