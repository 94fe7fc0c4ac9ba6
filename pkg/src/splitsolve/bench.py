"""Wall-time microbenchmarks: per-step solver cost and numba vs numpy kernels.

Everything here runs serially in the calling thread.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .splitting import parse_scheme, solve

__all__ = ["StepTiming", "KernelTiming", "time_schemes", "time_kernels", "BENCH_CSV_COLUMNS", "KERNEL_CSV_COLUMNS"]

BENCH_CSV_COLUMNS = ("scheme", "steps", "repeats", "seconds_per_step", "field_nfe", "potential_nfe")
KERNEL_CSV_COLUMNS = ("kernel", "backend", "calls", "seconds_per_call")


@dataclass(frozen=True)
class StepTiming:
    scheme: str
    steps: int
    repeats: int
    seconds_per_step: float
    field_nfe: int
    potential_nfe: int


@dataclass(frozen=True)
class KernelTiming:
    kernel: str
    backend: str
    calls: int
    seconds_per_call: float


def time_schemes(problem, schemes: Sequence, steps: int, repeats: int = 3, seed: int = 0) -> list[StepTiming]:
    """Best-of-``repeats`` wall time per step for each scheme on ``problem``."""
    from .sampler import sample_initial

    x0 = sample_initial(problem.dimension, problem.sigma_max, seed)
    sched = problem.schedule(steps)
    out = []
    for sch in schemes:
        sch = parse_scheme(sch)
        best = np.inf
        traj = None
        for _ in range(max(1, repeats)):
            fld = problem.make_field()
            traj = solve(fld, problem.make_potential(fld), sched, sch, x0)
            best = min(best, traj.wall_time)
        out.append(StepTiming(sch.display, steps, repeats, best / steps, traj.field_nfe, traj.potential_nfe))
    return out


def _kernel_args(dimension: int, components: int, seed: int):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((components, dimension))
    variances = rng.uniform(0.1, 1.0, components)
    log_weights = np.log(np.full(components, 1.0 / components))
    x = rng.standard_normal(dimension)
    mask = np.zeros(components, dtype=np.bool_)
    mask[::2] = True
    return x, means, variances, log_weights, mask


def _best_per_call(fn, calls: int, repeats: int = 3) -> float:
    fn()  # warm-up (and JIT compile)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(calls):
            fn()
        best = min(best, time.perf_counter() - t0)
    return best / calls


def time_kernels(dimension: int = 8, components: int = 4, calls: int = 2000, seed: int = 0) -> list[KernelTiming]:
    """Time each hot kernel under both backends (numba rows only when available)."""
    x, means, var, lw, mask = _kernel_args(dimension, components, seed)
    sigma = 0.7
    cases = {
        "mixture_eps": lambda f: (lambda: f(x, means, var, lw, sigma)),
        "class_logpost_grad": lambda f: (lambda: f(x, means, var, lw, sigma, mask)),
        "posterior_mean_jacobian": lambda f: (lambda: f(x, means, var, lw, sigma)),
        "linear_recurrence": lambda f: (lambda: f(0.5, 0.1, 1.0, 1.0, 10_000)),
    }
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    out = []
    for name, make in cases.items():
        for backend in backends:
            fn = getattr(kernels, f"{name}_{backend}")
            n = max(1, calls // 50) if name == "linear_recurrence" else calls
            out.append(KernelTiming(name, backend, n, _best_per_call(make(fn), n)))
    return out
