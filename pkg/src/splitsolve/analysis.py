"""Convergence-order estimation and toy-problem error studies."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fields import (
    TOY_EPS_MATRIX,
    TOY_GUIDE_MATRIX,
    TOY_X0,
    LinearField,
    LinearGradient,
    MixtureField,
    GaussianMixture,
    QuadraticPotential,
    ZeroPotential,
    toy_exact_solution,
)
from .splitting import parse_scheme, solve

__all__ = [
    "ToyProblem",
    "GaussianFlowProblem",
    "OrderEstimate",
    "estimate_order",
    "ToyCell",
    "toy_error_study",
    "TOY_CSV_COLUMNS",
    "write_toy_csv",
    "read_toy_csv",
    "ORDER_CSV_COLUMNS",
    "write_order_csv",
]

ROUNDOFF_FLOOR = 1e-12


@dataclass(frozen=True)
class ToyProblem:
    """The stiff 2-D linear toy ODE integrated forward in plain time.

    ``time_scale`` rescales time: the matrices are multiplied by it and the
    interval divided by it, so the exact endpoint is unchanged.
    """

    s: float
    t_end: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s!r}")
        if not self.t_end > 0 or not self.time_scale > 0:
            raise ValueError("t_end and time_scale must be positive")

    def field(self):
        return LinearField(self.time_scale * TOY_EPS_MATRIX)

    def potential(self):
        return LinearGradient(-self.time_scale * self.s * TOY_GUIDE_MATRIX)

    def grid(self, steps: int) -> np.ndarray:
        return np.linspace(0.0, self.t_end / self.time_scale, steps + 1)

    @property
    def x0(self) -> np.ndarray:
        return TOY_X0.copy()

    def exact(self, t) -> np.ndarray:
        """Exact state at grid time ``t`` (in the rescaled clock)."""
        return toy_exact_solution(np.asarray(t) * self.time_scale, self.s)

    def exact_endpoint(self) -> np.ndarray:
        return toy_exact_solution(self.t_end, self.s)

    def label(self) -> str:
        return f"toy(s={self.s:g})"


@dataclass(frozen=True)
class GaussianFlowProblem:
    """A single isotropic Gaussian ``N(0, v I)`` with optional isotropic quadratic guidance.

    With guidance ``f = k |x|^2 / 2`` the flow stays radial and
    ``x(sigma) = x0 sqrt((v + sigma^2) / (v + sigma0^2)) exp(k (sigma0 - sigma))``.
    The grid is uniform in sigma.
    """

    variance: float = 1.0
    sigma_start: float = 2.0
    sigma_end: float = 0.1
    guidance: float = 0.0
    start: tuple = (1.0, -0.5)

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if not self.sigma_start > self.sigma_end > 0:
            raise ValueError("need sigma_start > sigma_end > 0")

    @property
    def dimension(self) -> int:
        return len(self.start)

    def field(self):
        d = self.dimension
        mix = GaussianMixture(np.ones(1), np.zeros((1, d)), np.array([self.variance]), np.zeros(1, dtype=int))
        return MixtureField(mix)

    def potential(self):
        d = self.dimension
        if self.guidance == 0:
            return ZeroPotential(d)
        return QuadraticPotential(self.guidance * np.eye(d), np.zeros(d))

    def grid(self, steps: int) -> np.ndarray:
        return np.linspace(self.sigma_start, self.sigma_end, steps + 1)

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.start, dtype=float)

    def exact(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        v, s0 = self.variance, self.sigma_start
        scale = np.sqrt((v + sigma**2) / (v + s0**2)) * np.exp(self.guidance * (s0 - sigma))
        return scale[..., None] * self.x0

    def exact_endpoint(self) -> np.ndarray:
        return self.exact(self.sigma_end)

    def label(self) -> str:
        return f"gaussian(v={self.variance:g},k={self.guidance:g})"


@dataclass(frozen=True)
class OrderEstimate:
    label: str
    step_counts: tuple
    errors: tuple
    slope: float
    residual: float

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def estimate_order(scheme, problem, step_counts: Sequence[int]) -> OrderEstimate:
    """Fit ``log(error) ~ p log(1/N)`` over ``step_counts`` and return ``p``.

    Errors are Euclidean endpoint distances to ``problem.exact_endpoint()``.
    Cells below 1e-12 are roundoff and get dropped from the fit.
    """
    scheme = parse_scheme(scheme)
    counts = [int(n) for n in step_counts]
    if len(counts) < 4:
        raise ValueError(f"step_counts: need at least 4 values, got {len(counts)}")
    if any(n < 1 for n in counts) or counts != sorted(set(counts)):
        raise ValueError("step_counts: must be positive, distinct and ascending")
    if counts[-1] < 10 * counts[0]:
        warnings.warn(
            f"step counts span {counts[-1] / counts[0]:g}x, less than a decade",
            RuntimeWarning,
            stacklevel=2,
        )
    target = problem.exact_endpoint()
    errors = []
    for n in counts:
        traj = solve(problem.field(), problem.potential(), problem.grid(n), scheme, problem.x0)
        if traj.diverged:
            raise ArithmeticError(
                f"{scheme.display} diverged at step {traj.diverged_at} with N={n}; order estimate invalid"
            )
        errors.append(float(np.linalg.norm(traj.endpoint - target)))
    keep = [(n, e) for n, e in zip(counts, errors) if e >= ROUNDOFF_FLOOR]
    if len(keep) < 2:
        raise ArithmeticError(f"{scheme.display}: fewer than two cells above roundoff, no slope")
    lx = np.log([1.0 / n for n, _ in keep])
    ly = np.log([e for _, e in keep])
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    resid = math.sqrt(float(res[0]) / len(keep)) if len(res) else 0.0
    return OrderEstimate(scheme.display, tuple(counts), tuple(errors), float(coef[0]), resid)


ORDER_CSV_COLUMNS = ("scheme", "steps", "error", "slope", "residual")


def write_order_csv(path, estimates: Sequence[OrderEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORDER_CSV_COLUMNS)
        for est in estimates:
            for n, e in zip(est.step_counts, est.errors):
                w.writerow([est.label, n, repr(e), repr(est.slope), repr(est.residual)])


# ----------------------------------------------------------------------------
# toy error study


@dataclass
class ToyCell:
    scheme: str
    s: float
    steps: int
    endpoint_error: float
    diverged_at: int | None
    times: np.ndarray
    states: np.ndarray

    def to_json(self) -> dict:
        exact = toy_exact_solution(self.times, self.s)
        return {
            "scheme": self.scheme,
            "s": self.s,
            "steps": self.steps,
            "endpoint_error": self.endpoint_error,
            "diverged_at": self.diverged_at,
            "t": self.times.tolist(),
            "states": self.states.tolist(),
            "exact": exact.tolist(),
        }


TOY_CSV_COLUMNS = ("scheme", "s", "steps", "endpoint_error", "diverged_at")


def toy_error_study(schemes, s_values, step_counts, dump_dir=None) -> list[ToyCell]:
    """Endpoint error at ``t = 1`` for every (scheme, s, N) on the toy problem.

    A diverged cell gets ``endpoint_error = inf``. With ``dump_dir`` set,
    each trajectory and its exact counterpart is written as JSON there.
    """
    if not schemes or not s_values or not step_counts:
        raise ValueError("schemes, s_values and step_counts must all be nonempty")
    parsed = [parse_scheme(s) for s in schemes]
    out = []
    for sch in parsed:
        for s in s_values:
            prob = ToyProblem(float(s))
            target = prob.exact_endpoint()
            for n in step_counts:
                grid = prob.grid(int(n))
                traj = solve(prob.field(), prob.potential(), grid, sch, prob.x0)
                err = math.inf if traj.diverged else float(np.linalg.norm(traj.endpoint - target))
                out.append(
                    ToyCell(sch.display, float(s), int(n), err, traj.diverged_at, grid[: len(traj.states)], traj.states)
                )
    if dump_dir is not None:
        d = Path(dump_dir)
        d.mkdir(parents=True, exist_ok=True)
        for cell in out:
            tag = cell.scheme.replace(":", "_").replace(",", "-")
            with open(d / f"toy_{tag}_s{cell.s:g}_N{cell.steps}.json", "w") as fh:
                json.dump(cell.to_json(), fh)
    return out


def write_toy_csv(path, cells: Sequence[ToyCell]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TOY_CSV_COLUMNS)
        for c in cells:
            w.writerow([c.scheme, repr(c.s), c.steps, repr(c.endpoint_error), "" if c.diverged_at is None else c.diverged_at])


def read_toy_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != TOY_CSV_COLUMNS:
            raise ValueError(f"unexpected toy CSV header {header}")
        rows = []
        for rec in r:
            rows.append(
                {
                    "scheme": rec[0],
                    "s": float(rec[1]),
                    "steps": int(rec[2]),
                    "endpoint_error": float(rec[3]),
                    "diverged_at": int(rec[4]) if rec[4] else None,
                }
            )
    return rows
