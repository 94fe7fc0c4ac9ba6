"""Guided-sampling experiment driver.

Protocol: draw seeded initial noise ``xbar_0 ~ N(0, sigma_max^2 I)``, solve
the guided ODE with a 1000-step Euler (DDIM) run as the reference, then
solve again with each candidate scheme and step count from the same noise
and report the RMS distance between endpoints, evaluation counts and wall
time.
"""

from __future__ import annotations

import csv
import json
import math
import os
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import (
    ClassPotential,
    GaussianMixture,
    GuidancePotential,
    LinearObservation,
    MixtureField,
    ObservationPotential,
    ZeroPotential,
)
from .schedule import make_log_linear_schedule
from .splitting import SplitScheme, Trajectory, parse_scheme, solve

__all__ = [
    "Problem",
    "standard_problem",
    "load_problem",
    "sample_initial",
    "reference_solve",
    "endpoint_error",
    "SolveReport",
    "sweep",
    "aggregate",
    "CSV_COLUMNS",
    "write_reports_csv",
    "read_reports_csv",
]

REFERENCE_STEPS = 1000
CSV_COLUMNS = (
    "scheme",
    "steps",
    "seed",
    "endpoint_error",
    "field_nfe",
    "potential_nfe",
    "wall_time_s",
    "diverged_at",
)


@dataclass(frozen=True, eq=False)
class Problem:
    """A guided-sampling testbed: mixture prior plus one conditional function.

    With ``observation`` set, guidance is the linear-observation penalty;
    otherwise it is classifier guidance towards ``target_class`` scaled by
    ``guidance_scale`` (``0`` disables guidance).
    """

    mixture: GaussianMixture
    target_class: int = 0
    guidance_scale: float = 1.0
    sigma_max: float = 80.0
    sigma_min: float = 0.004
    field_cost: float = 0.0
    potential_cost: float = 0.0
    observation: LinearObservation | None = None

    def __post_init__(self):
        if not self.sigma_max > self.sigma_min > 0:
            raise ValueError("need sigma_max > sigma_min > 0")
        if self.observation is None and self.guidance_scale != 0:
            self.mixture.class_mask(self.target_class)

    @property
    def dimension(self) -> int:
        return self.mixture.dimension

    def make_field(self) -> MixtureField:
        return MixtureField(self.mixture, cost=self.field_cost)

    def make_potential(self, field: MixtureField | None = None) -> GuidancePotential:
        if self.observation is not None:
            return ObservationPotential(self.observation, field or self.make_field(), cost=self.potential_cost)
        if self.guidance_scale == 0:
            return ZeroPotential(self.dimension, cost=self.potential_cost)
        return ClassPotential(self.mixture, self.target_class, self.guidance_scale, cost=self.potential_cost)

    def schedule(self, steps: int):
        return make_log_linear_schedule(self.sigma_max, self.sigma_min, steps)

    def fingerprint(self) -> str:
        obs = self.observation
        parts = [
            self.mixture.fingerprint(),
            repr((self.target_class, self.guidance_scale, self.sigma_max, self.sigma_min)),
        ]
        if obs is not None:
            parts.append(repr((obs.operator.tobytes(), obs.y0.tobytes(), obs.gamma, obs.eta_mode)))
        return "|".join(parts)


def standard_problem(**overrides) -> Problem:
    """d=8, four unit-spaced components (v=0.25) in two interleaved classes.

    Means sit at -1.5, -0.5, 0.5, 1.5 along the first axis with labels
    0, 1, 0, 1; guidance targets class 0 with scale 1. The noise range
    80 -> 0.004 spans ln(sigma_max/sigma_min) = 9.9.
    """
    d = 8
    means = np.zeros((4, d))
    means[:, 0] = [-1.5, -0.5, 0.5, 1.5]
    mix = GaussianMixture(np.full(4, 0.25), means, np.full(4, 0.25), np.array([0, 1, 0, 1]))
    return Problem(mix, **overrides)


def _observation_from_dict(spec: dict, dim: int) -> LinearObservation:
    kind = spec.get("operator_kind")
    y0 = spec.get("y0")
    gamma = float(spec.get("gamma", 1.0))
    eta = spec.get("eta_mode", "deterministic")
    if y0 is None:
        raise ValueError("observation: missing field 'y0'")
    if kind == "mask":
        if "indices" not in spec:
            raise ValueError("observation: mask needs field 'indices'")
        return LinearObservation.inpainting(spec["indices"], dim, y0, gamma, eta_mode=eta)
    if kind == "downsample":
        if "factor" not in spec:
            raise ValueError("observation: downsample needs field 'factor'")
        return LinearObservation.super_resolution(dim, int(spec["factor"]), y0, gamma, eta_mode=eta)
    if kind == "color":
        if dim % 3:
            raise ValueError("observation: color needs a dimension divisible by 3")
        return LinearObservation.colorization(y0, gamma, pixels=dim // 3, eta_mode=eta)
    raise ValueError(f"observation: field 'operator_kind' must be mask, color or downsample, got {kind!r}")


def problem_from_dict(data: dict) -> Problem:
    for key in ("weights", "means", "variances", "labels"):
        if key not in data:
            raise ValueError(f"problem file: missing field {key!r}")
    try:
        mix = GaussianMixture(
            np.asarray(data["weights"], dtype=float),
            np.asarray(data["means"], dtype=float),
            np.asarray(data["variances"], dtype=float),
            np.asarray(data["labels"], dtype=int),
        )
    except ValueError as exc:
        raise ValueError(f"problem file: {exc}") from None
    obs_spec = data.get("observation")
    if obs_spec is None and "operator_kind" in data:
        obs_spec = data
    obs = _observation_from_dict(obs_spec, mix.dimension) if obs_spec else None
    kw = {k: float(data[k]) for k in ("sigma_max", "sigma_min", "field_cost", "potential_cost") if k in data}
    return Problem(
        mix,
        target_class=int(data.get("class", 0)),
        guidance_scale=float(data.get("guidance_scale", 1.0)),
        observation=obs,
        **kw,
    )


def problem_to_dict(problem: Problem) -> dict:
    mix = problem.mixture
    return {
        "weights": mix.weights.tolist(),
        "means": mix.means.tolist(),
        "variances": mix.variances.tolist(),
        "labels": mix.labels.tolist(),
        "class": problem.target_class,
        "guidance_scale": problem.guidance_scale,
        "sigma_max": problem.sigma_max,
        "sigma_min": problem.sigma_min,
    }


def load_problem(path) -> Problem:
    with open(path) as fh:
        data = json.load(fh)
    return problem_from_dict(data)


# ----------------------------------------------------------------------------
# protocol pieces


def sample_initial(dimension: int, sigma_max: float, seed: int) -> np.ndarray:
    if dimension < 1:
        raise ValueError("dimension must be at least 1")
    if not sigma_max > 0:
        raise ValueError(f"sigma_max must be positive, got {sigma_max!r}")
    return sigma_max * np.random.default_rng(seed).standard_normal(dimension)


def reference_solve(field, potential, sigma_max, sigma_min, x0, steps: int = REFERENCE_STEPS) -> Trajectory:
    """Non-split Euler (DDIM) on the log-linear grid, ``steps`` steps."""
    return solve(field, potential, make_log_linear_schedule(sigma_max, sigma_min, steps), "none:euler", x0)


_REFERENCE_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def cached_reference(problem: Problem, seed: int, steps: int = REFERENCE_STEPS) -> Trajectory:
    key = (problem.fingerprint(), int(seed), int(steps))
    with _CACHE_LOCK:
        hit = _REFERENCE_CACHE.get(key)
    if hit is not None:
        return hit
    fld = problem.make_field()
    x0 = sample_initial(problem.dimension, problem.sigma_max, seed)
    traj = reference_solve(fld, problem.make_potential(fld), problem.sigma_max, problem.sigma_min, x0, steps)
    with _CACHE_LOCK:
        _REFERENCE_CACHE[key] = traj
    return traj


def endpoint_error(traj: Trajectory, reference: Trajectory) -> float:
    """Root-mean-square distance between final states; ``inf`` if either diverged."""
    if traj.diverged or reference.diverged:
        return math.inf
    a, b = traj.endpoint, reference.endpoint
    if a.shape != b.shape:
        raise ValueError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class SolveReport:
    scheme: str
    steps: int
    seed: int
    endpoint_error: float
    field_nfe: int
    potential_nfe: int
    wall_time_s: float
    diverged_at: int | None = None

    def key(self):
        return (self.scheme, self.steps, self.seed)

    def as_row(self) -> dict:
        return {
            "scheme": self.scheme,
            "steps": self.steps,
            "seed": self.seed,
            "endpoint_error": repr(float(self.endpoint_error)),
            "field_nfe": self.field_nfe,
            "potential_nfe": self.potential_nfe,
            "wall_time_s": repr(float(self.wall_time_s)),
            "diverged_at": "" if self.diverged_at is None else self.diverged_at,
        }

    @classmethod
    def from_row(cls, row: dict) -> "SolveReport":
        div = row["diverged_at"]
        return cls(
            scheme=row["scheme"],
            steps=int(row["steps"]),
            seed=int(row["seed"]),
            endpoint_error=float(row["endpoint_error"]),
            field_nfe=int(row["field_nfe"]),
            potential_nfe=int(row["potential_nfe"]),
            wall_time_s=float(row["wall_time_s"]),
            diverged_at=None if div in ("", None) else int(div),
        )


def run_cell(problem: Problem, scheme: SplitScheme | str, steps: int, seed: int, reference_steps: int = REFERENCE_STEPS):
    scheme = parse_scheme(scheme)
    ref = cached_reference(problem, seed, reference_steps)
    fld = problem.make_field()
    pot = problem.make_potential(fld)
    x0 = sample_initial(problem.dimension, problem.sigma_max, seed)
    traj = solve(fld, pot, problem.schedule(steps), scheme, x0)
    return SolveReport(
        scheme=scheme.display,
        steps=int(steps),
        seed=int(seed),
        endpoint_error=endpoint_error(traj, ref),
        field_nfe=traj.field_nfe,
        potential_nfe=traj.potential_nfe,
        wall_time_s=traj.wall_time,
        diverged_at=traj.diverged_at,
    )


def _seed_cells(problem, schemes, step_counts, seed, reference_steps):
    return [run_cell(problem, sch, n, seed, reference_steps) for sch in schemes for n in step_counts]


def default_jobs() -> int:
    raw = os.environ.get("SPLITSOLVE_JOBS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def sweep(
    problem: Problem,
    schemes: Sequence[SplitScheme | str],
    step_counts: Sequence[int],
    seeds: Sequence[int],
    reference_steps: int = REFERENCE_STEPS,
    jobs: int | None = None,
) -> list[SolveReport]:
    """One report per (scheme, steps, seed), ordered by that key's input order.

    Diverged cells are reported (``endpoint_error = inf``), not raised.
    ``jobs > 1`` distributes seeds over worker processes.
    """
    if not schemes or not step_counts or not seeds:
        raise ValueError("schemes, step_counts and seeds must all be nonempty")
    parsed = [parse_scheme(s) for s in schemes]
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1:
        chunks = [_seed_cells(problem, parsed, step_counts, s, reference_steps) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_seed_cells, problem, parsed, step_counts, s, reference_steps) for s in seeds]
            chunks = [f.result() for f in futures]
    order_s = {sch.display: i for i, sch in enumerate(parsed)}
    order_n = {int(n): i for i, n in enumerate(step_counts)}
    order_seed = {int(s): i for i, s in enumerate(seeds)}
    reports = [r for chunk in chunks for r in chunk]
    reports.sort(key=lambda r: (order_s[r.scheme], order_n[r.steps], order_seed[r.seed]))
    return reports


@dataclass(frozen=True)
class CellSummary:
    scheme: str
    steps: int
    n: int
    diverged: int
    mean_error: float
    std_error: float
    mean_wall_time_s: float
    field_nfe: int
    potential_nfe: int


def aggregate(reports: Iterable[SolveReport]) -> list[CellSummary]:
    """Mean and standard deviation of endpoint error per (scheme, steps)."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.scheme, r.steps), []).append(r)
    out = []
    for (scheme, steps), rs in groups.items():
        errs = np.array([r.endpoint_error for r in rs])
        ok = np.isfinite(errs)
        out.append(
            CellSummary(
                scheme=scheme,
                steps=steps,
                n=len(rs),
                diverged=int((~ok).sum()),
                mean_error=float(errs[ok].mean()) if ok.any() else math.inf,
                std_error=float(errs[ok].std()) if ok.any() else math.inf,
                mean_wall_time_s=float(np.mean([r.wall_time_s for r in rs])),
                field_nfe=rs[0].field_nfe,
                potential_nfe=rs[0].potential_nfe,
            )
        )
    return out


def write_reports_csv(reports: Iterable[SolveReport], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.as_row())


def read_reports_csv(path) -> list[SolveReport]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}; expected {list(CSV_COLUMNS)}")
        return [SolveReport.from_row(row) for row in reader]
