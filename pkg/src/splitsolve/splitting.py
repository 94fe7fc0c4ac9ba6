"""Lie-Trotter and Strang splitting of the guided ODE.

The guided ODE ``dx/dsigma = eps(sigma, x) - grad f(sigma, x)`` is split into
the *diffusion* subproblem ``dy/dsigma = eps(sigma, y)`` and the *condition*
subproblem ``dz/dsigma = -grad f(sigma, z)``. Each subproblem gets its own
:class:`~splitsolve.solvers.Stepper` and its own evaluation history.

Inside one step the condition subproblem is treated as autonomous: the
gradient is evaluated at a fixed noise level. Lie-Trotter uses the step's
starting level. Strang uses the level of the interval endpoint nearest each
half-step (``condition_sigma="nearest"``), or the starting level for both
halves (``"start"``).
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .fields import DiffusionField, GuidancePotential, ZeroPotential
from .schedule import SigmaSchedule
from .solvers import DivergenceError, MethodSpec, Stepper, parse_method

__all__ = [
    "SplitScheme",
    "parse_scheme",
    "PRESETS",
    "SubSteppers",
    "ltsp_step",
    "stsp_step",
    "Trajectory",
    "solve",
]

_KINDS = ("none", "lie_trotter", "strang")
_PREFIX = {"none": "none", "lie_trotter": "ltsp", "strang": "stsp"}


@dataclass(frozen=True)
class SplitScheme:
    kind: str = "none"
    diffusion: MethodSpec = field(default_factory=lambda: MethodSpec("euler"))
    condition: MethodSpec = field(default_factory=lambda: MethodSpec("plms", 1))
    condition_sigma: str = "nearest"
    name: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"split kind must be one of {_KINDS}, got {self.kind!r}")
        if self.condition_sigma not in ("nearest", "start"):
            raise ValueError("condition_sigma must be 'nearest' or 'start'")
        object.__setattr__(self, "diffusion", parse_method(self.diffusion))
        object.__setattr__(self, "condition", parse_method(self.condition))

    @property
    def label(self) -> str:
        if self.kind == "none":
            return f"none:{self.diffusion.label}"
        return f"{_PREFIX[self.kind]}:{self.diffusion.label},{self.condition.label}"

    @property
    def display(self) -> str:
        return self.name or self.label

    @property
    def field_nfe_per_step(self) -> int:
        return self.diffusion.nfe_per_step

    @property
    def potential_nfe_per_step(self) -> int:
        if self.kind == "none":
            return self.diffusion.nfe_per_step
        per = self.condition.nfe_per_step
        return 2 * per if self.kind == "strang" else per

    def __str__(self) -> str:
        return self.display


PRESETS = {
    "ltsp2": ("lie_trotter", "plms2", "plms1"),
    "ltsp4": ("lie_trotter", "plms4", "plms1"),
    "stsp2": ("strang", "plms2", "plms1"),
    "stsp4": ("strang", "plms4", "plms1"),
}

_SCHEME_RE = re.compile(r"^(none|ltsp|stsp):([^,]+)(?:,(.+))?$")


def parse_scheme(text: str | SplitScheme) -> SplitScheme:
    """Parse ``none:<m>``, ``ltsp:<diff>,<cond>``, ``stsp:<diff>,<cond>`` or a preset.

    A bare method name (``"rk4"``) means ``none:<method>``.
    """
    if isinstance(text, SplitScheme):
        return text
    key = text.strip().lower()
    if key in PRESETS:
        kind, d, c = PRESETS[key]
        return SplitScheme(kind, d, c, name=key)
    m = _SCHEME_RE.match(key)
    if m is None:
        try:
            return SplitScheme("none", parse_method(key))
        except ValueError:
            raise ValueError(
                f"cannot parse scheme {text!r}; expected none:<m>, ltsp:<d>,<c>, stsp:<d>,<c> or one of {sorted(PRESETS)}"
            ) from None
    prefix, d, c = m.groups()
    if prefix == "none":
        if c is not None:
            raise ValueError(f"scheme {text!r}: 'none' takes a single method")
        return SplitScheme("none", parse_method(d))
    if c is None:
        raise ValueError(f"scheme {text!r}: split schemes need '<diffusion>,<condition>'")
    kind = "lie_trotter" if prefix == "ltsp" else "strang"
    return SplitScheme(kind, parse_method(d), parse_method(c))


# ----------------------------------------------------------------------------
# per-step rules


class SubSteppers(NamedTuple):
    diffusion: Stepper
    condition: Stepper

    @classmethod
    def for_scheme(cls, scheme: SplitScheme) -> "SubSteppers":
        return cls(Stepper(scheme.diffusion), Stepper(scheme.condition))

    def reset(self) -> None:
        self.diffusion.reset()
        self.condition.reset()


def _frozen_condition(potential, sigma_eval):
    def rhs(sigma, z):
        return -potential.gradient(sigma_eval, z)

    return rhs


def _finite(x):
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite intermediate state")
    return x


def ltsp_step(field, potential, sigma_n, sigma_next, x, steppers: SubSteppers) -> np.ndarray:
    """Full diffusion step, then a full condition step from its result."""
    y = _finite(steppers.diffusion.step(field, sigma_n, sigma_next, x))
    return steppers.condition.step(_frozen_condition(potential, sigma_n), sigma_n, sigma_next, y)


def stsp_step(
    field, potential, sigma_n, sigma_next, x, steppers: SubSteppers, condition_sigma: str = "nearest"
) -> np.ndarray:
    """Half condition step, full diffusion step, half condition step."""
    mid = 0.5 * (sigma_n + sigma_next)
    second = sigma_next if condition_sigma == "nearest" else sigma_n
    z = _finite(steppers.condition.step(_frozen_condition(potential, sigma_n), sigma_n, mid, x))
    y = _finite(steppers.diffusion.step(field, sigma_n, sigma_next, z))
    return steppers.condition.step(_frozen_condition(potential, second), mid, sigma_next, y)


# ----------------------------------------------------------------------------
# full solve


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    field_nfe: int
    potential_nfe: int
    wall_time: float
    diverged_at: int | None = None
    scheme: str = ""

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def steps(self) -> int:
        return self.grid.size - 1


class _Tally:
    __slots__ = ("field", "potential")

    def __init__(self):
        self.field = 0
        self.potential = 0


class _CountedField:
    def __init__(self, field, tally):
        self.field = field
        self.tally = tally

    def __call__(self, sigma, x):
        self.tally.field += 1
        return self.field(sigma, x)


class _CountedPotential:
    def __init__(self, potential, tally):
        self.potential = potential
        self.tally = tally

    def gradient(self, sigma, x):
        self.tally.potential += 1
        return self.potential.gradient(sigma, x)


def _as_grid(schedule) -> np.ndarray:
    grid = schedule.sigmas if isinstance(schedule, SigmaSchedule) else np.asarray(schedule, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("need a grid with at least two points")
    steps = np.diff(grid)
    if not (np.all(steps < 0) or np.all(steps > 0)):
        raise ValueError("grid must be strictly monotone")
    return grid


def solve(
    field: DiffusionField,
    potential: GuidancePotential | None,
    schedule,
    scheme: SplitScheme | str,
    x0,
) -> Trajectory:
    """Integrate the (possibly split) guided ODE over every interval of ``schedule``.

    ``schedule`` is a :class:`SigmaSchedule` or any strictly monotone 1-D
    grid (the toy problems integrate forward in plain time). Evaluation
    counts are kept per solve. A non-finite state stops the solve and sets
    ``diverged_at`` to the offending step index; ``states`` then holds only
    the finite prefix.
    """
    scheme = parse_scheme(scheme)
    grid = _as_grid(schedule)
    potential = ZeroPotential(np.size(x0)) if potential is None else potential
    tally = _Tally()
    f = _CountedField(field, tally)
    g = _CountedPotential(potential, tally)
    steppers = SubSteppers.for_scheme(scheme)

    if scheme.kind == "none":

        def combined(sigma, x):
            return f(sigma, x) - g.gradient(sigma, x)

    x = np.array(x0, dtype=float)
    states = np.empty((grid.size, x.size))
    states[0] = x
    diverged_at = None
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(grid.size - 1):
            s0, s1 = grid[n], grid[n + 1]
            try:
                if scheme.kind == "none":
                    x = steppers.diffusion.step(combined, s0, s1, x)
                elif scheme.kind == "lie_trotter":
                    x = ltsp_step(f, g, s0, s1, x, steppers)
                else:
                    x = stsp_step(f, g, s0, s1, x, steppers, scheme.condition_sigma)
            except DivergenceError:
                diverged_at = n
                break
            if not np.all(np.isfinite(x)):
                diverged_at = n
                break
            states[n + 1] = x
    wall = time.perf_counter() - t0
    if diverged_at is not None:
        states = states[: diverged_at + 1]
    return Trajectory(
        grid=grid,
        states=states,
        field_nfe=tally.field,
        potential_nfe=tally.potential,
        wall_time=wall,
        diverged_at=diverged_at,
        scheme=scheme.display,
    )
