"""Noise-level grids and the DDPM <-> probability-flow change of variables.

The ODE state is ``xbar = x_t / sqrt(alpha_bar_t)`` and the independent
variable is ``sigma = sqrt(1 - alpha_bar) / sqrt(alpha_bar)``. Grids are
indexed so that ``n`` increases while ``sigma`` decreases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SigmaSchedule",
    "make_log_linear_schedule",
    "sigma_from_alpha_bar",
    "alpha_bar_from_sigma",
    "to_xbar",
    "from_xbar",
    "step_log_ratio",
]


@dataclass(frozen=True, eq=False)
class SigmaSchedule:
    """A strictly decreasing, strictly positive grid ``sigma_0 > ... > sigma_N``."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigmas, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("a schedule needs at least two levels")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("noise levels must be finite and strictly positive")
        if np.any(np.diff(s) >= 0):
            raise ValueError("noise levels must be strictly decreasing")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    @property
    def N(self) -> int:
        return self.sigmas.size - 1

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[-1])

    def __len__(self) -> int:
        return self.sigmas.size

    def __eq__(self, other):
        if not isinstance(other, SigmaSchedule):
            return NotImplemented
        return np.array_equal(self.sigmas, other.sigmas)

    def __hash__(self):
        return hash(self.sigmas.tobytes())

    def to_json(self) -> str:
        return json.dumps([float(v) for v in self.sigmas])

    @classmethod
    def from_json(cls, text: str) -> "SigmaSchedule":
        levels = json.loads(text)
        if not isinstance(levels, list):
            raise ValueError("schedule JSON must be an array of noise levels")
        return cls(np.asarray(levels, dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SigmaSchedule":
        return cls.from_json(Path(path).read_text())


def make_log_linear_schedule(sigma_max: float, sigma_min: float, N: int) -> SigmaSchedule:
    """``N + 1`` levels with ``ln sigma`` affine in the step index.

    ``sigma_n = exp(a + n b)`` with ``a = ln sigma_max`` and
    ``b = (ln sigma_min - ln sigma_max) / N``. Both endpoints are exact.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if not (sigma_min > 0 and sigma_max > sigma_min):
        raise ValueError(f"need sigma_max > sigma_min > 0, got {sigma_max!r}, {sigma_min!r}")
    N = int(N)
    a = math.log(sigma_max)
    b = (math.log(sigma_min) - a) / N
    sigmas = np.exp(a + b * np.arange(N + 1))
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return SigmaSchedule(sigmas)


def _check_alpha_bar(alpha_bar):
    ab = np.asarray(alpha_bar, dtype=float)
    if np.any(~(ab > 0)) or np.any(~(ab < 1)):
        raise ValueError(f"alpha_bar must lie in (0, 1), got {alpha_bar!r}")
    return ab


def sigma_from_alpha_bar(alpha_bar):
    ab = _check_alpha_bar(alpha_bar)
    out = np.sqrt((1.0 - ab) / ab)
    return float(out) if out.ndim == 0 else out


def alpha_bar_from_sigma(sigma):
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s >= 0)):
        raise ValueError(f"sigma must be nonnegative, got {sigma!r}")
    out = 1.0 / (1.0 + s * s)
    return float(out) if out.ndim == 0 else out


def to_xbar(x_t, alpha_bar):
    ab = _check_alpha_bar(alpha_bar)
    return np.asarray(x_t, dtype=float) / np.sqrt(ab)


def from_xbar(xbar, alpha_bar):
    ab = _check_alpha_bar(alpha_bar)
    return np.asarray(xbar, dtype=float) * np.sqrt(ab)


def step_log_ratio(schedule: SigmaSchedule, n: int) -> float:
    """``b_n = ln sigma_{n+1} - ln sigma_n`` (negative on a valid schedule)."""
    if not 0 <= n < schedule.N:
        raise IndexError(f"step index {n} outside [0, {schedule.N})")
    return math.log(schedule.sigmas[n + 1]) - math.log(schedule.sigmas[n])
