"""Linear stability on the test equation ``y' = -(s+1) y`` over ``t in [0, 1]``.

With ``dt = 1/N`` every method considered here reduces to a recurrence
``y[n+1] = b y[n] + c y[n-1]``:

============  =============================  ==========================
method        b                              c
============  =============================  ==========================
Euler         1 - (s+1)/N                    0
PLMS2         1 - 3/2 h,  h = (s+1)/N        h/2
LTSP2         (1 - s/N)(1 - 3/(2N))          (1 - s/N) / (2N)
STSP2         q (1 - 3/(2N)),  q=(1-s/2N)^2  q / (2N)
============  =============================  ==========================

The splitting rows treat ``y' = -y`` with PLMS2 and ``y' = -s y`` with
Euler. A method is stable at ``N`` when both roots of ``r^2 - b r - c``
lie strictly inside the unit circle; a root of modulus exactly one counts
as unstable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import LinearField, LinearGradient
from .splitting import parse_scheme, solve

__all__ = [
    "METHODS",
    "DEFAULT_S_VALUES",
    "StabilityReport",
    "recurrence_coefficients",
    "characteristic_roots",
    "is_stable",
    "min_stable_steps",
    "min_stable_steps_euler",
    "min_stable_steps_plms2",
    "min_stable_steps_ltsp2",
    "min_stable_steps_stsp2",
    "stability_report",
    "stability_table",
    "ordering_holds",
    "iterate_recurrence",
    "empirical_divergence_scan",
]

METHODS = ("euler", "plms2", "ltsp2", "stsp2")
DEFAULT_S_VALUES = (5, 10, 15, 20, 30, 40, 60, 80)
SCAN_SCHEMES = {
    "euler": "none:euler",
    "plms2": "none:plms2",
    "ltsp2": "ltsp:plms2,plms1",
    "stsp2": "stsp:plms2,plms1",
}
# a root this close to the unit circle is a tie, and ties are unstable
_TIE = 1e-12


def recurrence_coefficients(method: str, s: float, N: int) -> tuple[float, float]:
    """``(b, c)`` of ``y[n+1] = b y[n] + c y[n-1]`` for ``method`` at ``N`` steps."""
    dt = 1.0 / N
    if method == "euler":
        return 1.0 - (s + 1.0) * dt, 0.0
    if method == "plms2":
        h = (s + 1.0) * dt
        return 1.0 - 1.5 * h, 0.5 * h
    if method == "ltsp2":
        k = 1.0 - s * dt
        return k * (1.0 - 1.5 * dt), 0.5 * k * dt
    if method == "stsp2":
        q = (1.0 - 0.5 * s * dt) ** 2
        return q * (1.0 - 1.5 * dt), 0.5 * q * dt
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def characteristic_roots(b: float, c: float) -> tuple[complex, complex]:
    """Roots of ``r^2 - b r - c``, largest modulus first."""
    rad = np.sqrt(complex(b * b + 4.0 * c))
    r1, r2 = 0.5 * (b + rad), 0.5 * (b - rad)
    return (r1, r2) if abs(r1) >= abs(r2) else (r2, r1)


def is_stable(method: str, s: float, N: int) -> bool:
    r1, r2 = characteristic_roots(*recurrence_coefficients(method, s, N))
    return abs(r1) < 1.0 - _TIE and abs(r2) < 1.0 - _TIE


def min_stable_steps(method: str, s: float, n_cap: int | None = None) -> int:
    """Smallest ``N >= 1`` at which ``method`` is stable on the test equation."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s!r}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    cap = n_cap or int(10 * (s + 2)) + 10
    for N in range(1, cap + 1):
        if is_stable(method, s, N):
            return N
    raise ArithmeticError(f"{method} not stable for any N <= {cap} at s={s}")


def min_stable_steps_euler(s: float) -> int:
    return min_stable_steps("euler", s)


def min_stable_steps_plms2(s: float) -> int:
    return min_stable_steps("plms2", s)


def min_stable_steps_ltsp2(s: float) -> int:
    return min_stable_steps("ltsp2", s)


def min_stable_steps_stsp2(s: float) -> int:
    return min_stable_steps("stsp2", s)


@dataclass(frozen=True)
class StabilityReport:
    method: str
    s: float
    min_stable_N: int
    root1_mod: float
    root2_mod: float

    @property
    def roots(self) -> tuple[complex, complex]:
        return characteristic_roots(*recurrence_coefficients(self.method, self.s, self.min_stable_N))


def stability_report(method: str, s: float) -> StabilityReport:
    N = min_stable_steps(method, s)
    r1, r2 = characteristic_roots(*recurrence_coefficients(method, s, N))
    return StabilityReport(method, s, N, float(abs(r1)), float(abs(r2)))


def stability_table(s_values: Sequence[float] = DEFAULT_S_VALUES, methods: Sequence[str] = METHODS):
    """Reports for every (method, s), methods outermost."""
    if len(s_values) == 0:
        raise ValueError("need at least one s value")
    return [stability_report(m, s) for m in methods for s in s_values]


def _test_split(s: float):
    # y' = -y (diffusion part) and y' = -s y (condition part, -grad f = -s y)
    return LinearField([[-1.0]]), LinearGradient([[s]])


def empirical_divergence_scan(method: str, s: float, n_max: int, growth: float = 10.0) -> int | None:
    """Smallest ``N`` in ``2..n_max`` whose solve on ``[0, 1]`` stays bounded and contracts.

    The solve uses the real steppers (non-split for ``euler``/``plms2``,
    split for ``ltsp2``/``stsp2``) from ``y(0) = 1``. A run qualifies when
    ``max |y_n| <= growth`` and ``|y_N| < 1``. Returns ``None`` if none does.
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    scheme = parse_scheme(SCAN_SCHEMES.get(method, method))
    field, potential = _test_split(s)
    for N in range(2, n_max + 1):
        traj = solve(field, potential, np.linspace(0.0, 1.0, N + 1), scheme, np.array([1.0]))
        if traj.diverged:
            continue
        ys = np.abs(traj.states[:, 0])
        if ys.max() <= growth and ys[-1] < 1.0:
            return N
    return None


def iterate_recurrence(method: str, s: float, N: int, steps: int = 10_000):
    """Run the literal recurrence from ``y0 = y1 = 1``; returns ``(|y_last|, max |y|)``."""
    from . import kernels

    b, c = recurrence_coefficients(method, s, N)
    last, peak = kernels.linear_recurrence(b, c, 1.0, 1.0, steps)
    return abs(last), peak


def ordering_holds(table) -> bool:
    by = {(r.method, r.s): r.min_stable_N for r in table}
    svals = sorted({r.s for r in table})
    return all(
        by[("stsp2", s)] <= by[("ltsp2", s)] <= by[("euler", s)] <= by[("plms2", s)] for s in svals
    )
