"""Single-field explicit steppers over a noise-level grid.

All steppers advance ``dx/dsigma = field(sigma, x)`` from ``sigma_n`` to
``sigma_next`` (usually ``sigma_next < sigma_n``). Multistep methods keep an
:class:`EvalBuffer` of past field evaluations and ramp up their order from
one during the first steps of a solve (cold start, no Runge-Kutta bootstrap).
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "DivergenceError",
    "MethodSpec",
    "parse_method",
    "EvalBuffer",
    "euler_step",
    "heun_step",
    "rk2_step",
    "rk4_step",
    "plms_coefficients",
    "plms_step",
    "glms_coefficients",
    "glms_step",
    "glms_printed_weights",
    "quadrature_newton_weights",
    "Stepper",
    "make_stepper",
]

Field = Callable[[float, np.ndarray], np.ndarray]


class DivergenceError(ArithmeticError):
    """Raised when a stepper meets a non-finite state."""

    def __init__(self, message: str = "non-finite state", step: int | None = None):
        super().__init__(message if step is None else f"{message} (diverged at step {step})")
        self.step = step


def _check_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite state")
    return x


# ----------------------------------------------------------------------------
# method selection

_KINDS = ("euler", "heun", "rk4", "plms", "glms")
_GLMS_MODES = ("verbatim", "corrected")
_METHOD_RE = re.compile(r"^(euler|heun|rk2|rk4|plms([1-4])|glms([1-4])(?::(verbatim|corrected))?)$")


@dataclass(frozen=True)
class MethodSpec:
    """Which single-field method to run. ``rk2`` is an alias of ``heun``."""

    kind: str
    order: int = 1
    glms_mode: str = "corrected"

    def __post_init__(self):
        kind = self.kind.lower()
        if kind == "rk2":
            kind = "heun"
        if kind not in _KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind in ("plms", "glms"):
            if self.order not in (1, 2, 3, 4):
                raise ValueError(f"{kind} order must be 1..4, got {self.order!r}")
        else:
            object.__setattr__(self, "order", {"euler": 1, "heun": 2, "rk4": 4}[kind])
        if kind == "glms":
            if self.glms_mode not in _GLMS_MODES:
                raise ValueError(f"glms mode must be one of {_GLMS_MODES}, got {self.glms_mode!r}")
        else:
            object.__setattr__(self, "glms_mode", "corrected")

    @property
    def label(self) -> str:
        if self.kind == "plms":
            return f"plms{self.order}"
        if self.kind == "glms":
            return f"glms{self.order}:{self.glms_mode}"
        return self.kind

    @property
    def nfe_per_step(self) -> int:
        return {"heun": 2, "rk4": 4}.get(self.kind, 1)

    def __str__(self) -> str:
        return self.label


def parse_method(text: str | MethodSpec) -> MethodSpec:
    """Parse ``euler | heun | rk2 | rk4 | plms{1-4} | glms{1-4}[:verbatim|corrected]``."""
    if isinstance(text, MethodSpec):
        return text
    m = _METHOD_RE.match(text.strip().lower())
    if m is None:
        raise ValueError(
            f"cannot parse method {text!r}; expected euler, heun, rk2, rk4, plms1-4 or glms1-4[:verbatim|corrected]"
        )
    name = m.group(1)
    if m.group(2):
        return MethodSpec("plms", int(m.group(2)))
    if m.group(3):
        return MethodSpec("glms", int(m.group(3)), m.group(4) or "corrected")
    return MethodSpec(name)


# ----------------------------------------------------------------------------
# one-step methods


def euler_step(field: Field, sigma_n: float, sigma_next: float, x) -> np.ndarray:
    x = _check_finite(x)
    return x + (sigma_next - sigma_n) * field(sigma_n, x)


def heun_step(field: Field, sigma_n: float, sigma_next: float, x) -> np.ndarray:
    x = _check_finite(x)
    h = sigma_next - sigma_n
    e1 = field(sigma_n, x)
    e2 = field(sigma_next, x + h * e1)
    return x + 0.5 * h * (e1 + e2)


rk2_step = heun_step


def rk4_step(field: Field, sigma_n: float, sigma_next: float, x) -> np.ndarray:
    x = _check_finite(x)
    h = sigma_next - sigma_n
    mid = sigma_n + 0.5 * h
    e1 = field(sigma_n, x)
    e2 = field(mid, x + 0.5 * h * e1)
    e3 = field(mid, x + 0.5 * h * e2)
    e4 = field(sigma_next, x + h * e3)
    return x + (h / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)


# ----------------------------------------------------------------------------
# multistep methods


class EvalBuffer:
    """The most recent field evaluations, newest first."""

    def __init__(self, max_order: int = 4):
        if max_order < 1:
            raise ValueError("buffer needs room for at least one evaluation")
        self.max_order = int(max_order)
        self._items: deque = deque(maxlen=self.max_order)

    def push(self, e) -> None:
        self._items.appendleft(np.asarray(e, dtype=float))

    def __len__(self) -> int:
        return len(self._items)

    @property
    def count(self) -> int:
        return len(self._items)

    def __getitem__(self, k: int) -> np.ndarray:
        return self._items[k]

    def clear(self) -> None:
        self._items.clear()


_PLMS_ROWS = (
    (Fraction(1),),
    (Fraction(3, 2), Fraction(-1, 2)),
    (Fraction(23, 12), Fraction(-16, 12), Fraction(5, 12)),
    (Fraction(55, 24), Fraction(-59, 24), Fraction(37, 24), Fraction(-9, 24)),
)


def plms_coefficients(order: int, available: int | None = None) -> np.ndarray:
    """Adams-Bashforth weights on ``(e_n, e_{n-1}, ...)`` for ``min(order, available)``."""
    if order not in (1, 2, 3, 4):
        raise ValueError(f"PLMS order must be 1..4, got {order!r}")
    c = order if available is None else min(order, available)
    if c < 1:
        raise ValueError(f"need at least one evaluation in history, got {available!r}")
    return np.array([float(w) for w in _PLMS_ROWS[c - 1]])


def plms_step(field: Field, sigma_n: float, sigma_next: float, x, buffer: EvalBuffer, order: int) -> np.ndarray:
    x = _check_finite(x)
    buffer.push(field(sigma_n, x))
    w = plms_coefficients(order, len(buffer))
    e_hat = w[0] * buffer[0]
    for k in range(1, w.size):
        e_hat = e_hat + w[k] * buffer[k]
    return x + (sigma_next - sigma_n) * e_hat


def _moments(b: float, jmax: int) -> np.ndarray:
    """``m_j = int_0^1 u^j exp(b u) du`` for ``j = 0..jmax``."""
    m = np.empty(jmax + 1)
    if abs(b) <= 1.0:
        # power series; terms fall like |b|^k / k!
        for j in range(jmax + 1):
            total, term, k = 0.0, 1.0, 0
            while True:
                add = term / (j + k + 1)
                total += add
                if abs(add) < 1e-18 * abs(total):
                    break
                k += 1
                term *= b / k
            m[j] = total
    else:
        eb = math.exp(b)
        m[0] = math.expm1(b) / b
        for j in range(1, jmax + 1):
            m[j] = (eb - j * m[j - 1]) / b
    return m


def glms_coefficients(b: float, order: int = 4, mode: str = "corrected") -> np.ndarray:
    """Backward-difference weights ``(w1, w2, w3)[:order-1]`` for log-linear steps.

    ``w_k`` integrates the k-th Newton basis polynomial of the step index
    against ``d sigma`` over one step of ``sigma = exp(a + b tau)``,
    normalised by ``Delta sigma``. ``corrected`` uses the proper Newton basis
    ``u, u(u+1)/2, u(u+1)(u+2)/6`` and reduces to PLMS as ``b -> 0``;
    ``verbatim`` drops the ``1/2!`` and ``1/3!`` factors of the last two
    terms, matching the printed closed forms.
    """
    if not b < 0:
        raise ValueError(f"log step ratio b must be negative (decreasing schedule), got {b!r}")
    if order not in (1, 2, 3, 4):
        raise ValueError(f"GLMS order must be 1..4, got {order!r}")
    if mode not in _GLMS_MODES:
        raise ValueError(f"glms mode must be one of {_GLMS_MODES}, got {mode!r}")
    m = _moments(b, 3)
    kappa = b / math.expm1(b)
    w = np.array(
        [
            kappa * m[1],
            kappa * (m[2] + m[1]) / 2.0,
            kappa * (m[3] + 3.0 * m[2] + 2.0 * m[1]) / 6.0,
        ]
    )
    if mode == "verbatim":
        w[1] *= 2.0
        w[2] *= 6.0
    return w[: order - 1]


def glms_printed_weights(b: float) -> np.ndarray:
    """The printed closed forms, evaluated literally (cancellation-prone near 0)."""
    e = math.exp(b) / (math.exp(b) - 1.0)
    return np.array(
        [
            e - 1.0 / b,
            e * (2.0 - 2.0 / b) - 1.0 / b + 2.0 / b**2,
            e * (6.0 - 9.0 / b + 6.0 / b**2) - 2.0 / b + 6.0 / b**2 - 6.0 / b**3,
        ]
    )


def _backward_differences(buffer: EvalBuffer, c: int):
    e = [buffer[k] for k in range(c)]
    out = []
    if c >= 2:
        out.append(e[0] - e[1])
    if c >= 3:
        out.append(e[0] - 2.0 * e[1] + e[2])
    if c >= 4:
        out.append(e[0] - 3.0 * e[1] + 3.0 * e[2] - e[3])
    return out


def glms_step(
    field: Field,
    sigma_n: float,
    sigma_next: float,
    x,
    buffer: EvalBuffer,
    order: int,
    mode: str = "corrected",
) -> np.ndarray:
    """One GLMS step using the local log ratio ``b = ln sigma_next - ln sigma_n``."""
    x = _check_finite(x)
    if not (sigma_n > 0 and sigma_next > 0):
        raise ValueError("GLMS needs positive noise levels")
    b = math.log(sigma_next) - math.log(sigma_n)
    buffer.push(field(sigma_n, x))
    c = min(order, len(buffer))
    e_hat = buffer[0]
    if c >= 2:
        w = glms_coefficients(b, c, mode)
        for wk, dk in zip(w, _backward_differences(buffer, c)):
            e_hat = e_hat + wk * dk
    return x + (sigma_next - sigma_n) * e_hat


_NEWTON_BASIS = (
    lambda u: u,
    lambda u: u * (u + 1.0) / 2.0,
    lambda u: u * (u + 1.0) * (u + 2.0) / 6.0,
)


def quadrature_newton_weights(b: float, order: int = 4) -> np.ndarray:
    """Adaptive-quadrature oracle for the corrected GLMS weights."""
    if not b < 0:
        raise ValueError(f"b must be negative, got {b!r}")
    if order not in (1, 2, 3, 4):
        raise ValueError(f"order must be 1..4, got {order!r}")
    kappa = b / math.expm1(b)
    out = []
    for basis in _NEWTON_BASIS[: order - 1]:
        val, err = integrate.quad(lambda u: basis(u) * kappa * math.exp(b * u), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
        if not np.isfinite(val) or err > 1e-11:
            raise ArithmeticError(f"quadrature did not converge for b={b!r} (err {err:.2e})")
        out.append(val)
    return np.array(out)


# ----------------------------------------------------------------------------
# stateful wrapper used by the solve loop


class Stepper:
    """A method bound to its own evaluation history."""

    def __init__(self, spec: MethodSpec | str):
        self.spec = parse_method(spec)
        self.buffer = EvalBuffer(max(self.spec.order, 1))

    def reset(self) -> None:
        self.buffer.clear()

    @property
    def nfe_per_step(self) -> int:
        return self.spec.nfe_per_step

    def step(self, field: Field, sigma_n: float, sigma_next: float, x) -> np.ndarray:
        kind = self.spec.kind
        if kind == "euler":
            return euler_step(field, sigma_n, sigma_next, x)
        if kind == "heun":
            return heun_step(field, sigma_n, sigma_next, x)
        if kind == "rk4":
            return rk4_step(field, sigma_n, sigma_next, x)
        if kind == "plms":
            return plms_step(field, sigma_n, sigma_next, x, self.buffer, self.spec.order)
        return glms_step(field, sigma_n, sigma_next, x, self.buffer, self.spec.order, self.spec.glms_mode)


def make_stepper(spec: MethodSpec | str) -> Stepper:
    return Stepper(spec)
