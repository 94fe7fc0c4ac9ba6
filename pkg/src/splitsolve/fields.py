"""Right-hand-side terms for guided probability-flow ODEs.

The guided ODE is ``dxbar/dsigma = eps(sigma, xbar) - grad f(sigma, xbar)``.
This module provides the two halves:

* diffusion fields ``eps`` -- the exact noise predictor of a Gaussian
  mixture (stand-in for a trained network) and linear fields;
* guidance potentials ``f`` -- class log-posterior guidance, linear
  observation constraints (inpainting / colorization / super-resolution),
  and plain linear gradient maps such as the stiff toy problem's ``s*g``.

Every evaluator keeps a thread-safe running evaluation count and may burn a
configurable amount of wall time per call to emulate an expensive network.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .schedule import alpha_bar_from_sigma

__all__ = [
    "GaussianMixture",
    "DiffusionField",
    "MixtureField",
    "LinearField",
    "CallableField",
    "GuidancePotential",
    "ZeroPotential",
    "ClassPotential",
    "QuadraticPotential",
    "LinearGradient",
    "ObservationPotential",
    "ToyLinearField",
    "LinearObservation",
    "mixture_noise_predictor",
    "class_log_posterior",
    "conditional_potential",
    "toy_field_eval",
    "toy_exact_solution",
    "impose_step",
    "forward_observation_sample",
    "color_matrix",
    "mask_projector",
    "downsample_operator",
]


def _busy_wait(seconds: float) -> None:
    if seconds <= 0:
        return
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def bump(self, n: int = 1) -> None:
        with self._lock:
            self.value += n

    def reset(self) -> None:
        with self._lock:
            self.value = 0


# ----------------------------------------------------------------------------
# Gaussian mixture data model


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Isotropic Gaussian mixture with a class label per component."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.broadcast_to(np.asarray(self.variances, dtype=float), w.shape).copy()
        lab = np.broadcast_to(np.asarray(self.labels, dtype=np.int64), w.shape).copy()
        if mu.shape[0] != w.size:
            raise ValueError(f"{w.size} weights but {mu.shape[0]} means")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(~(var > 0)):
            raise ValueError("component variances must be positive")
        for a in (w, mu, var, lab):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "labels", lab)
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def class_mask(self, c: int) -> np.ndarray:
        mask = self.labels == c
        if not mask.any():
            raise KeyError(f"unknown class label {c!r}; known: {self.classes}")
        return mask

    def responsibilities(self, sigma: float, xbar) -> np.ndarray:
        """Posterior component probabilities under the noised mixture."""
        x = np.asarray(xbar, dtype=float)
        tot = self.variances + sigma**2
        sq = np.sum((x - self.means) ** 2, axis=1)
        logp = self.log_weights - 0.5 * sq / tot - 0.5 * x.size * np.log(2 * np.pi * tot)
        return np.exp(logp - logsumexp(logp))

    def posterior_mean(self, sigma: float, xbar) -> np.ndarray:
        """E[x0 | xbar] as a responsibility-weighted mean of per-component posteriors."""
        x = np.asarray(xbar, dtype=float)
        r = self.responsibilities(sigma, x)
        s2 = sigma**2
        comp = (self.variances[:, None] * x + s2 * self.means) / (self.variances + s2)[:, None]
        return r @ comp

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.weights, self.means, self.variances, self.labels):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")


def mixture_noise_predictor(mix: GaussianMixture, sigma: float, xbar) -> np.ndarray:
    """Ideal noise prediction ``-sigma * grad log p_sigma(xbar)``."""
    _check_sigma(sigma)
    x = np.ascontiguousarray(xbar, dtype=float)
    if x.shape != (mix.dimension,):
        raise ValueError(f"state has shape {x.shape}, mixture dimension is {mix.dimension}")
    return kernels.mixture_eps(x, mix.means, mix.variances, mix.log_weights, float(sigma))


def _class_terms(mix, c, sigma, xbar):
    _check_sigma(sigma)
    mask = mix.class_mask(c)
    x = np.ascontiguousarray(xbar, dtype=float)
    if x.shape != (mix.dimension,):
        raise ValueError(f"state has shape {x.shape}, mixture dimension is {mix.dimension}")
    return kernels.class_logpost_grad(x, mix.means, mix.variances, mix.log_weights, float(sigma), mask)


def class_log_posterior(mix: GaussianMixture, c: int, sigma: float, xbar) -> float:
    value, _ = _class_terms(mix, c, sigma, xbar)
    return float(min(value, 0.0))


def conditional_potential(mix: GaussianMixture, c: int, sigma: float, xbar, scale: float = 1.0):
    """``f = scale * sigma / sqrt(sigma^2 + 1) * log p(c | xbar)`` and its gradient in xbar."""
    value, grad = _class_terms(mix, c, sigma, xbar)
    pre = scale * sigma / np.sqrt(sigma * sigma + 1.0)
    return pre * float(min(value, 0.0)), pre * grad


# ----------------------------------------------------------------------------
# diffusion fields


class DiffusionField:
    """Base class: ``field(sigma, x)`` returns the noise prediction ``eps``."""

    dimension: int

    def __init__(self, dimension: int, cost: float = 0.0):
        self.dimension = int(dimension)
        self.cost = float(cost)
        self._nfe = _Counter()

    @property
    def nfe(self) -> int:
        return self._nfe.value

    def reset_nfe(self) -> None:
        self._nfe.reset()

    def __call__(self, sigma: float, x) -> np.ndarray:
        self._nfe.bump()
        _busy_wait(self.cost)
        return self.evaluate(sigma, x)

    def evaluate(self, sigma: float, x) -> np.ndarray:
        raise NotImplementedError


class MixtureField(DiffusionField):
    def __init__(self, mixture: GaussianMixture, cost: float = 0.0):
        super().__init__(mixture.dimension, cost)
        self.mixture = mixture

    def evaluate(self, sigma, x):
        return mixture_noise_predictor(self.mixture, sigma, x)


class LinearField(DiffusionField):
    """Autonomous linear field ``x -> A x``."""

    def __init__(self, matrix, cost: float = 0.0):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(self.matrix.shape[1], cost)

    def evaluate(self, sigma, x):
        return self.matrix @ np.asarray(x, dtype=float)


class CallableField(DiffusionField):
    def __init__(self, func: Callable, dimension: int, cost: float = 0.0):
        super().__init__(dimension, cost)
        self.func = func

    def evaluate(self, sigma, x):
        return np.asarray(self.func(sigma, np.asarray(x, dtype=float)), dtype=float)


# ----------------------------------------------------------------------------
# guidance potentials


class GuidancePotential:
    """Base class for conditional functions ``f_sigma``.

    Subclasses implement ``_value`` and ``_gradient``; ``gradient`` counts
    evaluations and burns ``cost`` seconds per call.
    """

    def __init__(self, dimension: int, cost: float = 0.0):
        self.dimension = int(dimension)
        self.cost = float(cost)
        self._nfe = _Counter()

    @property
    def nfe(self) -> int:
        return self._nfe.value

    def reset_nfe(self) -> None:
        self._nfe.reset()

    def value(self, sigma: float, x) -> float:
        return self._value(sigma, np.asarray(x, dtype=float))

    def gradient(self, sigma: float, x) -> np.ndarray:
        self._nfe.bump()
        _busy_wait(self.cost)
        return self._gradient(sigma, np.asarray(x, dtype=float))

    def value_and_gradient(self, sigma, x):
        return self.value(sigma, x), self.gradient(sigma, x)

    @property
    def is_zero(self) -> bool:
        return False

    def _value(self, sigma, x):
        raise NotImplementedError

    def _gradient(self, sigma, x):
        raise NotImplementedError


class ZeroPotential(GuidancePotential):
    def _value(self, sigma, x):
        return 0.0

    def _gradient(self, sigma, x):
        return np.zeros_like(x)

    @property
    def is_zero(self) -> bool:
        return True


class ClassPotential(GuidancePotential):
    """Classifier guidance with the exact class posterior of a mixture."""

    def __init__(self, mixture: GaussianMixture, target: int, scale: float = 1.0, cost: float = 0.0):
        super().__init__(mixture.dimension, cost)
        mixture.class_mask(target)
        self.mixture = mixture
        self.target = int(target)
        self.scale = float(scale)

    def _value(self, sigma, x):
        return conditional_potential(self.mixture, self.target, sigma, x, self.scale)[0]

    def _gradient(self, sigma, x):
        return conditional_potential(self.mixture, self.target, sigma, x, self.scale)[1]


class QuadraticPotential(GuidancePotential):
    """``f(x) = 0.5 (x - c)^T Q (x - c)`` with symmetric ``Q``."""

    def __init__(self, matrix, center=None, cost: float = 0.0):
        q = np.atleast_2d(np.asarray(matrix, dtype=float))
        if not np.allclose(q, q.T):
            raise ValueError("quadratic potential needs a symmetric matrix")
        super().__init__(q.shape[0], cost)
        self.matrix = q
        self.center = np.zeros(q.shape[0]) if center is None else np.asarray(center, dtype=float)

    def _value(self, sigma, x):
        r = x - self.center
        return 0.5 * float(r @ self.matrix @ r)

    def _gradient(self, sigma, x):
        return self.matrix @ (x - self.center)


class LinearGradient(GuidancePotential):
    """A condition term given directly by a linear map ``grad f(x) = M x``.

    ``M`` need not be symmetric, so there may be no underlying scalar
    potential; ``value`` then raises.
    """

    def __init__(self, matrix, cost: float = 0.0):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(m.shape[1], cost)
        self.matrix = m

    def _value(self, sigma, x):
        if not np.allclose(self.matrix, self.matrix.T):
            raise NotImplementedError("non-symmetric gradient map has no potential")
        return 0.5 * float(x @ self.matrix @ x)

    def _gradient(self, sigma, x):
        return self.matrix @ x

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)


# ----------------------------------------------------------------------------
# stiff toy problem

TOY_EPS_MATRIX = np.array([[0.0, 1.0], [-1.0, -2.0]])
TOY_GUIDE_MATRIX = np.array([[0.0, 0.0], [-1.0, -1.0]])
TOY_X0 = np.array([1.0, 0.0])


@dataclass(frozen=True)
class ToyLinearField:
    """``dx/dt = E x + s G x`` with ``E = [[0,1],[-1,-2]]`` and ``G = [[0,0],[-1,-1]]``."""

    s: float
    eps_matrix: np.ndarray = field(default_factory=lambda: TOY_EPS_MATRIX.copy(), repr=False)
    guide_matrix: np.ndarray = field(default_factory=lambda: TOY_GUIDE_MATRIX.copy(), repr=False)

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s!r}")

    def diffusion(self, cost: float = 0.0) -> LinearField:
        return LinearField(self.eps_matrix, cost)

    def condition(self, cost: float = 0.0) -> LinearGradient:
        # the split ODE adds -grad f, so grad f = -s G x
        return LinearGradient(-self.s * self.guide_matrix, cost)

    def exact(self, t):
        return toy_exact_solution(t, self.s)


def toy_field_eval(toy: ToyLinearField, x):
    """Return ``(E x, s G x)`` separately."""
    x = np.asarray(x, dtype=float)
    return toy.eps_matrix @ x, toy.s * (toy.guide_matrix @ x)


def toy_exact_solution(t, s: float):
    """Closed-form solution of the toy ODE from ``x(0) = (1, 0)``; ``t`` may be an array."""
    if not s > 0:
        raise ValueError(f"scale s must be positive, got {s!r}")
    t = np.asarray(t, dtype=float)
    fast = np.exp(-(s + 1.0) * t)[..., None] * np.array([-1.0, s + 1.0])
    slow = np.exp(-t)[..., None] * np.array([s + 1.0, -s - 1.0])
    return (fast + slow) / s


# ----------------------------------------------------------------------------
# linear observations


def color_matrix() -> np.ndarray:
    """Orthogonal RGB -> (gray, chroma, chroma) transform, 3-decimal constants."""
    return np.array(
        [
            [0.577, -0.816, 0.0],
            [0.577, 0.408, 0.707],
            [0.577, 0.408, -0.707],
        ]
    )


def mask_projector(indices: Sequence[int], dim: int) -> np.ndarray:
    """Diagonal 0/1 projector keeping ``indices`` of a ``dim``-vector."""
    idx = np.asarray(list(indices), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"mask indices {indices!r} outside a {dim}-vector")
    p = np.zeros((dim, dim))
    p[idx, idx] = 1.0
    return p


def downsample_operator(length: int, factor: int) -> np.ndarray:
    """Average pooling over non-overlapping windows of ``factor`` samples."""
    if factor < 1 or length % factor:
        raise ValueError(f"factor {factor} does not divide length {length}")
    d = np.zeros((length // factor, length))
    for i in range(length // factor):
        d[i, i * factor : (i + 1) * factor] = 1.0 / factor
    return d


@dataclass(frozen=True, eq=False)
class LinearObservation:
    """``y0 = A x0`` for an operator ``A`` (mask, color-mask, or downsample)."""

    operator: np.ndarray
    y0: np.ndarray
    gamma: float = 1.0
    eta_mode: str = "deterministic"
    kind: str = "custom"

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.operator, dtype=float))
        y = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y.shape != (a.shape[0],):
            raise ValueError(f"y0 has shape {y.shape}, operator has {a.shape[0]} rows")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.eta_mode not in ("deterministic", "stochastic"):
            raise ValueError(f"eta_mode must be 'deterministic' or 'stochastic', not {self.eta_mode!r}")
        object.__setattr__(self, "operator", a)
        object.__setattr__(self, "y0", y)

    @property
    def dimension(self) -> int:
        return self.operator.shape[1]

    @classmethod
    def inpainting(cls, indices, dim, y0, gamma=1.0, **kw):
        return cls(mask_projector(indices, dim), y0, gamma, kind="mask", **kw)

    @classmethod
    def colorization(cls, y0, gamma=1.0, pixels: int = 1, **kw):
        pc = np.diag([1.0, 0.0, 0.0]) @ color_matrix()
        return cls(np.kron(np.eye(pixels), pc), y0, gamma, kind="color", **kw)

    @classmethod
    def super_resolution(cls, length, factor, y0, gamma=1.0, **kw):
        return cls(downsample_operator(length, factor), y0, gamma, kind="downsample", **kw)


class ObservationPotential(GuidancePotential):
    """``f(xbar) = |y0 - A xhat0(xbar)|^2 / (2 gamma)`` with ``xhat0 = xbar - sigma*eps``.

    For the mixture field ``xhat0`` is the posterior mean, whose Jacobian is
    available in closed form, so the gradient is exact.
    """

    def __init__(self, obs: LinearObservation, field: MixtureField, cost: float = 0.0):
        if not isinstance(field, MixtureField):
            raise TypeError("observation guidance needs an analytic MixtureField")
        if obs.dimension != field.dimension:
            raise ValueError(f"operator acts on {obs.dimension}-vectors, field on {field.dimension}")
        super().__init__(field.dimension, cost)
        self.obs = obs
        self.field = field

    def _terms(self, sigma, x):
        _check_sigma(sigma)
        mix = self.field.mixture
        x = np.ascontiguousarray(x, dtype=float)
        mean, jac = kernels.posterior_mean_jacobian(x, mix.means, mix.variances, mix.log_weights, float(sigma))
        resid = self.obs.y0 - self.obs.operator @ mean
        return resid, jac

    def _value(self, sigma, x):
        resid, _ = self._terms(sigma, x)
        return float(resid @ resid) / (2.0 * self.obs.gamma)

    def _gradient(self, sigma, x):
        resid, jac = self._terms(sigma, x)
        return -(jac.T @ (self.obs.operator.T @ resid)) / self.obs.gamma


def impose_step(obs: LinearObservation, x_prime, y_prev) -> np.ndarray:
    """``(I - A^T A) x' + A^T y``: observed part from ``y``, the rest from ``x'``."""
    a = obs.operator
    x = np.asarray(x_prime, dtype=float)
    y = np.asarray(y_prev, dtype=float)
    if x.shape != (a.shape[1],) or y.shape != (a.shape[0],):
        raise ValueError(f"shapes {x.shape}, {y.shape} do not match operator {a.shape}")
    return x - a.T @ (a @ x) + a.T @ y


def forward_observation_sample(
    obs: LinearObservation,
    field: DiffusionField,
    sigma_from: float,
    sigma_to: float,
    x,
    y0=None,
    seed: int | None = None,
):
    """Draw the forward-diffused observation at level ``sigma_to`` (DDPM coordinates).

    ``y ~ N(sqrt(ab) y0 + sqrt(1 - ab - eta^2) A eps(x), eta^2 I)`` with ``ab``
    the alpha-bar of ``sigma_to`` and ``eps`` evaluated at the current iterate
    ``x`` (level ``sigma_from``). Deterministic mode sets ``eta = 0``.
    """
    if not sigma_from > sigma_to > 0:
        raise ValueError(f"need sigma_from > sigma_to > 0, got {sigma_from!r}, {sigma_to!r}")
    y0 = obs.y0 if y0 is None else np.asarray(y0, dtype=float)
    ab_from = alpha_bar_from_sigma(sigma_from)
    ab_to = alpha_bar_from_sigma(sigma_to)
    if obs.eta_mode == "stochastic":
        eta = np.sqrt((1 - ab_to) / (1 - ab_from)) * np.sqrt(1 - ab_from / ab_to)
    else:
        eta = 0.0
    eps = obs.operator @ field(sigma_from, x)
    mean = np.sqrt(ab_to) * y0 + np.sqrt(max(1 - ab_to - eta * eta, 0.0)) * eps
    if eta == 0.0:
        return mean
    rng = np.random.default_rng(seed)
    return mean + eta * rng.standard_normal(mean.shape)
