"""Domain geometry, seeded randomness, budget validation and the loss contract.

Every loss in this package follows a batched-row convention: an example is a
1-D array ``z`` and a dataset is a 2-D array whose rows are examples.
``value(w, z)`` and ``gradient(w, z)`` broadcast over leading axes of ``z``
(and of ``w`` when a per-row iterate is supplied).
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

NON_SMOOTH = math.inf
"""Smoothness marker for losses without a Lipschitz gradient."""

UNKNOWN_RANK = None


class BudgetError(ValueError):
    """Privacy parameters outside the range an algorithm was analysed for."""


class PreconditionError(ValueError):
    pass


class NonDifferentiableError(ValueError):
    """Gradient requested at a kink of a non-smooth loss."""


class NumericalError(ArithmeticError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, achieved_gap: float = math.nan):
        super().__init__(message)
        self.achieved_gap = achieved_gap


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexDomain:
    """An L2 ball ``{w : ||w - center|| <= radius}``."""

    center: np.ndarray
    radius: float
    kind: str = "l2_ball"

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(-1)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if not self.radius > 0:
            raise ValueError(f"domain radius must be positive, got {self.radius}")
        if self.kind != "l2_ball":
            raise ValueError(f"unsupported domain kind {self.kind!r}")

    @classmethod
    def ball(cls, d: int, radius: float = 1.0) -> "ConvexDomain":
        return cls(np.zeros(d), float(radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, w: np.ndarray) -> np.ndarray:
        return project(self, w)

    def contains(self, w: np.ndarray, slack: float = 1e-12) -> bool:
        dist = np.linalg.norm(np.asarray(w, dtype=float) - self.center, axis=-1)
        return bool(np.all(dist <= self.radius * (1 + slack) + slack))


def project(domain: ConvexDomain, w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the ball; rows of a 2-D ``w`` are projected independently."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != domain.dim:
        raise ValueError(f"dimension mismatch: w has {w.shape[-1]} coordinates, domain has {domain.dim}")
    diff = w - domain.center
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        scale = np.minimum(1.0, domain.radius / norm)
    return domain.center + diff * scale


# ---------------------------------------------------------------------------
# privacy budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not 0 < self.epsilon:
            raise BudgetError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise BudgetError(f"delta must lie in (0, 1), got {self.delta}")

    def validate(self, n: int) -> "PrivacyBudget":
        """Check ``epsilon <= 1`` and ``delta <= 1/n^2`` (the algorithms' input requirements)."""
        validate_budget(n, self.epsilon, self.delta)
        return self

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)


def validate_budget(n: int, epsilon: float, delta: float) -> None:
    if n < 1:
        raise BudgetError(f"dataset size must be positive, got n={n}")
    if not 0 < epsilon <= 1:
        raise BudgetError(f"algorithm precondition epsilon <= 1 violated: epsilon={epsilon}")
    if not 0 < delta <= 1.0 / n**2:
        raise BudgetError(
            f"algorithm precondition delta <= 1/n^2 violated: delta={delta:g} > 1/n^2={1.0 / n**2:g} (n={n})"
        )


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

StreamKey = Union[int, str]


def _key_int(key: StreamKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError("stream ids must be non-negative")
    return key


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream identified by ``(root_seed, path)``.

    A stream never advances: ``generator()`` always restarts at draw index 0,
    so identical paths give bit-identical draws no matter the call order.
    Distinct paths map to distinct Philox keys via ``SeedSequence``.
    """

    root_seed: int
    path: tuple = ()

    def child(self, *keys: StreamKey) -> "RngStream":
        return RngStream(self.root_seed, self.path + tuple(_key_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.root_seed) & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def sample_gaussian(dim: int, variance: float, rng: Union[RngStream, np.random.Generator]) -> np.ndarray:
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if variance == 0:
        return np.zeros(dim)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.normal(0.0, math.sqrt(variance), size=dim)


# ---------------------------------------------------------------------------
# data and losses
# ---------------------------------------------------------------------------


class Dataset:
    """Immutable container of ``n`` examples stored as rows of a 2-D array."""

    __slots__ = ("_z",)

    def __init__(self, examples):
        z = np.array(examples, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2 or z.shape[0] < 1:
            raise ValueError("a dataset needs at least one example")
        z.setflags(write=False)
        self._z = z

    @property
    def examples(self) -> np.ndarray:
        return self._z

    @property
    def n(self) -> int:
        return self._z.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, idx):
        return self._z[idx]

    def replace(self, index: int, example) -> "Dataset":
        """Neighbouring dataset: a copy with one example swapped."""
        z = self._z.copy()
        z[index] = np.asarray(example, dtype=float)
        return Dataset(z)

    def resample(self, indices) -> "Dataset":
        return Dataset(self._z[np.asarray(indices)])


@dataclass(frozen=True)
class LossFamily:
    """Per-example convex loss with certified constants.

    ``smoothness`` is ``NON_SMOOTH`` for losses whose gradient is not
    Lipschitz. ``subgradient`` (when given) must be defined everywhere and is
    what inner prox solvers call. ``prox(w, z, beta)`` is an optional exact
    oracle for ``argmin_v f(v)/beta + ||v - w||^2/2``.
    """

    name: str
    dim: int
    value: Callable
    gradient: Callable
    lipschitz: float
    smoothness: float = NON_SMOOTH
    hessian_rank_hint: Optional[int] = UNKNOWN_RANK
    strong_convexity: float = 0.0
    subgradient: Optional[Callable] = None
    hessian: Optional[Callable] = None
    prox: Optional[Callable] = None
    is_singular: Optional[Callable] = None
    note: str = ""

    @property
    def is_smooth(self) -> bool:
        return math.isfinite(self.smoothness)

    def subgrad(self, w, z):
        return (self.subgradient or self.gradient)(w, z)


def finite_diff_grad_check(loss: LossFamily, w: np.ndarray, z: np.ndarray, h: float = 1e-5) -> float:
    """Max coordinate error between central differences and ``loss.gradient``."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if loss.is_singular is not None and loss.is_singular(w, z, h):
        raise NonDifferentiableError(f"{loss.name}: point is within {h} of a non-differentiable kink")
    eye = np.eye(w.shape[0]) * h
    fd = (loss.value(w + eye, z) - loss.value(w - eye, z)) / (2 * h)
    return float(np.max(np.abs(fd - loss.gradient(w, z))))


def finite_diff_hessian(loss: LossFamily, w: np.ndarray, z: np.ndarray, h: float = 1e-5) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    eye = np.eye(w.shape[0]) * h
    cols = (loss.gradient(w + eye, z) - loss.gradient(w - eye, z)) / (2 * h)
    hess = cols.T
    return 0.5 * (hess + hess.T)


def validate_loss(
    loss: LossFamily,
    sample_w: Callable[[np.random.Generator, int], np.ndarray],
    sample_z: Callable[[np.random.Generator, int], np.ndarray],
    rng: np.random.Generator,
    n_points: int = 1000,
    n_fd: int = 100,
    fd_tol: float = 1e-5,
) -> None:
    """Spot-check the certified constants of ``loss`` on random points.

    Raises ``PreconditionError`` if the gradient norm exceeds ``L`` or, for
    smooth losses, if central differences disagree with the gradient or the
    gradient moves faster than ``beta``.
    """
    W = sample_w(rng, n_points)
    Z = sample_z(rng, n_points)
    grad = (loss.subgradient or loss.gradient)(W, Z)
    worst = float(np.max(np.linalg.norm(grad, axis=-1)))
    if worst > loss.lipschitz * (1 + 1e-9):
        raise PreconditionError(f"{loss.name}: gradient norm {worst:.6g} exceeds certified L={loss.lipschitz}")
    for i in range(min(n_fd, n_points)):
        if loss.is_singular is not None and loss.is_singular(W[i], Z[i], 1e-4):
            continue
        err = finite_diff_grad_check(loss, W[i], Z[i], h=1e-5)
        if err > fd_tol:
            raise PreconditionError(f"{loss.name}: finite-difference gradient error {err:.3g} at sample {i}")
    if loss.is_smooth:
        W2 = sample_w(rng, n_points)
        dg = np.linalg.norm(loss.gradient(W, Z) - loss.gradient(W2, Z), axis=-1)
        dw = np.linalg.norm(W - W2, axis=-1)
        ratio = float(np.max(dg / np.maximum(dw, 1e-300)))
        if ratio > loss.smoothness * (1 + 1e-7):
            raise PreconditionError(f"{loss.name}: gradient Lipschitz ratio {ratio:.6g} exceeds beta={loss.smoothness}")


def uniform_ball(rng: np.random.Generator, size: int, d: int, radius: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / d)
    return g * r[:, None]


def uniform_sphere(rng: np.random.Generator, size: int, d: int, radius: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((size, d))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def as_rows(x: Sequence) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass
class TrialResult:
    """Outcome of one algorithm run."""

    output: np.ndarray
    excess_emp: float = math.nan
    excess_pop: float = math.nan
    grad_evals: int = 0
    seed: Optional[int] = None
    non_private: bool = False
    tags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
