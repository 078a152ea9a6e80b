"""Synthetic loss families, data distributions and population-loss oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize

from .core import (
    NON_SMOOTH,
    ConvexDomain,
    Dataset,
    LossFamily,
    NonDifferentiableError,
    PreconditionError,
    RngStream,
    finite_diff_hessian,
    project,
    uniform_ball,
    uniform_sphere,
    validate_loss,
)

_CHECK_SEED = 20190612


def _check(loss: LossFamily, w_radius: float, sample_z) -> LossFamily:
    rng = np.random.default_rng(_CHECK_SEED)
    validate_loss(
        loss,
        lambda g, k: uniform_ball(g, k, loss.dim, w_radius),
        sample_z,
        rng,
        n_points=256,
        n_fd=8,
    )
    return loss


# ---------------------------------------------------------------------------
# loss families
# ---------------------------------------------------------------------------


def squared_distance_loss(M: float, r_z: float, d: int, validate: bool = True) -> LossFamily:
    """``0.5 * ||w - z||^2`` on the radius-``M`` ball with ``||z|| <= r_z``."""
    if r_z > M:
        raise PreconditionError(f"data radius {r_z} exceeds domain radius {M}")

    def value(w, z):
        return 0.5 * np.sum((w - z) ** 2, axis=-1)

    def gradient(w, z):
        return np.asarray(w, dtype=float) - z

    loss = LossFamily(
        name="squared_distance",
        dim=d,
        value=value,
        gradient=gradient,
        lipschitz=2.0 * M,
        smoothness=1.0,
        hessian_rank_hint=d,
        strong_convexity=1.0,
        hessian=lambda w, z: np.eye(d),
        note="L = 2M since ||w - z|| <= M + r_z <= 2M; Hessian is the identity",
    )
    if validate:
        _check(loss, M, lambda g, k: uniform_ball(g, k, d, r_z))
    return loss


def prox_exact_norm(w, z, beta: float) -> np.ndarray:
    """Block soft threshold: prox of ``||. - z|| / beta`` evaluated at ``w``."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    diff = w - z
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(dist > 0, np.maximum(0.0, 1.0 - 1.0 / (beta * dist)), 0.0)
    return z + diff * shrink


def euclidean_norm_loss(d: int, validate: bool = True) -> LossFamily:
    """``||w - z||``: 1-Lipschitz and non-smooth at ``w = z``."""

    def value(w, z):
        return np.linalg.norm(w - z, axis=-1)

    def gradient(w, z):
        diff = np.asarray(w, dtype=float) - z
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        if np.any(dist == 0):
            raise NonDifferentiableError("euclidean_norm: gradient undefined at w = z")
        return diff / dist

    def subgradient(w, z):
        diff = np.asarray(w, dtype=float) - z
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(dist > 0, diff / dist, 0.0)

    loss = LossFamily(
        name="euclidean_norm",
        dim=d,
        value=value,
        gradient=gradient,
        subgradient=subgradient,
        lipschitz=1.0,
        smoothness=NON_SMOOTH,
        hessian_rank_hint=None,
        prox=prox_exact_norm,
        is_singular=lambda w, z, h: bool(np.linalg.norm(np.asarray(w) - z) <= h),
        note="unit-norm subgradients; exact prox is the block soft threshold",
    )
    if validate:
        _check(loss, 1.0, lambda g, k: uniform_ball(g, k, d, 1.0))
    return loss


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def logistic_glm_loss(d: int, feature_radius: float = 1.0, validate: bool = True) -> LossFamily:
    """``log(1 + exp(-y <w, x>))`` with examples stored as rows ``[x, y]``."""
    R = float(feature_radius)

    def margin(w, z):
        return z[..., d] * np.sum(np.asarray(w) * z[..., :d], axis=-1)

    def value(w, z):
        return np.logaddexp(0.0, -margin(w, z))

    def gradient(w, z):
        coef = -z[..., d] * _sigmoid(-margin(w, z))
        return coef[..., None] * z[..., :d]

    def hessian(w, z):
        s = _sigmoid(margin(w, z))
        x = z[..., :d]
        return (s * (1 - s)) * np.outer(x, x)

    loss = LossFamily(
        name="logistic_glm",
        dim=d,
        value=value,
        gradient=gradient,
        lipschitz=R,
        smoothness=R * R / 4.0,
        hessian_rank_hint=1,
        hessian=hessian,
        note="|s| <= 1 gives L = R; s(1-s) <= 1/4 gives beta = R^2/4; Hessian s(1-s) x x^T has rank 1",
    )
    if validate:

        def sample_z(g, k):
            x = uniform_ball(g, k, d, R)
            y = np.where(g.random(k) < 0.5, -1.0, 1.0)
            return np.column_stack([x, y])

        _check(loss, 1.0, sample_z)
    return loss


LOSSES = {
    "squared_distance": squared_distance_loss,
    "euclidean_norm": euclidean_norm_loss,
    "logistic_glm": logistic_glm_loss,
}


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDistribution:
    """i.i.d. example generator with known population minimiser.

    ``ball_uniform_mean_estimation``: ``z = mean + spread * u``, ``u`` uniform in the unit ball.
    ``sphere_points_norm_loss``: ``z = mean + spread * u``, ``u`` uniform on the unit sphere.
    ``logistic_pairs``: ``x`` uniform in the unit ball, ``P(y = 1 | x) = sigmoid(<w_true, x>)``.
    """

    kind: str
    d: int
    mean: np.ndarray = field(default=None)
    spread: float = 0.5
    w_true: np.ndarray = field(default=None)

    KINDS = ("ball_uniform_mean_estimation", "sphere_points_norm_loss", "logistic_pairs")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}; choose from {self.KINDS}")
        for name in ("mean", "w_true"):
            v = getattr(self, name)
            v = np.zeros(self.d) if v is None else np.array(v, dtype=float).reshape(-1)
            if v.shape != (self.d,):
                raise ValueError(f"{name} must have length {self.d}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_params(cls, name: str, d: int, **params) -> "SyntheticDistribution":
        """Build from a flat parameter map (``mean_norm``, ``spread``, ``w_norm``)."""
        e1 = np.zeros(d)
        e1[0] = 1.0
        if name == "logistic_pairs":
            w_norm = float(params.pop("w_norm", 0.5))
            extra = set(params)
            if extra:
                raise ValueError(f"unknown parameters for {name}: {sorted(extra)}")
            return cls(name, d, w_true=w_norm * e1)
        mean_norm = float(params.pop("mean_norm", 0.5))
        spread = float(params.pop("spread", 0.5))
        if params:
            raise ValueError(f"unknown parameters for {name}: {sorted(params)}")
        return cls(name, d, mean=mean_norm * e1, spread=spread)

    @property
    def r_z(self) -> float:
        if self.kind == "logistic_pairs":
            return 1.0
        return float(np.linalg.norm(self.mean) + self.spread)

    @property
    def population_minimizer(self) -> np.ndarray:
        # symmetric shells/balls put the minimiser at the centre; the logistic
        # model is well specified so the true parameter minimises the log-loss
        return self.w_true if self.kind == "logistic_pairs" else self.mean

    @property
    def example_dim(self) -> int:
        return self.d + 1 if self.kind == "logistic_pairs" else self.d

    def sample_array(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "ball_uniform_mean_estimation":
            return self.mean + uniform_ball(rng, size, self.d, self.spread)
        if self.kind == "sphere_points_norm_loss":
            return self.mean + uniform_sphere(rng, size, self.d, self.spread)
        x = uniform_ball(rng, size, self.d, 1.0)
        p = _sigmoid(x @ self.w_true)
        y = np.where(rng.random(size) < p, 1.0, -1.0)
        return np.column_stack([x, y])

    def sample(self, n: int, rng) -> Dataset:
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        return Dataset(self.sample_array(n, gen))

    def default_loss(self, M: float = 1.0) -> LossFamily:
        if self.kind == "ball_uniform_mean_estimation":
            return squared_distance_loss(M, self.r_z, self.d)
        if self.kind == "sphere_points_norm_loss":
            return euclidean_norm_loss(self.d)
        return logistic_glm_loss(self.d)


def make_distribution(name: str, d: int, **params) -> SyntheticDistribution:
    return SyntheticDistribution.from_params(name, d, **params)


class Estimate(NamedTuple):
    value: float
    stderr: float = 0.0

    def __float__(self):
        return float(self.value)


EXACT_PAIRS = {("ball_uniform_mean_estimation", "squared_distance")}
MONTE_CARLO_PAIRS = {
    ("sphere_points_norm_loss", "euclidean_norm"),
    ("logistic_pairs", "logistic_glm"),
}
MC_SAMPLES = 100_000


def _mc_generator(rng) -> np.random.Generator:
    if rng is None:
        return np.random.default_rng(0)
    return rng.generator() if isinstance(rng, RngStream) else rng


def excess_population_loss(
    dist: SyntheticDistribution,
    loss: LossFamily,
    w,
    rng=None,
    samples: int = MC_SAMPLES,
    monte_carlo: bool = False,
) -> Estimate:
    """``L(w; D) - min_W L(.; D)`` with a standard error (0 for closed forms).

    Monte-Carlo estimates use the same fresh samples for ``w`` and for the
    minimiser, which keeps the standard error proportional to ``||w - w*||``.
    """
    w = np.asarray(w, dtype=float)
    pair = (dist.kind, loss.name)
    if pair in EXACT_PAIRS and not monte_carlo:
        return Estimate(0.5 * float(np.sum((w - dist.mean) ** 2)), 0.0)
    if pair not in EXACT_PAIRS | MONTE_CARLO_PAIRS and not monte_carlo:
        raise ValueError(
            f"no population-loss oracle for ({dist.kind}, {loss.name}); pass monte_carlo=True explicitly"
        )
    if samples < MC_SAMPLES:
        raise ValueError(f"Monte-Carlo mode needs at least {MC_SAMPLES} samples")
    Z = dist.sample_array(samples, _mc_generator(rng))
    if pair in EXACT_PAIRS | MONTE_CARLO_PAIRS:
        w_star = dist.population_minimizer
    else:
        # sample-average approximation of the unknown minimiser
        w_star = empirical_minimizer(loss, Dataset(Z), ConvexDomain.ball(dist.d, max(1.0, dist.r_z)))
    diff = loss.value(w, Z) - loss.value(w_star, Z)
    return Estimate(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(samples)))


def population_loss(
    dist: SyntheticDistribution, loss: LossFamily, w, rng=None, samples: int = MC_SAMPLES
) -> Estimate:
    """``L(w; D)`` itself, closed form where available."""
    w = np.asarray(w, dtype=float)
    if (dist.kind, loss.name) in EXACT_PAIRS:
        var = dist.spread**2 * dist.d / (dist.d + 2)
        return Estimate(0.5 * float(np.sum((w - dist.mean) ** 2)) + 0.5 * var, 0.0)
    Z = dist.sample_array(samples, _mc_generator(rng))
    vals = loss.value(w, Z)
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))


# ---------------------------------------------------------------------------
# empirical quantities
# ---------------------------------------------------------------------------


def empirical_loss(loss: LossFamily, S: Dataset, w) -> float:
    return float(np.mean(loss.value(np.asarray(w, dtype=float), S.examples)))


def _geometric_median(Z: np.ndarray, tol: float = 1e-13, max_iter: int = 10_000) -> np.ndarray:
    # Weiszfeld with the Vardi-Zhang fix for iterates landing on a data point
    y = Z.mean(axis=0)
    for _ in range(max_iter):
        diff = Z - y
        dist = np.linalg.norm(diff, axis=1)
        at = dist < 1e-15
        if at.all():
            return y
        inv = 1.0 / np.where(at, 1.0, dist)
        inv[at] = 0.0
        T = (Z * inv[:, None]).sum(axis=0) / inv.sum()
        if at.any():
            R = (diff * inv[:, None]).sum(axis=0)
            r = np.linalg.norm(R)
            eta = at.sum()
            if r <= eta:
                return y
            gamma = min(1.0, eta / r)
            T = (1 - gamma) * T + gamma * y
        if np.linalg.norm(T - y) < tol:
            return T
        y = T
    return y


def empirical_minimizer(loss: LossFamily, S: Dataset, domain: ConvexDomain) -> np.ndarray:
    """``argmin_W`` of the empirical loss."""
    Z = S.examples
    if loss.name == "squared_distance":
        return project(domain, Z.mean(axis=0))
    if loss.name == "euclidean_norm":
        # the geometric median lies in the convex hull of the data
        med = _geometric_median(Z)
        if domain.contains(med, slack=1e-9):
            return project(domain, med)
    if not loss.is_smooth and loss.name != "euclidean_norm":
        raise ValueError(f"no empirical minimiser available for non-smooth loss {loss.name}")

    c, M = domain.center, domain.radius
    res = optimize.minimize(
        lambda w: np.mean(loss.value(w, Z)),
        project(domain, Z[:, : loss.dim].mean(axis=0)),
        jac=lambda w: np.mean(loss.subgrad(w, Z), axis=0),
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda w: M * M - np.sum((w - c) ** 2), "jac": lambda w: -2 * (w - c)}],
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return project(domain, res.x)


def excess_empirical_loss(loss: LossFamily, S: Dataset, w, domain: ConvexDomain, w_min=None) -> float:
    if w_min is None:
        w_min = empirical_minimizer(loss, S, domain)
    return max(0.0, empirical_loss(loss, S, w) - empirical_loss(loss, S, w_min))


def hessian_rank(loss: LossFamily, w, z, tol: float = 1e-10) -> int:
    H = loss.hessian(w, z) if loss.hessian is not None else finite_diff_hessian(loss, w, z)
    eig = np.linalg.eigvalsh(H)
    return int(np.sum(np.abs(eig) > tol))


def default_domain(dist: SyntheticDistribution, M: float = 1.0) -> ConvexDomain:
    if dist.kind != "logistic_pairs" and dist.r_z > M + 1e-12:
        raise PreconditionError(f"data radius {dist.r_z} exceeds domain radius {M}")
    if np.linalg.norm(dist.population_minimizer) > M:
        raise PreconditionError("population minimiser lies outside the domain")
    return ConvexDomain.ball(dist.d, M)


__all__ = [
    "Estimate",
    "SyntheticDistribution",
    "default_domain",
    "empirical_loss",
    "empirical_minimizer",
    "euclidean_norm_loss",
    "excess_empirical_loss",
    "excess_population_loss",
    "hessian_rank",
    "logistic_glm_loss",
    "make_distribution",
    "population_loss",
    "prox_exact_norm",
    "squared_distance_loss",
]
