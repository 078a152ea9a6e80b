"""Moreau-envelope smoothing and noisy SGD on approximate envelope gradients.

For a convex ``f`` and ``beta > 0`` the envelope is
``f_beta(w) = min_v f(v) + beta/2 ||w - v||^2`` and its gradient is
``beta * (w - prox_{f/beta}(w))``. The prox point is either taken from an
exact oracle carried by the loss or approximated by projected subgradient
descent on the 1-strongly convex ``g_w(v) = f(v)/beta + ||v - w||^2 / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    ConvexDomain,
    Dataset,
    LossFamily,
    PreconditionError,
    RngStream,
    TrialResult,
    project,
    validate_budget,
)
from .losses import excess_empirical_loss, excess_population_loss, prox_exact_norm
from .nsgd import NON_PRIVATE, NsgdParams, derive_nsgd_params, noisy_projected_sgd

NON_CERTIFIED = "NON-CERTIFIED"


@dataclass(frozen=True)
class SmoothingParams:
    beta_smooth: float
    xi: float
    prox_max_iters: int
    L_eff: float
    certified: bool = True

    def with_cap(self, cap: int) -> "SmoothingParams":
        """Lower the inner iteration budget; anything below the certified count loses the tag."""
        cap = int(cap)
        if cap < 1:
            raise ValueError("prox iteration cap must be positive")
        return replace(self, prox_max_iters=cap, certified=self.certified and cap >= self.prox_max_iters)


def certified_prox_iters(M: float, xi: float) -> int:
    return math.ceil(8 * M * M / (xi * xi))


def derive_smoothing_params(n, d, epsilon, delta, L, M, prox_max_iters: Optional[int] = None) -> SmoothingParams:
    validate_budget(n, epsilon, delta)
    root = math.sqrt(d * math.log(1 / delta))
    beta = (L / M) * min(math.sqrt(n) / 4, epsilon * n / (8 * root))
    xi = 4 * (M / n) * max(2 * root / (epsilon * n), 1 / math.sqrt(n))
    params = SmoothingParams(beta_smooth=beta, xi=xi, prox_max_iters=certified_prox_iters(M, xi), L_eff=L * (1 + 1 / n))
    if prox_max_iters is not None and prox_max_iters < params.prox_max_iters:
        params = params.with_cap(prox_max_iters)
    return params


def derive_proxgd_params(n, d, epsilon, delta, L, M, noise_off=False, prox_max_iters=None):
    """Smoothing parameters plus SGD parameters whose noise uses ``L_eff = L (1 + 1/n)``."""
    smooth = derive_smoothing_params(n, d, epsilon, delta, L, M, prox_max_iters)
    return derive_nsgd_params(n, d, epsilon, delta, smooth.L_eff, M, noise_off=noise_off), smooth


# ---------------------------------------------------------------------------
# prox oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxMode:
    kind: str = "exact-oracle"
    cap: Optional[int] = None

    KINDS = ("exact-oracle", "certified-gd", "capped-gd")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown prox mode {self.kind!r}; choose from {self.KINDS}")
        if self.kind == "capped-gd" and (self.cap is None or self.cap < 1):
            raise ValueError("capped-gd needs a positive iteration cap, e.g. 'capped-gd:200'")

    @classmethod
    def parse(cls, text) -> "ProxMode":
        if isinstance(text, ProxMode):
            return text
        kind, _, cap = str(text).partition(":")
        kind = kind.strip()
        if kind == "capped-gd":
            try:
                return cls(kind, int(cap))
            except ValueError:
                raise ValueError(f"bad prox mode {text!r}; expected capped-gd:<iters>") from None
        if cap:
            raise ValueError(f"prox mode {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        return f"capped-gd:{self.cap}" if self.kind == "capped-gd" else self.kind


def approx_prox(
    loss: LossFamily,
    beta: float,
    w,
    z,
    xi: float,
    domain: ConvexDomain,
    cap: Optional[int] = None,
    return_info: bool = False,
):
    """Projected subgradient descent for ``prox_{f/beta}(w)`` over the domain.

    Runs ``tau = min(cap, ceil(8 M^2 / xi^2))`` steps with step size
    ``2 / (s + 1)`` and returns the ``s``-weighted average of the iterates.
    ``z`` may hold one example or a batch of rows (solved in parallel).
    With ``return_info`` the result is ``(point, tau, certified)``.
    """
    M = domain.radius
    if beta < loss.lipschitz / M:
        raise PreconditionError(f"approx_prox needs beta >= L/M = {loss.lipschitz / M:.6g}, got beta={beta:.6g}")
    budget = certified_prox_iters(M, xi)
    tau = budget if cap is None else max(1, min(int(cap), budget))
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    v = project(domain, np.broadcast_to(w, z.shape[:-1] + (w.shape[-1],)).copy())
    acc = np.zeros_like(v)
    for s in range(1, tau + 1):
        acc += s * v
        g = loss.subgrad(v, z) / beta + (v - w)
        v = project(domain, v - (2.0 / (s + 1)) * g)
    point = acc * (2.0 / (tau * (tau + 1)))
    if return_info:
        return point, tau, tau >= budget
    return point


def prox_point(loss: LossFamily, beta, w, z, domain, mode="exact-oracle", xi=None, cap=None):
    """Dispatch to the exact oracle or the descent solver; returns ``(v, evals, certified)``."""
    mode = ProxMode.parse(mode)
    z = np.asarray(z, dtype=float)
    k = 1 if z.ndim == 1 else z.shape[0]
    if mode.kind == "exact-oracle":
        if loss.prox is None:
            raise PreconditionError(f"{loss.name} has no exact prox oracle; use certified-gd or capped-gd")
        return loss.prox(w, z, beta), k, True
    if xi is None:
        raise ValueError("descent prox modes need the accuracy xi")
    limit = mode.cap if mode.kind == "capped-gd" else cap
    v, tau, certified = approx_prox(loss, beta, w, z, xi, domain, cap=limit, return_info=True)
    return v, k * tau, certified


def moreau_value(loss: LossFamily, z, beta, w, domain=None, mode="exact-oracle", xi=None, cap=None) -> np.ndarray:
    v, _, _ = prox_point(loss, beta, w, z, domain, mode, xi, cap)
    return loss.value(v, z) + 0.5 * beta * np.sum((np.asarray(w) - v) ** 2, axis=-1)


def moreau_grad(loss: LossFamily, z, beta, w, domain=None, mode="exact-oracle", xi=None, cap=None) -> np.ndarray:
    """``beta * (w - prox)``; off by at most ``beta * xi`` when the prox is approximate."""
    v, _, _ = prox_point(loss, beta, w, z, domain, mode, xi, cap)
    return beta * (np.asarray(w, dtype=float) - v)


def huber_envelope(w, z, beta):
    """Closed-form envelope of ``||. - z||`` and its gradient (test oracle)."""
    diff = np.asarray(w, dtype=float) - z
    r = np.linalg.norm(diff, axis=-1)
    inside = r <= 1 / beta
    value = np.where(inside, 0.5 * beta * r * r, r - 0.5 / beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(inside, beta, 1.0 / np.where(r > 0, r, 1.0))
    return value, diff * np.asarray(scale)[..., None]


def run_proxgd(
    loss: LossFamily,
    S: Dataset,
    domain: ConvexDomain,
    nsgd_params: NsgdParams,
    smoothing_params: SmoothingParams,
    w0=None,
    rng: Optional[RngStream] = None,
    *,
    prox_mode="exact-oracle",
    dist=None,
    evaluate: bool = True,
) -> TrialResult:
    """Noisy mini-batch SGD where each per-example gradient is an envelope gradient."""
    rng = rng or RngStream(0)
    mode = ProxMode.parse(prox_mode)
    beta, xi = smoothing_params.beta_smooth, smoothing_params.xi
    cap = smoothing_params.prox_max_iters
    Z = S.examples
    certified = [smoothing_params.certified]

    def batch_grad(w, idx):
        v, evals, ok = prox_point(loss, beta, w, Z[idx], domain, mode, xi, cap)
        certified[0] = certified[0] and ok
        return (beta * (w - v)).mean(axis=0), evals

    w_bar, evals = noisy_projected_sgd(batch_grad, S.n, domain, nsgd_params, w0, rng)
    result = TrialResult(
        output=w_bar, grad_evals=evals, seed=rng.root_seed, non_private=nsgd_params.noise_override_off
    )
    result.meta.update(prox_mode=str(mode), beta_smooth=beta, xi=xi)
    if nsgd_params.noise_override_off:
        result.tags.append(NON_PRIVATE)
    if mode.kind != "exact-oracle" and not certified[0]:
        result.tags.append(NON_CERTIFIED)
    if evaluate:
        result.excess_emp = excess_empirical_loss(loss, S, w_bar, domain)
        if dist is not None:
            result.excess_pop = excess_population_loss(dist, loss, w_bar, rng=rng.child("eval")).value
    return result


__all__ = [
    "NON_CERTIFIED",
    "ProxMode",
    "SmoothingParams",
    "approx_prox",
    "derive_proxgd_params",
    "derive_smoothing_params",
    "huber_envelope",
    "moreau_grad",
    "moreau_value",
    "prox_exact_norm",
    "prox_point",
    "run_proxgd",
]
