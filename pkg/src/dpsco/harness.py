"""Uniform entry point for running any algorithm on a synthetic problem.

Used by the rate-curve helpers and by the command-line orchestrator so that
both derive parameters, seed streams and theory bounds the same way.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bounds
from .core import ConvexDomain, Dataset, LossFamily, RngStream, TrialResult, validate_budget
from .losses import SyntheticDistribution, excess_empirical_loss, excess_population_loss
from .nsgd import check_nsgd_smoothness_precondition, derive_nsgd_params, run_nsgd
from .objpert import derive_objpert_params, run_objpert_app, run_objpert_exact
from .smoothing import ProxMode, derive_proxgd_params, run_proxgd

ALGORITHMS = ("nsgd", "proxgd", "objpert", "objpert-app")
REDUCTION_PREFIX = "erm-reduction:"


def reduction_budget(epsilon: float, delta: float) -> "tuple[float, float]":
    """Budget handed to the inner algorithm of the ERM-from-SCO reduction."""
    log_term = math.log(2 / delta)
    return epsilon / (4 * log_term), math.exp(-epsilon) * delta / (8 * log_term)


@dataclass(frozen=True)
class AlgoSpec:
    name: str
    noise_off: bool = False
    prox_mode: str = "exact-oracle"
    tol: Optional[float] = None
    sensitivity_audit: bool = False

    def __post_init__(self):
        if self.inner not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}; choose from {ALGORITHMS} or {REDUCTION_PREFIX}<algo>")
        ProxMode.parse(self.prox_mode)

    @property
    def is_reduction(self) -> bool:
        return self.name.startswith(REDUCTION_PREFIX)

    @property
    def inner(self) -> str:
        return self.name[len(REDUCTION_PREFIX) :] if self.is_reduction else self.name

    def inner_budget(self, epsilon, delta):
        return reduction_budget(epsilon, delta) if self.is_reduction else (epsilon, delta)


def check_compatible(spec: AlgoSpec, loss: LossFamily) -> None:
    if spec.inner in ("nsgd", "objpert", "objpert-app") and not loss.is_smooth:
        raise ValueError(f"{spec.inner} needs a smooth loss; {loss.name} is non-smooth (use proxgd)")


def derived_params(spec: AlgoSpec, n, d, epsilon, delta, L, M) -> dict:
    eps, dl = spec.inner_budget(epsilon, delta)
    algo = spec.inner
    if algo == "nsgd":
        p = derive_nsgd_params(n, d, eps, dl, L, M, noise_off=spec.noise_off)
        out = dict(T=p.T, m=p.m, sigma2=p.sigma2, eta=p.eta)
    elif algo == "proxgd":
        p, s = derive_proxgd_params(n, d, eps, dl, L, M, noise_off=spec.noise_off)
        out = dict(T=p.T, m=p.m, sigma2=p.sigma2, eta=p.eta, beta_smooth=s.beta_smooth, xi=s.xi,
                   prox_max_iters=s.prox_max_iters, L_eff=s.L_eff)
    else:
        variant = "exact" if algo == "objpert" else "approximate"
        p = derive_objpert_params(n, d, eps, dl, L, M, variant)
        out = dict(lam=p.lam, sigma2_obj=p.sigma2_obj, alpha_opt=p.alpha_opt, sigma2_out=p.sigma2_out)
    if spec.is_reduction:
        out.update(inner_epsilon=eps, inner_delta=dl)
    return out


def row_theory_bound(spec: AlgoSpec, n, d, epsilon, delta, L, M) -> float:
    eps, dl = spec.inner_budget(epsilon, delta)
    return bounds.theory_bound(spec.inner, n, d, eps, dl, L, M)


def run_algorithm(
    spec: AlgoSpec,
    loss: LossFamily,
    S: Dataset,
    domain: ConvexDomain,
    epsilon: float,
    delta: float,
    rng: RngStream,
    *,
    evaluate: bool = True,
) -> TrialResult:
    """Run ``spec`` on ``S`` (excess_pop is left to the caller)."""
    check_compatible(spec, loss)
    n, d, M, L = S.n, domain.dim, domain.radius, loss.lipschitz
    if spec.is_reduction:
        eps, dl = reduction_budget(epsilon, delta)
        validate_budget(n, epsilon, delta)
        idx = rng.child("resample").generator().integers(0, n, size=n)
        inner = AlgoSpec(spec.inner, spec.noise_off, spec.prox_mode, spec.tol, spec.sensitivity_audit)
        result = run_algorithm(inner, loss, S.resample(idx), domain, eps, dl, rng.child("inner"), evaluate=False)
        result.meta["resample_hits_index0"] = int(np.sum(idx == 0))
        if evaluate:
            result.excess_emp = excess_empirical_loss(loss, S, result.output, domain)
        return result

    algo = spec.inner
    if algo == "nsgd":
        params = derive_nsgd_params(n, d, epsilon, delta, L, M, noise_off=spec.noise_off)
        if not check_nsgd_smoothness_precondition(loss, n, d, epsilon, delta, M):
            warnings.warn(f"{loss.name}: beta above the smoothness threshold; excess-loss guarantee void", stacklevel=2)
        return run_nsgd(loss, S, domain, params, rng=rng, evaluate=evaluate)
    if algo == "proxgd":
        params, smooth = derive_proxgd_params(n, d, epsilon, delta, L, M, noise_off=spec.noise_off)
        return run_proxgd(loss, S, domain, params, smooth, rng=rng, prox_mode=spec.prox_mode, evaluate=evaluate)
    if algo == "objpert":
        params = derive_objpert_params(n, d, epsilon, delta, L, M, "exact")
        return run_objpert_exact(loss, S, domain, params, rng, tol=spec.tol, epsilon=epsilon,
                                 noise_off=spec.noise_off, evaluate=evaluate)
    params = derive_objpert_params(n, d, epsilon, delta, L, M, "approximate")
    return run_objpert_app(loss, S, domain, params, rng, epsilon=epsilon, noise_off=spec.noise_off,
                           evaluate=evaluate, reference=spec.sensitivity_audit)


def trial_stream(root_seed: int, n: int, trial: int) -> RngStream:
    return RngStream(root_seed).child(n, trial)


def run_trial(
    spec: AlgoSpec,
    dist: SyntheticDistribution,
    loss: LossFamily,
    domain: ConvexDomain,
    n: int,
    epsilon: float,
    delta: float,
    stream: RngStream,
) -> TrialResult:
    """Fresh dataset from ``stream/'data'``, algorithm on ``stream/'algo'``, oracle on ``stream/'eval'``."""
    S = dist.sample(n, stream.child("data"))
    result = run_algorithm(spec, loss, S, domain, epsilon, delta, stream.child("algo"))
    result.excess_pop = excess_population_loss(dist, loss, result.output, rng=stream.child("eval")).value
    result.seed = stream.root_seed
    return result
