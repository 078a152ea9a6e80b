"""Mini-batch noisy projected SGD for smooth convex losses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    ConvexDomain,
    Dataset,
    LossFamily,
    NumericalError,
    PreconditionError,
    RngStream,
    TrialResult,
    project,
    validate_budget,
)
from .losses import excess_empirical_loss, excess_population_loss

NON_PRIVATE = "NON-PRIVATE"


@dataclass(frozen=True)
class NsgdParams:
    T: int
    m: int
    sigma2: float
    eta: float
    noise_override_off: bool = False

    def __post_init__(self):
        if self.T < 1 or self.m < 1:
            raise ValueError(f"T and m must be at least 1 (T={self.T}, m={self.m})")
        if self.sigma2 < 0 or not self.eta > 0:
            raise ValueError("sigma2 must be nonnegative and eta positive")

    @property
    def noise_variance(self) -> float:
        return 0.0 if self.noise_override_off else self.sigma2


def derive_nsgd_params(n, d, epsilon, delta, L, M, noise_off: bool = False) -> NsgdParams:
    """Iteration count, batch size, noise variance and step size for ``(n, d, eps, delta)``.

    ``T = min(n/8, eps^2 n^2 / (32 d log(1/delta)))`` and
    ``m = n sqrt(eps / (4T))`` are floored with a floor of 1; the noise
    variance ``8 T L^2 log(1/delta) / (n eps)^2`` and step ``M / (L sqrt(T))``
    use the integer ``T``.
    """
    validate_budget(n, epsilon, delta)
    log_inv = math.log(1 / delta)
    T = max(1, math.floor(min(n / 8, epsilon**2 * n**2 / (32 * d * log_inv))))
    m = max(1, math.floor(n * math.sqrt(epsilon / (4 * T))))
    m = min(m, n)
    sigma2 = 8 * T * L * L * log_inv / (n**2 * epsilon**2)
    eta = M / (L * math.sqrt(T))
    return NsgdParams(T=T, m=m, sigma2=sigma2, eta=eta, noise_override_off=noise_off)


def smoothness_threshold(n, d, epsilon, delta, L, M) -> float:
    log_inv = math.log(1 / delta)
    return (L / M) * min(math.sqrt(n / 2), epsilon * n / (2 * math.sqrt(2 * d * log_inv)))


def check_nsgd_smoothness_precondition(loss: LossFamily, n, d, epsilon, delta, M) -> bool:
    """Whether ``beta`` is small enough for the excess-loss guarantee to apply.

    A ``False`` answer voids the guarantee, not the privacy of the mechanism.
    """
    if not loss.is_smooth:
        raise PreconditionError(
            f"{loss.name} is non-smooth; run it through dpsco.smoothing (Moreau envelope) instead"
        )
    return loss.smoothness <= smoothness_threshold(n, d, epsilon, delta, loss.lipschitz, M)


BatchGrad = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, int]"]


def noisy_projected_sgd(
    batch_grad: BatchGrad,
    n: int,
    domain: ConvexDomain,
    params: NsgdParams,
    w0: Optional[np.ndarray],
    rng: RngStream,
) -> "tuple[np.ndarray, int]":
    """Shared loop: returns ``(average of w_1..w_T, gradient evaluations)``.

    Batch indices and noise come from streams keyed by the trial only, so two
    runs on neighbouring datasets see the same indices and the same noise.
    """
    d = domain.dim
    w = domain.center.copy() if w0 is None else np.array(w0, dtype=float)
    if w.shape != (d,):
        raise ValueError(f"dimension mismatch: w0 has shape {w.shape}, domain dimension is {d}")
    indices = rng.child("batch").generator().integers(0, n, size=(params.T, params.m))
    var = params.noise_variance
    if var > 0:
        noise = rng.child("noise").generator().normal(0.0, math.sqrt(var), size=(params.T, d))
    else:
        noise = np.zeros((params.T, d))

    total = np.zeros(d)
    evals = 0
    for t in range(params.T):
        g, k = batch_grad(w, indices[t])
        evals += k
        w = project(domain, w - params.eta * (g + noise[t]))
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"non-finite iterate at iteration {t + 1}")
        total += w
    return total / params.T, evals


def run_nsgd(
    loss: LossFamily,
    S: Dataset,
    domain: ConvexDomain,
    params: NsgdParams,
    w0=None,
    rng: Optional[RngStream] = None,
    *,
    dist=None,
    evaluate: bool = True,
) -> TrialResult:
    """Run noisy mini-batch SGD and return the averaged iterate.

    Parameters
    ----------
    loss : LossFamily
        Smooth loss with certified Lipschitz constant.
    S : Dataset
        Private sample.
    domain : ConvexDomain
        Feasible ball; ``w0`` defaults to its centre.
    params : NsgdParams
        Usually from :func:`derive_nsgd_params`.
    rng : RngStream
        Source of batch indices and Gaussian noise.
    dist : SyntheticDistribution, optional
        When given, ``excess_pop`` is filled from the population oracle.
    evaluate : bool
        Skip the excess-loss evaluations (used by stability estimators).
    """
    rng = rng or RngStream(0)
    Z = S.examples
    if loss.dim != domain.dim:
        raise ValueError(f"dimension mismatch: loss has d={loss.dim}, domain has d={domain.dim}")

    def batch_grad(w, idx):
        return loss.gradient(w, Z[idx]).mean(axis=0), idx.shape[0]

    w_bar, evals = noisy_projected_sgd(batch_grad, S.n, domain, params, w0, rng)
    result = TrialResult(output=w_bar, grad_evals=evals, seed=rng.root_seed, non_private=params.noise_override_off)
    if params.noise_override_off:
        result.tags.append(NON_PRIVATE)
    if loss.is_smooth:
        result.meta["eta_beta"] = params.eta * loss.smoothness
    if evaluate:
        result.excess_emp = excess_empirical_loss(loss, S, w_bar, domain)
        if dist is not None:
            result.excess_pop = excess_population_loss(dist, loss, w_bar, rng=rng.child("eval")).value
    return result
