"""Closed-form guarantees, one routine per result.

All rate bounds share the two-regime factor
``max(sqrt(d log(1/delta)) / (eps n), 1/sqrt(n))``.
"""
from __future__ import annotations

import math


def rate_factor(n: int, d: int, epsilon: float, delta: float) -> float:
    return max(math.sqrt(d * math.log(1 / delta)) / (epsilon * n), 1 / math.sqrt(n))


def nsgd_excess_bound(n, d, epsilon, delta, L, M) -> float:
    return 10.0 * M * L * rate_factor(n, d, epsilon, delta)


def proxgd_excess_bound(n, d, epsilon, delta, L, M) -> float:
    return 24.0 * M * L * rate_factor(n, d, epsilon, delta)


def objpert_excess_bound(n, d, epsilon, delta, L, M) -> float:
    return 2.0 * M * L * math.sqrt(2 / n + 4 * d * math.log(1 / delta) / (epsilon**2 * n**2))


def objpert_app_excess_bound(n, d, epsilon, delta, L, M) -> float:
    """Exact-variant bound plus ``L * (E||H|| + sqrt(2 alpha / lambda))``.

    ``E||H||`` is bounded by ``sqrt(d * sigma_out^2)``; with
    ``alpha = M^2 lambda / n^2`` both extra terms are free of lambda.
    """
    log_inv = math.log(1 / delta)
    noise = M * math.sqrt(40 * d * log_inv) / (epsilon * n)
    opt_gap = M * math.sqrt(2.0) / n
    return objpert_excess_bound(n, d, epsilon, delta, L, M) + L * (noise + opt_gap)


def objpert_app_rate_bound(n, d, epsilon, delta, L, M, C: float = 4.0) -> float:
    """``C * M * L * rate_factor``; the hidden constant is not pinned by the theory."""
    return C * M * L * rate_factor(n, d, epsilon, delta)


def nsgd_empirical_bound(eta, T, L, M, sigma2=0.0, d=0) -> float:
    """Expected excess empirical loss of averaged projected noisy SGD."""
    return M * M / (2 * eta * T) + eta * L * L / 2 + eta * sigma2 * d


def nsgd_stability_bound(L, eta, T, n) -> float:
    """Uniform stability of noisy mini-batch SGD, ``L^2 eta (T + 1) / n``."""
    return L * L * eta * (T + 1) / n


def regularized_erm_stability_bound(rho, lam, n) -> float:
    return 2 * rho * rho / (lam * n)


def moreau_gap_bound(L, beta) -> float:
    return L * L / (2 * beta)


BOUNDS = {
    "nsgd": nsgd_excess_bound,
    "proxgd": proxgd_excess_bound,
    "objpert": objpert_excess_bound,
    "objpert-app": objpert_app_excess_bound,
}


def theory_bound(algo: str, n, d, epsilon, delta, L, M) -> float:
    try:
        fn = BOUNDS[algo]
    except KeyError:
        raise ValueError(f"no theory bound registered for {algo!r}") from None
    return fn(n, d, epsilon, delta, L, M)
