"""Objective perturbation: exact minimisation and the SVRG-based approximate variant.

The perturbed objective is
``J(w; S) = mean_i loss(w, z_i) + <G, w>/n + lam * ||w||^2``
with the regulariser *not* divided by ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import (
    ConvergenceError,
    ConvexDomain,
    Dataset,
    LossFamily,
    NumericalError,
    PreconditionError,
    RngStream,
    TrialResult,
    finite_diff_hessian,
    project,
    sample_gaussian,
    validate_budget,
)
from .losses import excess_empirical_loss, excess_population_loss
from .nsgd import NON_PRIVATE
from .smoothing import NON_CERTIFIED


@dataclass(frozen=True)
class ObjPertParams:
    lam: float
    sigma2_obj: float
    alpha_opt: float
    sigma2_out: float
    variant: str = "exact"


def derive_objpert_params(n, d, epsilon, delta, L, M, variant: str = "exact") -> ObjPertParams:
    if variant not in ("exact", "approximate"):
        raise ValueError(f"variant must be 'exact' or 'approximate', got {variant!r}")
    validate_budget(n, epsilon, delta)
    log_inv = math.log(1 / delta)
    lam = (2 * L / M) * math.sqrt(2 / n + 4 * d * log_inv / (epsilon**2 * n**2))
    scale = 10 if variant == "exact" else 20
    alpha = M * M * lam / n**2
    return ObjPertParams(
        lam=lam,
        sigma2_obj=scale * L * L * log_inv / epsilon**2,
        alpha_opt=alpha,
        sigma2_out=40 * alpha * log_inv / (lam * epsilon**2),
        variant=variant,
    )


# ---------------------------------------------------------------------------
# privacy preconditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreconditionReport:
    smoothness_ok: bool
    rank_ok: bool
    det_condition_ok: bool

    @property
    def certified(self) -> bool:
        return self.smoothness_ok and (self.rank_ok or self.det_condition_ok)


def hessian_det_condition_check(loss: LossFamily, lam: float, epsilon: float, pairs: Iterable) -> bool:
    """Sampled audit of ``|det(I + Hess / lam)| <= exp(eps / 2)``.

    Passing is evidence, not proof: only the supplied ``(w, z)`` pairs are checked.
    """
    limit = math.exp(epsilon / 2)
    for w, z in pairs:
        w = np.asarray(w, dtype=float)
        H = loss.hessian(w, np.asarray(z)) if loss.hessian is not None else finite_diff_hessian(loss, w, z)
        _, logdet = np.linalg.slogdet(np.eye(w.shape[0]) + H / lam)
        if logdet > epsilon / 2 + 1e-12 * max(1.0, math.log(limit)):
            return False
    return True


def check_objpert_preconditions(loss: LossFamily, n, epsilon, lam, pairs=None) -> PreconditionReport:
    if not loss.is_smooth:
        raise PreconditionError(f"{loss.name} is non-smooth; objective perturbation needs a finite beta")
    smooth_ok = loss.smoothness <= epsilon * n * lam
    rank_ok = loss.hessian_rank_hint is not None and loss.hessian_rank_hint <= 1
    det_ok = pairs is not None and hessian_det_condition_check(loss, lam, epsilon, pairs)
    return PreconditionReport(smooth_ok, rank_ok, det_ok)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbedObjective:
    loss: LossFamily
    S: Dataset
    G: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return self.S.n

    @property
    def smoothness(self) -> float:
        return self.loss.smoothness + 2 * self.lam

    @property
    def strong_convexity(self) -> float:
        return 2 * self.lam + self.loss.strong_convexity

    def value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(np.mean(self.loss.value(w, self.S.examples)) + self.G @ w / self.n + self.lam * (w @ w))

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.loss.gradient(w, self.S.examples).mean(axis=0) + self.G / self.n + 2 * self.lam * w

    def component_gradients(self, w, idx) -> np.ndarray:
        """Gradients of ``f_i(w) = loss(w, z_i) + <G, w>/n + lam ||w||^2`` for ``i`` in ``idx``."""
        w = np.asarray(w, dtype=float)
        return self.loss.gradient(w, self.S.examples[idx]) + self.G / self.n + 2 * self.lam * w


def perturbed_objective_value_and_grad(obj: PerturbedObjective, w):
    return obj.value(w), obj.gradient(w)


def gap_certificate(w, grad, domain: ConvexDomain, mu: float) -> float:
    """Upper bound on ``J(w) - min_W J`` for a ``mu``-strongly convex ``J``.

    Uses the minimum-norm element ``s`` of ``grad + N_W(w)``: strong
    convexity gives ``J(w) - J* <= ||s||^2 / (2 mu)``.
    """
    offset = np.asarray(w) - domain.center
    r = np.linalg.norm(offset)
    s = np.asarray(grad, dtype=float)
    if r >= domain.radius * (1 - 1e-12):
        u = offset / r
        s = s + max(0.0, -float(s @ u)) * u
    return float(s @ s) / (2 * mu)


def minimize_perturbed(obj: PerturbedObjective, domain: ConvexDomain, tol: float, w0=None, max_iter: int = 200_000):
    """Projected gradient descent to certified objective accuracy ``tol``.

    Returns ``(w, certificate, gradient evaluations)``.
    """
    step = 1.0 / obj.smoothness
    mu = obj.strong_convexity
    w = domain.center.copy() if w0 is None else project(domain, w0)
    g = obj.gradient(w)
    cert = gap_certificate(w, g, domain, mu)
    for it in range(max_iter):
        if cert <= tol:
            return w, cert, (it + 1) * obj.n
        w = project(domain, w - step * g)
        g = obj.gradient(w)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {it + 1}")
        cert = gap_certificate(w, g, domain, mu)
    raise ConvergenceError(f"objective accuracy {tol:g} not reached in {max_iter} iterations", achieved_gap=cert)


# ---------------------------------------------------------------------------
# SVRG
# ---------------------------------------------------------------------------


@dataclass
class SvrgResult:
    w: np.ndarray
    epochs: int
    grad_evals: int
    epoch_length: int
    certificate: float = math.nan
    anchors: list = field(default_factory=list)


def svrg(
    obj,
    domain: ConvexDomain,
    beta: float,
    lam: float,
    rng: RngStream,
    epochs: Optional[int] = None,
    tol: Optional[float] = None,
    y1=None,
    mu_cert: Optional[float] = None,
    max_epochs: int = 500,
) -> SvrgResult:
    """Projected SVRG with epoch averaging.

    ``obj`` exposes ``n``, ``gradient(w)`` and ``component_gradients(w, idx)``.
    Each epoch computes the full gradient at the anchor ``y``, runs
    ``k = ceil(20 beta / lam)`` corrected steps of size ``1/(10 beta)`` and
    takes the average of ``w_1..w_k`` as the next anchor. With ``epochs``
    the loop runs that many epochs; with ``tol`` it stops at the first anchor
    whose gap certificate (strong convexity ``mu_cert``, default ``lam``)
    is at most ``tol``.
    """
    if epochs is None and tol is None:
        raise ValueError("give either a fixed epoch count or a target accuracy")
    k = math.ceil(20 * beta / lam - 1e-9)
    step = 1.0 / (10 * beta)
    mu = lam if mu_cert is None else mu_cert
    n = obj.n
    y = domain.center.copy() if y1 is None else project(domain, y1)
    evals = 0
    anchors = [y.copy()]
    limit = epochs if epochs is not None else max_epochs
    cert = math.nan
    for t in range(limit + 1):
        full = obj.gradient(y)
        evals += n
        if tol is not None:
            cert = gap_certificate(y, full, domain, mu)
            if cert <= tol:
                return SvrgResult(y, t, evals, k, cert, anchors)
        if t == limit:
            break
        idx = rng.child("svrg", t).generator().integers(0, n, size=k)
        w = y.copy()
        acc = np.zeros_like(y)
        for s in range(k):
            acc += w
            i = idx[s : s + 1]
            corr = obj.component_gradients(w, i)[0] - obj.component_gradients(y, i)[0] + full
            w = project(domain, w - step * corr)
        evals += 2 * k
        y = acc / k
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite SVRG anchor after epoch {t + 1}")
        anchors.append(y.copy())
    if epochs is None:
        raise ConvergenceError(f"SVRG did not certify accuracy {tol:g} in {max_epochs} epochs", achieved_gap=cert)
    # the last full gradient belongs to the returned anchor and is not part of the t-epoch cost
    return SvrgResult(y, limit, evals - n, k, cert, anchors)


# ---------------------------------------------------------------------------
# algorithms
# ---------------------------------------------------------------------------


def _draw_G(params: ObjPertParams, d: int, rng: RngStream, noise_off: bool) -> np.ndarray:
    return sample_gaussian(d, 0.0 if noise_off else params.sigma2_obj, rng.child("G"))


def _finish(result, loss, S, domain, params, epsilon, dist, rng, evaluate, noise_off, pairs):
    if epsilon is not None:
        report = check_objpert_preconditions(loss, S.n, epsilon, params.lam, pairs)
        result.meta["preconditions"] = report
        if not report.certified:
            result.tags.append(NON_CERTIFIED)
    if noise_off:
        result.non_private = True
        result.tags.append(NON_PRIVATE)
    if evaluate:
        result.excess_emp = excess_empirical_loss(loss, S, result.output, domain)
        if dist is not None:
            result.excess_pop = excess_population_loss(dist, loss, result.output, rng=rng.child("eval")).value
    return result


def run_objpert_exact(
    loss: LossFamily,
    S: Dataset,
    domain: ConvexDomain,
    params: ObjPertParams,
    rng: Optional[RngStream] = None,
    tol: Optional[float] = None,
    *,
    epsilon: Optional[float] = None,
    noise_off: bool = False,
    dist=None,
    evaluate: bool = True,
    pairs=None,
    G=None,
) -> TrialResult:
    """Minimise the perturbed objective to accuracy ``tol`` (default ``alpha_opt * 1e-3``).

    ``epsilon`` enables the privacy precondition report; ``G`` pins the
    perturbation (used to pair runs on neighbouring datasets).
    """
    rng = rng or RngStream(0)
    tol = params.alpha_opt * 1e-3 if tol is None else tol
    if G is None:
        G = _draw_G(params, domain.dim, rng, noise_off)
    obj = PerturbedObjective(loss, S, np.asarray(G, dtype=float), params.lam)
    w, cert, evals = minimize_perturbed(obj, domain, tol)
    result = TrialResult(output=w, grad_evals=evals, seed=rng.root_seed)
    result.meta.update(tolerance=tol, certificate=cert, G_norm=float(np.linalg.norm(G)))
    if tol > params.alpha_opt * 1e-3:
        result.meta["tolerance_above_default"] = True
    return _finish(result, loss, S, domain, params, epsilon, dist, rng, evaluate, noise_off, pairs)


def run_objpert_app(
    loss: LossFamily,
    S: Dataset,
    domain: ConvexDomain,
    params: ObjPertParams,
    rng: Optional[RngStream] = None,
    *,
    epsilon: Optional[float] = None,
    noise_off: bool = False,
    dist=None,
    evaluate: bool = True,
    reference: bool = False,
    pairs=None,
    max_epochs: int = 500,
) -> TrialResult:
    """Perturb, optimise with SVRG to accuracy ``alpha_opt``, add output noise, project.

    With ``reference`` a high-accuracy minimiser ``w1_ref`` (tolerance
    ``alpha_opt * 1e-4``) is computed and ``||w2 - w1_ref||`` recorded in
    ``meta['sensitivity_gap']`` next to ``sqrt(2 alpha / lam)``.
    """
    rng = rng or RngStream(0)
    d = domain.dim
    G = _draw_G(params, d, rng, noise_off)
    obj = PerturbedObjective(loss, S, G, params.lam)
    beta = loss.smoothness + 2 * params.lam
    res = svrg(obj, domain, beta, params.lam, rng, tol=params.alpha_opt, mu_cert=obj.strong_convexity, max_epochs=max_epochs)
    H = sample_gaussian(d, 0.0 if noise_off else params.sigma2_out, rng.child("H"))
    result = TrialResult(output=project(domain, res.w + H), grad_evals=res.grad_evals, seed=rng.root_seed)
    result.meta.update(epochs=res.epochs, epoch_length=res.epoch_length, certificate=res.certificate, w2=res.w)
    if reference:
        w_ref, _, _ = minimize_perturbed(obj, domain, params.alpha_opt * 1e-4, w0=res.w)
        result.meta["sensitivity_gap"] = float(np.linalg.norm(res.w - w_ref))
        result.meta["sensitivity_bound"] = math.sqrt(2 * params.alpha_opt / params.lam)
    return _finish(result, loss, S, domain, params, epsilon, dist, rng, evaluate, noise_off, pairs)


__all__ = [
    "ObjPertParams",
    "PerturbedObjective",
    "PreconditionReport",
    "SvrgResult",
    "check_objpert_preconditions",
    "derive_objpert_params",
    "gap_certificate",
    "hessian_det_condition_check",
    "minimize_perturbed",
    "perturbed_objective_value_and_grad",
    "run_objpert_app",
    "run_objpert_exact",
    "svrg",
]
