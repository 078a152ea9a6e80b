"""Stability, generalisation-gap and rate-curve measurements."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset, LossFamily, RngStream, TrialResult
from .harness import AlgoSpec, reduction_budget, row_theory_bound, run_trial
from .losses import Estimate, SyntheticDistribution, default_domain, empirical_loss, population_loss

Algorithm = Callable[[Dataset, RngStream], np.ndarray]


def _as_vector(out) -> np.ndarray:
    return np.asarray(out.output if isinstance(out, TrialResult) else out, dtype=float)


def _mean_se(x) -> "tuple[float, float]":
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class StabilityEstimate:
    """Largest mean probe-loss gap found over the sampled probes."""

    mean_gap: float
    stderr: float
    pairs: int
    probe: str
    per_probe: list = field(default_factory=list)

    def within(self, bound: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean_gap) <= bound + sigmas * self.stderr


def estimate_uniform_stability(
    algo: Algorithm,
    loss: LossFamily,
    S: Dataset,
    z_replacement,
    trials: int,
    rng: RngStream,
    index: int = 0,
    probes: Optional[Sequence] = None,
    n_random_probes: int = 10,
) -> StabilityEstimate:
    """Paired estimate of ``E[loss(A(S), z) - loss(A(S'), z)]``.

    ``S'`` replaces example ``index`` by ``z_replacement``. Both runs of a
    pair receive the same stream, so the algorithms' internal randomness is
    coupled. Probes default to the replacement example plus random rows of
    ``S``; the probe with the largest absolute mean gap is reported.
    """
    S_prime = S.replace(index, z_replacement)
    if probes is None:
        pick = rng.child("probes").generator().choice(S.n, size=min(n_random_probes, S.n), replace=False)
        probes = [np.asarray(z_replacement, dtype=float)] + [S[i] for i in pick]
        names = ["replacement"] + [f"S[{i}]" for i in pick]
    else:
        names = [f"probe[{j}]" for j in range(len(probes))]
    Zp = np.asarray(probes, dtype=float)
    gaps = np.empty((trials, len(Zp)))
    for t in range(trials):
        stream = rng.child("pair", t)
        w = _as_vector(algo(S, stream))
        w_prime = _as_vector(algo(S_prime, stream))
        gaps[t] = loss.value(w, Zp) - loss.value(w_prime, Zp)
    stats = [_mean_se(gaps[:, j]) for j in range(len(Zp))]
    best = int(np.argmax([abs(m) for m, _ in stats]))
    per_probe = [dict(probe=nm, mean=m, stderr=se) for nm, (m, se) in zip(names, stats)]
    return StabilityEstimate(stats[best][0], stats[best][1], trials, names[best], per_probe)


def generalization_gap(
    algo: Algorithm,
    dist: SyntheticDistribution,
    loss: LossFamily,
    n: int,
    trials: int,
    rng: RngStream,
) -> Estimate:
    """Mean and standard error of ``L(A(S); D) - L_hat(A(S); S)`` over fresh samples."""
    gaps = []
    for t in range(trials):
        stream = rng.child("trial", t)
        S = dist.sample(n, stream.child("data"))
        w = _as_vector(algo(S, stream.child("algo")))
        pop = population_loss(dist, loss, w, rng=stream.child("eval")).value
        gaps.append(pop - empirical_loss(loss, S, w))
    return Estimate(*_mean_se(gaps))


@dataclass
class ReductionResult:
    output: np.ndarray
    r: int
    inner_epsilon: float
    inner_delta: float
    resampled: Dataset


def erm_to_sco_reduction(
    sco_algo: Callable,
    S: Dataset,
    epsilon: float,
    delta: float,
    rng: RngStream,
    tracked_index: int = 0,
) -> ReductionResult:
    """Resample ``S`` with replacement and run an SCO algorithm under the tightened budget.

    ``sco_algo(T, epsilon, delta, rng)`` may return a vector or a
    ``TrialResult``. ``r`` counts how often ``tracked_index`` was drawn.
    """
    eps, dl = reduction_budget(epsilon, delta)
    idx = rng.child("resample").generator().integers(0, S.n, size=S.n)
    T = S.resample(idx)
    out = sco_algo(T, eps, dl, rng.child("inner"))
    return ReductionResult(_as_vector(out), int(np.sum(idx == tracked_index)), eps, dl, T)


def resample_hit_counts(n: int, resamples: int, rng: RngStream, index: int = 0, chunk: int = 1000) -> np.ndarray:
    """How many times ``index`` appears in each of ``resamples`` size-``n`` draws with replacement."""
    gen = rng.generator()
    counts = np.empty(resamples, dtype=np.int64)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        draws = gen.integers(0, n, size=(k, n))
        counts[start : start + k] = np.sum(draws == index, axis=1)
    return counts


# ---------------------------------------------------------------------------
# rate curves
# ---------------------------------------------------------------------------

RATE_COLUMNS = ("n", "d", "epsilon", "delta", "algorithm", "trials", "mean_excess_pop", "stderr", "theory_bound", "ratio")


@dataclass
class RateRow:
    n: int
    d: int
    epsilon: float
    delta: float
    algorithm: str
    trials: int
    mean_excess_pop: float
    stderr: float
    theory_bound: float

    @property
    def ratio(self) -> float:
        return self.mean_excess_pop / self.theory_bound


@dataclass
class RateCurve:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RATE_COLUMNS)
        for r in self.rows:
            writer.writerow([r.n, r.d, repr(r.epsilon), repr(r.delta), r.algorithm, r.trials,
                             repr(r.mean_excess_pop), repr(r.stderr), repr(r.theory_bound), repr(r.ratio)])
        return buf.getvalue()

    def is_monotone(self, inversions_allowed: int = 1, sigmas: float = 1.0) -> bool:
        """Non-increasing mean excess loss, tolerating a few inversions inside ``sigmas`` standard errors."""
        inversions = 0
        for a, b in zip(self.rows, self.rows[1:]):
            if b.mean_excess_pop > a.mean_excess_pop:
                tol = sigmas * math.hypot(a.stderr, b.stderr)
                if b.mean_excess_pop - a.mean_excess_pop > tol:
                    return False
                inversions += 1
        return inversions <= inversions_allowed


def rate_curve(
    spec,
    dist: SyntheticDistribution,
    loss: LossFamily,
    n_list: Sequence[int],
    d: int,
    epsilon: float,
    delta: float,
    trials: int,
    rng: RngStream,
    M: float = 1.0,
) -> RateCurve:
    """One row per ``n``: mean excess population loss over ``trials`` fresh samples and the theory bound."""
    spec = spec if isinstance(spec, AlgoSpec) else AlgoSpec(spec)
    domain = default_domain(dist, M)
    rows = []
    for n in n_list:
        vals = [
            run_trial(spec, dist, loss, domain, n, epsilon, delta, rng.child(n, t)).excess_pop
            for t in range(trials)
        ]
        mean, se = _mean_se(vals)
        bound = row_theory_bound(spec, n, d, epsilon, delta, loss.lipschitz, M)
        rows.append(RateRow(n, d, epsilon, delta, spec.name, trials, mean, se, bound))
    return RateCurve(rows)


__all__ = [
    "RateCurve",
    "RateRow",
    "ReductionResult",
    "StabilityEstimate",
    "erm_to_sco_reduction",
    "estimate_uniform_stability",
    "generalization_gap",
    "rate_curve",
    "reduction_budget",
    "resample_hit_counts",
]
