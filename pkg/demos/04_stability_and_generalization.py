"""
Stability keeps the generalisation gap small
============================================

Swap one example and see how much the loss at a probe point moves. Then
compare how much an exact empirical minimiser and noisy SGD overfit when
the dimension is as large as the sample.
"""

from dpsco import RngStream, derive_nsgd_params, make_distribution, run_nsgd
from dpsco.analysis import estimate_uniform_stability, generalization_gap
from dpsco.bounds import nsgd_stability_bound
from dpsco.losses import default_domain, empirical_minimizer

n = d = 40
dist = make_distribution("ball_uniform_mean_estimation", d)
loss = dist.default_loss()
domain = default_domain(dist)
params = derive_nsgd_params(n, d, 1.0, 1 / n**2, loss.lipschitz, 1.0)


def nsgd(S, stream):
    return run_nsgd(loss, S, domain, params, rng=stream, evaluate=False).output


def erm(S, stream):
    return empirical_minimizer(loss, S, domain)


S = dist.sample(n, RngStream(3))
est = estimate_uniform_stability(nsgd, loss, S, -S[0], 50, RngStream(4))
bound = nsgd_stability_bound(loss.lipschitz, params.eta, params.T, n)
print(f"largest paired loss gap {est.mean_gap:+.2e} +- {est.stderr:.1e} at {est.probe}; bound {bound:.2e}")

for name, algo in (("empirical minimiser", erm), ("noisy SGD", nsgd)):
    g = generalization_gap(algo, dist, loss, n, 100, RngStream(5))
    print(f"{name:20s} generalisation gap {g.value:.4f} +- {g.stderr:.4f}")
