"""
Private mean estimation with noisy mini-batch SGD
=================================================

Draw a sample from a ball around an unknown mean, then estimate the mean
under (epsilon, delta) privacy.
"""

import numpy as np

from dpsco import RngStream, derive_nsgd_params, make_distribution, run_nsgd
from dpsco.bounds import nsgd_excess_bound
from dpsco.losses import default_domain

n, d, eps, delta = 2000, 10, 1.0, 1e-7

# the data lives in the unit ball, the loss is 0.5 ||w - z||^2
dist = make_distribution("ball_uniform_mean_estimation", d)
loss = dist.default_loss()
domain = default_domain(dist)
S = dist.sample(n, RngStream(0).child("data"))

# every tuning knob follows from (n, d, eps, delta, L, M)
params = derive_nsgd_params(n, d, eps, delta, loss.lipschitz, domain.radius)
print(f"T={params.T} steps, batch m={params.m}, eta={params.eta:.4f}, noise variance={params.sigma2:.3e}")

res = run_nsgd(loss, S, domain, params, rng=RngStream(0).child("algo"), dist=dist)
print("private estimate   ", np.round(res.output[:4], 3), "...")
print("true mean          ", np.round(dist.mean[:4], 3), "...")
print(f"excess population loss {res.excess_pop:.2e}  (guarantee {nsgd_excess_bound(n, d, eps, delta, loss.lipschitz, 1.0):.2e})")

# the same run with the noise switched off is tagged so it cannot be mistaken for a private one
quiet = derive_nsgd_params(n, d, eps, delta, loss.lipschitz, 1.0, noise_off=True)
ref = run_nsgd(loss, S, domain, quiet, rng=RngStream(0).child("algo"), dist=dist)
print("noise-free run tags:", ref.tags)
