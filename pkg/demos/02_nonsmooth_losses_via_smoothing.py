"""
Non-smooth losses through the Moreau envelope
=============================================

The norm loss ||w - z|| has a kink, so plain noisy SGD gives no guarantee.
Replacing each loss by its envelope gives a smooth surrogate that is
uniformly close to it.
"""

import numpy as np

from dpsco import RngStream, make_distribution
from dpsco.bounds import proxgd_excess_bound
from dpsco.losses import default_domain
from dpsco.smoothing import derive_proxgd_params, huber_envelope, moreau_value, run_proxgd

# for the norm loss the envelope is the Huber function
loss = make_distribution("sphere_points_norm_loss", 2).default_loss()
z = np.zeros(2)
for r in (0.01, 0.1, 1.0):
    w = np.array([r, 0.0])
    print(f"|w|={r:5.2f}  envelope={float(moreau_value(loss, z, 4.0, w)):.5f}  huber={huber_envelope(w, z, 4.0)[0]:.5f}")

n, d, eps, delta = 1000, 5, 1.0, 1e-7
dist = make_distribution("sphere_points_norm_loss", d)
loss = dist.default_loss()
domain = default_domain(dist)
S = dist.sample(n, RngStream(1).child("data"))

sgd, smooth = derive_proxgd_params(n, d, eps, delta, loss.lipschitz, 1.0)
print(f"smoothing beta={smooth.beta_smooth:.3f}, prox accuracy xi={smooth.xi:.4f}, T={sgd.T}")

res = run_proxgd(loss, S, domain, sgd, smooth, rng=RngStream(1).child("algo"), dist=dist)
print(f"excess population loss {res.excess_pop:.3e}  (guarantee {proxgd_excess_bound(n, d, eps, delta, 1.0, 1.0):.3e})")
