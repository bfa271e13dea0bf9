"""Capped costs and exact optimal transport between small clouds.

Run with ``python3 demos/01_transport_costs.py``.
"""

import textwrap

import numpy as np

from fpklab.analysis import rescale_cloud
from fpklab.cost import capped_power
from fpklab.measures import ParticleCloud
from fpklab.transport import dual_value, kantorovich, kantorovich_bruteforce

# %% two three-point clouds on the line
mu = ParticleCloud.uniform([[0.0], [1.0], [3.0]])
sigma = ParticleCloud.uniform([[0.5], [2.0], [2.2]])

for p in (1.0, 2.0):
    h = capped_power(p)
    res = kantorovich(h, mu, sigma)
    print(f"h = min(r^{p:g}, 1): C_h = {res.cost:.6f}, brute force {kantorovich_bruteforce(h, mu, sigma):.6f}")
    print("  plan (rows mu, columns sigma):")
    print(textwrap.indent(np.array2string(res.plan.matrix, precision=3), "    "))
    print(f"  dual value {dual_value(res.duals, mu, sigma, h):.6f}, gap {res.gap:.1e}")

# %% the cap: far-apart clouds cost at most sup h = 1
far = mu.map_points(lambda x: x + 100.0)
print("\ncost against a cloud shifted by 100:", kantorovich(capped_power(2.0), mu, far).cost)

# %% shrinking space by e^{-lam t} is the same as rescaling the cost
lam, t = 0.4, 1.5
h = capped_power(2.0)
a = kantorovich(h, rescale_cloud(mu, lam, t), rescale_cloud(sigma, lam, t)).cost
b = kantorovich(h.rescaled(lam * t), mu, sigma).cost
print(f"\nrescaled clouds {a:.12f} vs rescaled cost {b:.12f}")
