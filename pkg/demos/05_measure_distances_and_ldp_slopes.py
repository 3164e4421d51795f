"""Bounded-Lipschitz distances and empirical large-deviation slopes.

The bounded-Lipschitz (flat) distance is the exact optimum of a small
transport LP with unit creation/destruction cost: between point masses it
is min(|x - y|, 2), and it extends to flux measures of unequal mass.  The
second half estimates the exponential decay rate of an initial-data
exceedance by direct counting across particle numbers and compares the
fitted slope with the closed-form Cramer rate (d/2)(a - 1 - log a).
"""

import numpy as np

import kaclab as kl
from kaclab.engine import ParticleState
from kaclab.metrics import WeightedMeasure, bl_distance, estimate_ldp_rate, flux_distance

# --- distances --------------------------------------------------------

print("point masses:   d(delta_0, delta_x) = min(|x|, 2)")
for gap in (0.5, 1.0, 1.9, 3.0):
    a = WeightedMeasure([[0.0, 0, 0]], [1.0])
    b = WeightedMeasure([[gap, 0, 0]], [1.0])
    print(f"   |x| = {gap:3.1f}  ->  {bl_distance(a, b):.3f}")

ref = kl.ReferenceMeasure(3)
v1 = ref.sample(kl.make_rng(11), 4000)
v2 = ref.sample(kl.make_rng(12), 4000) * 1.4
mu = kl.empirical_measure(ParticleState(v1))
nu = kl.empirical_measure(ParticleState(v2))
print(f"\nempirical clouds, N = 4000, scales 1.0 vs 1.4: "
      f"BL distance = {bl_distance(mu, nu):.4f}")

cfg = kl.SimConfig(n=60, t_max=0.5, kernel=kl.Kernel.MAXWELL, seed=13)
short = kl.flux_measure(kl.simulate(cfg))
cfg = kl.SimConfig(n=60, t_max=0.25, kernel=kl.Kernel.MAXWELL, seed=13)
half = kl.flux_measure(kl.simulate(cfg))
print(f"flux measures (mass {short.total_mass:.3f} vs {half.total_mass:.3f}): "
      f"distance = {flux_distance(short, half):.4f}")

# --- an attainable exceedance slope ------------------------------------

a_level = 1.12
target = kl.legendre_psi_star(ref, a_level)
print(f"\nexceedance P(m2 > {a_level}) for Gaussian initial data; "
      f"Cramer rate psi*({a_level}) = {target:.5f}")
counts = []
for li, n in enumerate((50, 100, 200, 400)):
    rng = kl.make_rng(14, li)
    trials = 400_000
    hits = 0
    done = 0
    while done < trials:
        m = min(trials - done, max(1, 3_000_000 // (3 * n)))
        v = rng.standard_normal((m, n, 3)) / np.sqrt(3.0)
        m2 = np.einsum("rnd,rnd->r", v, v) / n
        hits += int(np.sum(m2 > a_level))
        done += m
    counts.append((n, hits, trials))
    print(f"   N = {n:4d}: {hits:7d} / {trials} hits")

slope, stderr = estimate_ldp_rate(counts)
print(f"fitted -slope = {-slope:.5f} +- {stderr:.5f}  vs  psi* = {target:.5f}")
print("(the fitted slope sits slightly above psi* at these N because the")
print(" subexponential prefactor still decays across the fitted range)")
