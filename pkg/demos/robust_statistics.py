"""
Robust statistics used by the server and the baselines
======================================================

Three attackers push their parameters far away from seven honest clients.
We look at what each aggregation rule does with that, and at the Hampel
cutoff the server uses on outlier scores.
"""
import numpy as np

from fedfg import baselines as bl
from fedfg.server import hampel_threshold, hellinger

rng = np.random.default_rng(1)
honest = rng.normal(1.0, 0.1, size=(7, 3))
attackers = np.full((3, 3), -20.0)
points = np.vstack([honest, attackers])
sizes = np.ones(10)

print("honest mean           ", honest.mean(0).round(3))
print("fedavg                ", bl.fedavg(points, sizes).round(3))
print("coordinate median     ", bl.coord_median(points).round(3))
print("trimmed mean (b=0.3)  ", bl.trimmed_mean(points, 0.3).round(3))
print("geometric median      ", bl.geometric_median(points).round(3))

# The median family stays inside the honest range, but it still leans
# toward the attackers: with 3 of 10 values pinned low, the median is a
# lower quantile of the honest values rather than their middle.

# --- Hampel rule --------------------------------------------------------------
# tau = median + gamma * 1.4826 * MAD; 1.4826 makes MAD estimate sigma for
# Gaussian data, so gamma=3 is a "three sigma" cutoff.
o = np.array([0.10, 0.11, 0.12, 0.90])
m, mad, tau = hampel_threshold(o, gamma=3.0)
print(f"\nscores {o}: median {m:.3f}, MAD {mad:.3f}, tau {tau:.4f}, flagged {np.flatnonzero(o > tau)}")

draws = rng.standard_normal(100_000)
print("1.4826 * MAD of N(0,1) draws: %.4f" % (1.4826 * hampel_threshold(draws, 3.0, 0.0)[1]))

# --- Hellinger distance ---------------------------------------------------------
print("\nHellinger([.5,.5],[1,0]) = %.4f" % hellinger([0.5, 0.5], [1.0, 0.0]))
print("Hellinger(onehot 0, onehot 1) = %.4f" % hellinger([1.0, 0.0], [0.0, 1.0]))
