"""
Filtering and smoothing a saturated Wiener system
=================================================

Simulate the first preset, run the Gaussian sum filter and smoother, and
compare both against the extended Kalman filter/smoother on the same data.
"""

import numpy as np

from wienerqgs import example, simulate, smooth
from wienerqgs.baselines import build_extended_system, ekf, eks

model, g = example("example1")
traj = simulate(model, g, 100, seed=0)

# %%
# Forward pass, backward pass, and their combination in one call.
fwd, bwd, sm = smooth(model, g, traj.y, traj.u)
filt_mean, _ = fwd.moments()
smooth_mean, smooth_cov = sm.moments()

ext = build_extended_system(model)
ek = ekf(ext, g, traj.y, traj.u)
es_mean, _ = eks(ek, ext)
n = model.n


def mse(est):
    return float(np.mean(np.sum((est - traj.x) ** 2, axis=1)))


print("filter   QGSF %.4f   EKF %.4f" % (mse(filt_mean), mse(ek.state_means())))
print("smoother QGSS %.4f   EKS %.4f" % (mse(smooth_mean), mse(es_mean[:, :n])))

# %%
# The filtered mixtures stay within the component cap.
sizes = [len(s.filtered) for s in fwd.states]
print("components per step: min %d max %d" % (min(sizes), max(sizes)))

# %%
# A few smoothed estimates with 2-sigma bands.
for t in (10, 50, 90):
    sd = np.sqrt(smooth_cov[t, 0, 0])
    print("t=%3d  x=%+.3f  smoothed=%+.3f +/- %.3f" % (t + 1, traj.x[t, 0], smooth_mean[t, 0], 2 * sd))
