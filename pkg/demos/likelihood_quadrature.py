"""
The quadrature likelihood as a Gaussian mixture
===============================================

The measurement likelihood of a Wiener system is a non-Gaussian function of
the linear output.  Gauss-Legendre quadrature rewrites it as a weighted sum
of Gaussians; this script shows how the approximation improves with order.
"""

import numpy as np

from wienerqgs import example, legendre_rule, likelihood_mixture
from wienerqgs.nonlinearity import output_gpdf

rule = legendre_rule(5)
print("5-point rule nodes  ", np.round(rule.nodes, 6))
print("5-point rule weights", np.round(rule.weights, 6))

model, g = example("example2")
r_mean = 0.5

# %%
# Brute-force reference: integrate the noisy output density over z.
from scipy.integrate import quad

density, masses = output_gpdf(g, r_mean, model.R)


def reference(y):
    def noise(z):
        return np.exp(-0.5 * (y - z) ** 2 / model.P) / np.sqrt(2 * np.pi * model.P)
    f = lambda z: density(z) * noise(z)
    val = sum(quad(f, a, b, limit=400)[0] for a, b in ((-np.inf, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, np.inf)))
    return val + sum(p * noise(level) for level, p in masses)


# %%
# Far from z = 0 the error falls quickly with L.  Near z = 0 the square
# branch puts a square-root singularity into the output density and the
# error no longer decreases monotonically.
for y in (3.0, 0.8):
    ref = reference(y)
    print("y = %.1f" % y)
    for L in (2, 5, 10, 20, 40):
        lik = likelihood_mixture(model, g, y, L)
        approx = float(np.exp(lik.log_likelihood(r_mean, model.R)))
        print("  L=%2d  components=%3d  relative error %.2e" % (L, len(lik), abs(approx - ref) / ref))
