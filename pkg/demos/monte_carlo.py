"""
A small Monte Carlo comparison
==============================

Runs a handful of independent trajectories of the third preset and
reports the median state MSE of each estimator, the same table the
``wienerqgs mc`` command writes to disk.
"""

import numpy as np

from wienerqgs import config, experiments

cfg = config.from_dict({
    "model": "example3",
    "N": 100,
    "runs": 10,
    "seed": 0,
    "algos": ["qgsf", "qgss", "ekf", "eks", "pf"],
})
rep = experiments.monte_carlo(cfg)

for algo in cfg.algos:
    vals = rep.mse_table(algo)
    print("%-5s median %.4f  mean %.4f" % (algo, np.median(vals), np.mean(vals)))
if rep.failures:
    print("failures:", rep.failures)
