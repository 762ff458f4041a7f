"""Quadrature Gaussian sum filtering and smoothing for Wiener state-space systems."""

from .backward import BackwardOptions, backward_init, backward_predict, backward_reduce, backward_update, run_backward
from .gauss import Gaussian, GaussianMixture, reduce_by_joining
from .model import GaussianInput, WienerModel, example, simulate
from .nonlinearity import PiecewiseNonlinearity, preset
from .qgsf import FilterOptions, run_filter
from .qgss import joint_smooth_at, run_smoother, smooth, smooth_at
from .quadrature import legendre_rule, likelihood_mixture

__version__ = "0.1.0"
