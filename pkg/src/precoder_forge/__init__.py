"""Finite-alphabet MIMO precoder optimization with Gauss-Hermite mutual information."""
from ._backend import BACKEND
from .channels import (NoiseModel, builtin, ensemble, kronecker_correlated, load_channel,
                       random_gaussian, save_channel, svd_factor)
from .constellation import Constellation, make_qam
from .errors import PrecoderForgeError
from .gradients import Gradients, gradients, grad_m, grad_sigma_g2, grad_w, mmse_mc
from .mi import EffectiveChannel, MiEstimate, OpCounter, mi_gh, mi_mc, op_count_formula
from .optimizer import OptimizerParams, PrecoderState, optimize, no_precoding_baseline
from .pgp import GroupPlan, ergodic_pgp, optimize_pgp, plan_groups
from .quadrature import hermite_rule

__version__ = "0.1.0"
