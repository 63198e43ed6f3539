from metasurrogate.diffmath.gaussian import (
    DiagGaussian,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
    reparam_sample,
)
from metasurrogate.diffmath.nn import init_mlp, mlp_apply
from metasurrogate.diffmath.optim import OptState, adam_init, adam_step
from metasurrogate.diffmath.params import ParamSet
from metasurrogate.diffmath.tensor import Var, backward, gradient, value_and_gradient

__all__ = [
    "DiagGaussian",
    "OptState",
    "ParamSet",
    "Var",
    "adam_init",
    "adam_step",
    "backward",
    "gaussian_entropy",
    "gaussian_kl",
    "gaussian_log_prob",
    "gradient",
    "init_mlp",
    "mlp_apply",
    "reparam_sample",
    "value_and_gradient",
]
