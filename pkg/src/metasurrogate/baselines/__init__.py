from metasurrogate.baselines.gp import GPHyper, GPPosterior, gp_fit, gp_sample, kernel_eval, product_kernel_matrix
from metasurrogate.baselines.multitask_mlp import MLPConfig, multitask_mlp_fit, mlp_predict
from metasurrogate.baselines.random_search import random_search_step

__all__ = [
    "GPHyper",
    "GPPosterior",
    "MLPConfig",
    "gp_fit",
    "gp_sample",
    "kernel_eval",
    "mlp_predict",
    "multitask_mlp_fit",
    "product_kernel_matrix",
    "random_search_step",
]
