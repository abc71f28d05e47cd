"""Minimal neural-network core: layers, exact gradients, optimizers.

The conv kernels run through a compiled extension when available and fall
back to pure numpy; see :mod:`ldpi.nn.backends`.
"""

from .backends import BACKEND
from .layers import (BatchNorm1d, Conv1d, Dense, GlobalAvgPool, ReLU,
                     Residual, backward, forward, grad_check, graph_from_obj,
                     graph_to_obj, init_params, output_shape, param_names)
from .optim import (AdamState, SgdState, TwoPhase, WarmupCosine, adam_step,
                    lr_at, sgd_step)

__all__ = [
    "BACKEND", "BatchNorm1d", "Conv1d", "Dense", "GlobalAvgPool", "ReLU",
    "Residual", "backward", "forward", "grad_check", "graph_from_obj",
    "graph_to_obj", "init_params", "output_shape", "param_names",
    "AdamState", "SgdState", "TwoPhase", "WarmupCosine", "adam_step",
    "lr_at", "sgd_step",
]
