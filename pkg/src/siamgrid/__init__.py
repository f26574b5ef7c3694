"""siamgrid: desk-scale Siamese representation-learning experiments.

A small numpy tensor engine with reverse-mode autodiff, seeded image
augmentation kernels, synthetic multi-label datasets, SimSiam-style
pretraining with linear probing / fine-tuning / zero-shot protocols,
and multi-label evaluation metrics.
"""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    ContractError,
    DimensionError,
    NumericError,
    Parameter,
    Tensor,
    backward,
    grad_check,
    no_grad,
    stop_gradient,
    tape_scope,
)
from .ops import (  # noqa: F401
    batchnorm,
    conv2d,
    global_avg_pool,
    l2_normalize,
    linear,
    max_pool2d,
)
