"""Minimal deterministic neural-network engine.

Layer stack with named layers, a latent tap, exact backpropagation, plain
mini-batch gradient descent, and a binary serialization format.  Everything
runs in float64 so analytic gradients can be checked against central finite
differences at tight tolerances.
"""

from .layers import (
    LayerSpec,
    conv1d,
    conv2d,
    dense,
    dropout,
    gru,
    maxpool,
    output,
    relu,
)
from .network import Network, backward, build_network, forward
from .losses import LossTerms, MeanSquaredOutputLoss
from .serialize import load_network, save_network
from .training import (
    EpochStats,
    EvalResult,
    TrainConfig,
    TrainResult,
    evaluate,
    format_accuracy_cells,
    train,
)

__all__ = [
    "LayerSpec",
    "dense",
    "relu",
    "conv2d",
    "conv1d",
    "maxpool",
    "dropout",
    "gru",
    "output",
    "Network",
    "build_network",
    "forward",
    "backward",
    "LossTerms",
    "MeanSquaredOutputLoss",
    "TrainConfig",
    "TrainResult",
    "EpochStats",
    "EvalResult",
    "train",
    "evaluate",
    "format_accuracy_cells",
    "save_network",
    "load_network",
]
