"""Dilated fully-convolutional fusion network in plain NumPy."""
from .io import load_model, save_model
from .layers import conv2d_dilated, side_fusion, sigmoid, sigmoid_xent, softmax, softmax_xent
from .network import (
    ConvLayerSpec,
    FusionNet,
    GradCheckReport,
    backward,
    default_layers,
    forward,
    grad_check,
)
from .optim import TrainConfig, sgd_step, train

__all__ = [
    "ConvLayerSpec", "FusionNet", "GradCheckReport", "TrainConfig", "backward",
    "conv2d_dilated", "default_layers", "forward", "grad_check", "load_model",
    "save_model", "sgd_step", "side_fusion", "sigmoid", "sigmoid_xent", "softmax",
    "softmax_xent", "train",
]
