"""Differentiable sequence model: encoder, heads, losses, checkpoints."""

from .autodiff import Tensor, backward, layer_norm
from .checkpoint import load_model, load_params, save_model, save_params
from .losses import WARNING_COUNTS, LossWeights, cross_entropy, masked_mse, weighted_loss
from .model import (
    EncoderConfig,
    ModelParams,
    attach_classifier,
    classify_batch,
    encode,
    forward_classify,
    forward_reconstruct,
    init_params,
    reconstruct_batch,
)

__all__ = [
    "Tensor",
    "backward",
    "layer_norm",
    "EncoderConfig",
    "ModelParams",
    "LossWeights",
    "init_params",
    "attach_classifier",
    "encode",
    "reconstruct_batch",
    "classify_batch",
    "forward_reconstruct",
    "forward_classify",
    "masked_mse",
    "weighted_loss",
    "cross_entropy",
    "WARNING_COUNTS",
    "save_params",
    "load_params",
    "save_model",
    "load_model",
]
