"""Embedding learning on a small reverse-mode autodiff core.

autodiff supplies the Tensor graph, layers the parameterized blocks,
losses the three training objectives, model the two-channel encoder with
auxiliary-token fusion, augment the view sampler, and train the loop
plus checkpointing and gradient verification.
"""

from .autodiff import Tensor, set_default_dtype, default_dtype, stop_gradient
from .model import EncoderConfig, Sample, Triplet, PwsModel, ShapeError
from .losses import triplet_loss, neg_cosine, self_supervised_loss, bce_loss
from .train import (
    Adam,
    TrainingDiverged,
    train,
    encode_all,
    grad_check,
    save_checkpoint,
    load_checkpoint,
)

__all__ = [
    "Tensor",
    "set_default_dtype",
    "default_dtype",
    "stop_gradient",
    "EncoderConfig",
    "Sample",
    "Triplet",
    "PwsModel",
    "ShapeError",
    "triplet_loss",
    "neg_cosine",
    "self_supervised_loss",
    "bce_loss",
    "Adam",
    "TrainingDiverged",
    "train",
    "encode_all",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]
