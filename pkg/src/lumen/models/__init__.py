"""Lighting autoencoder, illumination predictor, their losses and training."""

from .losses import ae_loss, ip_loss
from .networks import AEConfig, Autoencoder, IPConfig, Predictor, predict_lighting
from .training import (
    TrainResult,
    ae_eval_loss,
    encode_targets,
    ip_eval_loss,
    train_autoencoder,
    train_predictor,
)

__all__ = [
    "AEConfig",
    "Autoencoder",
    "IPConfig",
    "Predictor",
    "TrainResult",
    "ae_eval_loss",
    "ae_loss",
    "encode_targets",
    "ip_eval_loss",
    "ip_loss",
    "predict_lighting",
    "train_autoencoder",
    "train_predictor",
]
