"""Adversarial video latent autoencoder on a small numpy autodiff core."""

from .estimator import AVLAE
from .extractor import VideoFeatureExtractor
from .flow import FlowEstimator, estimate_flow
from .metrics import disentanglement_probe, fid, inception_score
from .networks import AVLAEModel, ModelConfig
from .tensor import Tensor, no_grad, precision
from .training import StepReport, TrainConfig, Trainer

__all__ = [
    "AVLAE",
    "AVLAEModel",
    "FlowEstimator",
    "ModelConfig",
    "StepReport",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "VideoFeatureExtractor",
    "disentanglement_probe",
    "estimate_flow",
    "fid",
    "inception_score",
    "no_grad",
    "precision",
]

__version__ = "0.1.0"
