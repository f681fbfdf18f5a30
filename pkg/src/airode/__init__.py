"""Desk-scale simulator for a dual-task semantic transceiver whose ODE
bottleneck can run digitally or over the air through phase-quantized
reconfigurable surfaces."""

from . import analog, channel, data, experiments, layers, metrics, nnops, tensor, training
from .analog import AnalogContext, deploy_pipeline
from .channel import ChannelModelParams, SystemGeometry, build_codebooks, sample_channel
from .data import Dataset, make_synthetic
from .experiments import ExperimentConfig, run_experiment
from .layers import AirOdeNetwork, NetworkConfig, load_checkpoint, save_checkpoint
from .tensor import ComplexTensor, backward, no_grad
from .training import TrainSchedule, train_two_stage

__version__ = "0.1.0"

__all__ = [
    "analog", "channel", "data", "experiments", "layers", "metrics",
    "nnops", "tensor", "training",
    "AnalogContext", "deploy_pipeline",
    "ChannelModelParams", "SystemGeometry", "build_codebooks", "sample_channel",
    "Dataset", "make_synthetic",
    "ExperimentConfig", "run_experiment",
    "AirOdeNetwork", "NetworkConfig", "load_checkpoint", "save_checkpoint",
    "ComplexTensor", "backward", "no_grad",
    "TrainSchedule", "train_two_stage",
    "__version__",
]
