"""From-scratch layers, networks and training for the base classifiers."""

from .layers import softmax, softmax_cross_entropy
from .models import (MLP, AccompNet, AccompNetConfig, MLPConfig, Network, VocalNet, VocalNetConfig,
                     build_model, forward_accomp, forward_vocal)
from .serialize import config_hash, load_model, save_model
from .train import Adam, TrainConfig, train

__all__ = [
    "AccompNet", "AccompNetConfig", "Adam", "MLP", "MLPConfig", "Network", "TrainConfig",
    "VocalNet", "VocalNetConfig", "build_model", "config_hash", "forward_accomp", "forward_vocal",
    "load_model", "save_model", "softmax", "softmax_cross_entropy", "train",
]
