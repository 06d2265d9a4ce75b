"""Product-pooling convolutional classifier with an exact tree tensor
network description and entanglement diagnostics of its class states."""

from .config import ModelConfig, RunConfig, TrainConfig
from .model import Model, init_model, param_count

__all__ = ["Model", "ModelConfig", "RunConfig", "TrainConfig", "init_model", "param_count"]
