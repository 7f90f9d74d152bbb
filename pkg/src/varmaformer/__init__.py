"""Cross-attention time-series forecaster with AR/MA patch features and gated queries."""

from .model import ModelConfig, VARMAformer, forecast, load_checkpoint, save_checkpoint
from .train import TrainConfig, evaluate, train

__all__ = ["ModelConfig", "VARMAformer", "TrainConfig", "forecast", "train", "evaluate",
           "save_checkpoint", "load_checkpoint"]
__version__ = "0.1.0"
