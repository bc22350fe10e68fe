"""Two-stream vision + WiFi person re-identification on a numpy autodiff core."""

from .fusion import MODES, ModelConfig, ViFiReID
from .trainer import TrainConfig, lr_at, train

__all__ = ["MODES", "ModelConfig", "ViFiReID", "TrainConfig", "lr_at", "train"]
__version__ = "0.1.0"
