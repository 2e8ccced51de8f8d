"""2D U-Net trainer and middle-layer tensor exporter for cardiac MRI
segmentation; produces the manifest/NPY contracts the analysis engine reads."""

from .train import TrainConfig, train
from .export import export

__all__ = ["TrainConfig", "train", "export"]
__version__ = "0.1.0"
