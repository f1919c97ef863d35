"""Style-decoupled adaptive routing for underwater image enhancement."""

__version__ = "0.1.0"

from .data import Dataset, Image, SamplePair, load_dataset, to_working_range  # noqa: E402,F401
from .model import ModelConfig, Network  # noqa: E402,F401
from .trainer import (  # noqa: E402,F401
    Checkpoint, TrainConfig, enhance, load_checkpoint, save_checkpoint, train, train_phase1, train_phase2,
)
