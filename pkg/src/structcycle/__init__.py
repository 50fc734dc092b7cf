"""Structure-preserving unpaired tagged-to-cine translation."""

from .data import Image, Modality, PhantomSpec, UnpairedDataset, build_unpaired_dataset, generate_phantom_pair
from .config import ExperimentConfig, TrainConfig
from .losses import LossWeights

__all__ = [
    "Image", "Modality", "PhantomSpec", "UnpairedDataset", "build_unpaired_dataset", "generate_phantom_pair",
    "ExperimentConfig", "TrainConfig", "LossWeights",
]
__version__ = "0.1.0"
