"""Contrastive video representation learning at desk scale."""

from .video import Clip, Dataset, RawVideo, extract_clip, generate_synthetic_dataset, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "Clip",
    "Dataset",
    "RawVideo",
    "extract_clip",
    "generate_synthetic_dataset",
    "load_dataset",
    "save_dataset",
]
