"""Multi-modal representation learning: CMF, AE-based MF and MMEDA-I/II on a small autodiff core."""

from .autodiff import Node, ShapeError, Tape, backward
from .data import MultiModalDataset, SynthSpec, generate_synthetic, load_model, save_model, split
from .models import build_model, descriptor, embed
from .training import TrainConfig, TrainHistory, embed_dataset, fit

__version__ = "0.1.0"
