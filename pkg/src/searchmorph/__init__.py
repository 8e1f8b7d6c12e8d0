"""Iterative search-based deformable registration of 2D images on a small
reverse-mode autodiff core (numpy, with numba kernels for bilinear sampling)."""
from .config import RegistrationConfig, load_config, parse_config, preset
from .model import SearchMorph
from .pipeline import Checkpoint, evaluate, register, train
from .tensor import Tensor, backward, no_grad, precision

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "RegistrationConfig",
    "SearchMorph",
    "Tensor",
    "backward",
    "evaluate",
    "load_config",
    "no_grad",
    "parse_config",
    "precision",
    "preset",
    "register",
    "train",
]
