"""Audio classification with a text tower, a windowed-attention audio tower
and a convolutional similarity head, built on a small numpy autodiff engine."""

from .autodiff import Tensor, backward, finite_difference_check, no_grad
from .config import TrainConfig, desk_config, load_config, paper_config, parse_config, synth_config
from .contrastive import classify, contrastive_loss, cosine_similarity, similarity_matrix
from .model import SemanticAC

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "finite_difference_check",
    "no_grad",
    "TrainConfig",
    "desk_config",
    "paper_config",
    "synth_config",
    "parse_config",
    "load_config",
    "classify",
    "contrastive_loss",
    "cosine_similarity",
    "similarity_matrix",
    "SemanticAC",
]
