"""Multi-curvature temporal knowledge graph completion.

Library surface: a minimal autodiff substrate (`ime.tensor`), dataset
ingestion and synthesis (`ime.data`), the embedding model (`ime.model`),
the four-term training loss (`ime.losses`), the training loop
(`ime.trainer`), filtered ranking metrics (`ime.evaluation`), and gradient
verification (`ime.gradcheck`, `ime.checks`).  `ime.cli` wires them into
the `ime` command.
"""

from .data import TKGDataset, generate_synthetic
from .evaluation import RankingReport, evaluate
from .gradcheck import GradReport, grad_check
from .losses import LossBreakdown, LossWeights, total_loss
from .model import IMEModel, ModelDims
from .tensor import Parameter, Tensor, backward, no_grad
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "TKGDataset",
    "generate_synthetic",
    "RankingReport",
    "evaluate",
    "GradReport",
    "grad_check",
    "LossBreakdown",
    "LossWeights",
    "total_loss",
    "IMEModel",
    "ModelDims",
    "Parameter",
    "Tensor",
    "backward",
    "no_grad",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
