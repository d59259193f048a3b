"""qadbench: a desk-scale workbench for attacking and defending a hybrid
quantum-classical classifier.

Trains a small CNN whose feature head feeds a simulated variational quantum
layer, subjects it to compounded white-box gradient attacks (FGSM, PGD,
CW-L2 and their chains), applies an adversarial-training defense, and emits
the clean / attacked / defended accuracy-and-loss grid.
"""

from .attacks import AttackChain, AttackSpec
from .data import Dataset
from .nn import HybridModel, TrainConfig
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "AttackChain",
    "AttackSpec",
    "Dataset",
    "HybridModel",
    "Tensor",
    "TrainConfig",
    "__version__",
]
