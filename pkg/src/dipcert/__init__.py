"""Convergence and recovery certificates for unsupervised two-layer generators
trained by gradient descent on inverse problems."""
from .certificates import Certificate, certify
from .errors import (
    BoundaryUndefinedError,
    DivergenceError,
    DomainError,
    GuaranteeUnavailable,
    InvalidInputError,
    RankZeroError,
    RestrictedInjectivityUnavailable,
)
from .linalg import make_rng
from .losses import Desingularizer, KLLoss
from .model import TwoLayerNet, forward, init_network, jacobian
from .operators import LinearOperator, gaussian_operator
from .trainer import TrainConfig, TrainTrace, train

__version__ = "0.1.0"
