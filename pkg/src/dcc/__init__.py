"""Joint autoencoder embedding and robust continuous clustering."""
from .dccopt import ClusterResult, DCCConfig, run_dcc, run_rcc
from .metrics import acc, ami, evaluate, nmi

__version__ = "0.1.0"

__all__ = ["ClusterResult", "DCCConfig", "run_dcc", "run_rcc", "acc", "ami", "evaluate", "nmi"]
