"""Learning Poisson bivectors and energies from trajectory snapshots.

Three flavours of geometric strictness are available: WJ (no Jacobi
identity), SJ (soft Jacobi penalty) and IJ (Jacobi identity built in, 3D).
"""
from .estimator import PoissonNetRegressor
from .metrics import (HAMILTONIAN, INCONCLUSIVE, NON_HAMILTONIAN, MetricsReport, build_report,
                      classify_hamiltonianity)
from .nets import FLAVORS, PoissonModel
from .systems import SYSTEMS, SystemSpec, ground_truth
from .train import TrainConfig, TrainingDiverged, evaluate_gt, train

__all__ = [
    "FLAVORS", "HAMILTONIAN", "INCONCLUSIVE", "NON_HAMILTONIAN", "SYSTEMS",
    "MetricsReport", "PoissonModel", "PoissonNetRegressor", "SystemSpec", "TrainConfig",
    "TrainingDiverged", "build_report", "classify_hamiltonianity", "evaluate_gt",
    "ground_truth", "train",
]
__version__ = "0.1.0"
