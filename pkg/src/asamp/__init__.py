"""Sparse-recovery solvers built around subspace-restricted splitting.

Bundles the alternating-subspace solvers (ASAMP-L1 and the MMSE variants
ASAMP-BG / ASAMP-HMC), splitting baselines (ISTA, PRS/ADMM, VAMP,
Diag-VAMP, MPS), numerical checks of the supporting fixed-point theory,
and a reproducible benchmark harness with CSV and figure output.
"""

from . import asm, denoisers, harness, linalg, metrics, problems, splitting, theory

__version__ = "0.1.0"

__all__ = [
    "asm",
    "denoisers",
    "harness",
    "linalg",
    "metrics",
    "problems",
    "splitting",
    "theory",
]
