"""chisep: susceptibility source separation on synthetic phantoms.

Library + CLI covering the full desk-scale pipeline: dipole physics,
multi-echo signal synthesis, relaxometry, field processing, COSMOS and
source decomposition, physics-informed losses, a toy convolutional network
with analytic backprop, and evaluation metrics.
"""

__version__ = "0.1.0"

from .volume import Mask3D, NormStats, RegressionResult, Unit, Volume3D
from .errors import ChisepError

__all__ = [
    "ChisepError",
    "Mask3D",
    "NormStats",
    "RegressionResult",
    "Unit",
    "Volume3D",
    "__version__",
]
