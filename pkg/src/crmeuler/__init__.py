"""Completely random measures, point vortices and infinitesimal invariance of 2D Euler."""

__version__ = "0.1.0"

from .crm import CRMSample, CRMTriple, JumpLaw, sample_crm  # noqa: E402
from .geometry import DiskBump, Torus, TorusMode, UnitDisk, biot_savart, green, h_kernel  # noqa: E402

__all__ = [
    "CRMSample",
    "CRMTriple",
    "DiskBump",
    "JumpLaw",
    "Torus",
    "TorusMode",
    "UnitDisk",
    "biot_savart",
    "green",
    "h_kernel",
    "sample_crm",
    "__version__",
]
