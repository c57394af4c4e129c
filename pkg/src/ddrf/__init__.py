"""Joint restoration and fusion of degraded visible/infrared image pairs."""

from ._accel import BACKEND, HAS_NUMBA

__version__ = "0.1.0"
__all__ = ["BACKEND", "HAS_NUMBA", "__version__"]
