"""Storage, Larmor dephasing and retrieval of transverse images in cold-atom memories."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
