"""Motion-sensitive dual-pathway contrastive video pre-training."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
