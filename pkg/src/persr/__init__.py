"""Multi-pass perceptual super-resolution on a small numpy autodiff engine."""

from .autodiff import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad"]
__version__ = "0.1.0"
