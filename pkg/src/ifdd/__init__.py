"""Learnable wavelet-lifting disentanglement of video feature sequences."""

__version__ = "0.1.0"

from .tensor import Tensor, finite_diff_check

__all__ = ["Tensor", "finite_diff_check", "__version__"]
