"""Per-word conditional GAN: an LSTM reads a caption word by word and a
deconvolution generator renders an image after every word."""

from .tensor import Tensor, backward, finite_diff_check, new_tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "finite_diff_check", "new_tensor", "no_grad", "__version__"]
