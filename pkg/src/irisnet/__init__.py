"""IrisNet: fused standard+dilated convolution segmentation on a from-scratch numpy autodiff core."""

from irisnet.tensor import Tensor, concat_channels, elementwise_add, elementwise_mul, slice_channels, tensor_create

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "concat_channels",
    "elementwise_add",
    "elementwise_mul",
    "slice_channels",
    "tensor_create",
]
