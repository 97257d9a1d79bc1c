"""RetinaConv: a standard kernel plus a dilated kernel folded into one dense kernel.

Because convolution is linear in the kernel, ``f*g + f*h_d`` equals
``f*(g + h_d)`` once the dilated kernel ``h`` is spread onto a dense grid
centred on ``g``.  The composed kernel has a reinforced centre tap and a
sparse periphery, and a single convolution replaces the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from irisnet.autodiff import Tape, backward_pass, paused, record
from irisnet.ops import ConvSpec, conv2d
from irisnet.tensor import ShapeError, Tensor, elementwise_add


@dataclass
class RetinaConvLayer:
    g: Tensor  # standard kernel, (Cout, Cin, ks, ks)
    h: Tensor  # dilated kernel, (Cout, Cin, kd, kd)
    dilation: int
    bias: Tensor  # one shared bias per output channel

    def __post_init__(self):
        for name, k in (("g", self.g), ("h", self.h)):
            if k.ndim != 4 or k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
                raise ShapeError(f"kernel {name} must be (Cout, Cin, k, k) with odd k, got {k.shape}")
        if self.g.shape[:2] != self.h.shape[:2]:
            raise ShapeError(f"g and h disagree on (Cout, Cin): {self.g.shape[:2]} vs {self.h.shape[:2]}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if self.bias.shape != (self.cout,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.cout},)")

    @property
    def cout(self) -> int:
        return self.g.shape[0]

    @property
    def cin(self) -> int:
        return self.g.shape[1]

    @property
    def ks(self) -> int:
        return self.g.shape[2]

    @property
    def kd(self) -> int:
        return self.h.shape[2]

    @property
    def extent(self) -> int:
        return effective_receptive_field(self)

    def num_parameters(self) -> int:
        return self.cout * self.cin * (self.ks**2 + self.kd**2) + self.cout


def effective_receptive_field(layer: RetinaConvLayer) -> int:
    """Side length of the composed kernel: ``max(ks, (kd - 1) * d + 1)``."""
    return max(layer.ks, (layer.kd - 1) * layer.dilation + 1)


def _slots(layer: RetinaConvLayer) -> tuple[slice, slice]:
    """Index slices of the composed kernel occupied by g and by the spread-out h."""
    c = (layer.extent - 1) // 2
    rs, rh = (layer.ks - 1) // 2, (layer.kd - 1) // 2
    d = layer.dilation
    return slice(c - rs, c + rs + 1), slice(c - rh * d, c + rh * d + 1, d)


def _compose(layer: RetinaConvLayer) -> np.ndarray:
    k = layer.extent
    gs, hs = _slots(layer)
    out = np.zeros((layer.cout, layer.cin, k, k))
    out[:, :, gs, gs] += layer.g.data
    out[:, :, hs, hs] += layer.h.data
    return out


def compose_kernels(layer: RetinaConvLayer) -> Tensor:
    """Dense composed kernel; centre tap holds ``g_centre + h_centre``."""
    return Tensor._wrap(_compose(layer))


def split_kernel_grad(layer: RetinaConvLayer, dk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Route a composed-kernel gradient back to g and h.

    Composition is additive, so a tap shared by both kernels hands the same
    gradient entry to each.
    """
    gs, hs = _slots(layer)
    return dk[:, :, gs, gs].copy(), dk[:, :, hs, hs].copy()


def retinaconv_forward(x: Tensor, layer: RetinaConvLayer) -> Tensor:
    """One dense "same"-padded convolution with the composed kernel.

    Recorded on the tape as a single node with inputs ``(x, g, h, bias)``.
    """
    if x.ndim != 4 or x.shape[1] != layer.cin:
        raise ShapeError(f"retinaconv channel mismatch: input {x.shape}, layer expects {layer.cin} channels")
    kernel = Tensor._wrap(_compose(layer))
    spec = ConvSpec(kernel_size=layer.extent)
    # A private tape captures the dense conv so backward can reuse its patch matrix.
    with Tape() as inner:
        out = conv2d(x, kernel, layer.bias, spec)
    conv_node = inner.nodes[-1]

    def backward(grad):
        gx, gk, gb = conv_node.backward(grad)
        dg, dh = split_kernel_grad(layer, gk)
        return gx, dg, dh, gb

    def replay():
        with paused():
            return conv2d(x, Tensor._wrap(_compose(layer)), layer.bias, spec).data

    record("retinaconv", (x, layer.g, layer.h, layer.bias), out, backward, replay)
    return out


def retinaconv_backward(
    grad: np.ndarray | Tensor,
    x: Tensor,
    layer: RetinaConvLayer,
    kernel: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(d_input, d_g, d_h, d_bias)`` of the fused path."""
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
    k = Tensor._wrap(_compose(layer) if kernel is None else kernel)
    with Tape() as tape:
        conv2d(x, k, layer.bias, ConvSpec(kernel_size=layer.extent))
    grads = backward_pass(tape, g, wrt=[x, k, layer.bias])
    dg, dh = split_kernel_grad(layer, grads[k].data)
    return grads[x].numpy(), dg, dh, grads[layer.bias].numpy()


def retinaconv_reference(x: Tensor, layer: RetinaConvLayer) -> Tensor:
    """Two separate convolutions summed: ``conv(x, g) + conv_dilated(x, h) + bias``.

    Built from taped primitives so it can be differentiated independently of
    the fused path.
    """
    if x.ndim != 4 or x.shape[1] != layer.cin:
        raise ShapeError(f"retinaconv channel mismatch: input {x.shape}, layer expects {layer.cin} channels")
    standard = conv2d(x, layer.g, None, ConvSpec(kernel_size=layer.ks))
    dilated = conv2d(x, layer.h, layer.bias, ConvSpec(kernel_size=layer.kd, dilation=layer.dilation))
    return elementwise_add(standard, dilated)


def make_layer(
    cin: int,
    cout: int,
    ks: int = 3,
    kd: int = 3,
    dilation: int = 1,
    rng: np.random.Generator | None = None,
) -> RetinaConvLayer:
    """Layer with fan-in-scaled uniform kernels and zero bias."""
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = np.sqrt(6.0 / (cin * (ks * ks + kd * kd)))
    g = Tensor._wrap(rng.uniform(-bound, bound, size=(cout, cin, ks, ks)))
    h = Tensor._wrap(rng.uniform(-bound, bound, size=(cout, cin, kd, kd)))
    return RetinaConvLayer(g, h, dilation, Tensor._wrap(np.zeros(cout)))
