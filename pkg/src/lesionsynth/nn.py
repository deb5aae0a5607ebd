"""Parameterized layers, weight initialization, and the Adam optimizer.

Layers hold :class:`Parameter` objects (named, trainable tensors) and expose
a ``__call__`` that builds graph operations.  There is no module base class
with magic registration; each layer lists its parameters explicitly, which
keeps checkpointing and optimizer wiring obvious.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tensor_conv import conv3d

__all__ = [
    "Parameter",
    "Linear",
    "Conv3dLayer",
    "instance_norm3d",
    "kaiming_init",
    "Adam",
]

LEAKY_SLOPE = 0.2


class Parameter:
    """A named trainable tensor.

    ``id`` is a stable dotted path (e.g. ``mask_net.enc.block2.conv.weight``)
    used as the checkpoint key.
    """

    def __init__(self, value, id):
        self.value = Tensor(np.asarray(value), requires_grad=True)
        self.id = str(id)

    @property
    def grad(self):
        return self.value.grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.value.grad = None

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.shape})"


def kaiming_init(shape, fan_in, rng, slope=LEAKY_SLOPE, dtype=np.float32):
    """He-normal weights adjusted for a leaky rectifier.

    Variance 2 / ((1 + slope^2) * fan_in); deterministic for a fixed
    generator state.
    """
    if fan_in < 1:
        raise ValueError("fan_in must be at least 1")
    std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Linear:
    """Affine map x @ W.T + b for inputs shaped [N, F_in]."""

    def __init__(self, f_in, f_out, rng, id, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((f_out, f_in), dtype=dtype)
        else:
            w = kaiming_init((f_out, f_in), f_in, rng, dtype=dtype)
        self.weight = Parameter(w, f"{id}.weight")
        self.bias = Parameter(np.zeros(f_out, dtype=dtype), f"{id}.bias")
        self.f_in, self.f_out = f_in, f_out

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.f_in:
            raise ValueError(
                f"linear expects [N,{self.f_in}], got {x.shape}")
        return T.matmul(x, T.transpose2d(self.weight.value)) + self.bias.value

    def parameters(self):
        return [self.weight, self.bias]


class Conv3dLayer:
    """3^3 convolution with bias; stride fixed at construction."""

    def __init__(self, c_in, c_out, rng, id, stride=1, zero_init=False,
                 dtype=np.float32):
        fan_in = c_in * 27
        if zero_init:
            w = np.zeros((c_out, c_in, 3, 3, 3), dtype=dtype)
        else:
            w = kaiming_init((c_out, c_in, 3, 3, 3), fan_in, rng, dtype=dtype)
        self.weight = Parameter(w, f"{id}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), f"{id}.bias")
        self.stride = stride

    def __call__(self, x):
        return conv3d(x, self.weight.value, self.bias.value, stride=self.stride)

    def parameters(self):
        return [self.weight, self.bias]


def instance_norm3d(x, eps=1e-5):
    """Standardize each (sample, channel) slice over its spatial axes.

    No learned affine: where modulation follows, the modulation is the
    affine; elsewhere the next convolution's bias absorbs the shift.
    """
    if x.ndim != 5:
        raise ValueError(f"expected [N,C,D,H,W], got shape {x.shape}")
    if int(np.prod(x.shape[2:])) < 2:
        raise ValueError("instance norm needs at least 2 spatial voxels")
    axes = (2, 3, 4)
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    return centered / T.sqrt(var + eps)


class Adam:
    """Adam with bias correction over an explicit parameter list.

    Defaults follow the gradient-penalty training convention:
    betas (0.0, 0.9), lr 5e-5.  Gradients are cleared after each step.
    """

    def __init__(self, params, lr=5e-5, betas=(0.0, 0.9), eps=1e-8):
        self.params = list(params)
        ids = [p.id for p in self.params]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate parameter ids in optimizer")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value.data) for p in self.params]
        self.v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {p.id} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad.data.astype(p.value.data.dtype, copy=False)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
