"""3D convolution and resampling primitives for the autodiff graph.

The convolution family is deliberately closed under differentiation.  Three
primitives cover forward and both adjoints:

    conv3d_raw(x, w)        cross-correlation, the forward pass
    conv3d_input_grad(g, w) adjoint with respect to the input
    conv3d_weight_grad(x, g) adjoint with respect to the kernel

Each primitive's reverse pass is expressed with the other two, so a gradient
obtained with ``create_graph=True`` can be differentiated once more without
any special casing.  All three contract the same trilinear form

    T(x, w, g) = <g, corr(x, w)>

and are its three partial adjoints.

Kernels are 3x3x3 (the only size the models use); stride 1 or 2, symmetric
zero padding.  Output extent per axis is ``(n + 2*pad - 3) // stride + 1``.

Internals route every contraction through BLAS matmul, which on a plain CPU
outruns the equivalent einsum by an order of magnitude.  For stride 1 the 27
kernel offsets become shifted slices of the flattened padded volume: a shift
that crosses a row boundary lands exactly on zero padding (pad >= 1 covers
the maximal offset), so no per-offset gather is needed at all.  Strided
convolutions gather each offset's slab explicitly; their output grids are
small enough that the copies do not matter.
"""

from __future__ import annotations

import numpy as np

from .tensor import Function, Tensor, as_tensor, reshape

__all__ = [
    "conv3d",
    "conv3d_raw",
    "conv3d_input_grad",
    "conv3d_weight_grad",
    "nearest_upsample3d",
    "block_sum3d",
    "nearest_downsample3d",
]

_K = 3  # kernel extent on every spatial axis


def _out_extent(n, pad, stride):
    return (n + 2 * pad - _K) // stride + 1


def _check_conv_shapes(x, w):
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(
            f"conv3d expects 5-d input and kernel, got {x.shape} and {w.shape}")
    if w.shape[2:] != (_K, _K, _K):
        raise ValueError(f"kernel must be {_K}^3, got spatial shape {w.shape[2:]}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")


def _pad_spatial(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    width = [(0, 0), (0, 0)] + [(pad, pad)] * 3
    return np.pad(x, width)


def _offset_weights(w):
    """[O,C,3,3,3] -> contiguous [3,3,3,O,C]; slow matmul paths lurk behind
    strided weight views."""
    return np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))


def _out_dims(spatial, pad, stride):
    dims = tuple(_out_extent(m, pad, stride) for m in spatial)
    if min(dims) < 1:
        raise ValueError(
            f"non-positive output extent for input {spatial} "
            f"with pad={pad}, stride={stride}")
    return dims


def _gather_slab(xp, offset, out_dims, stride):
    kd, kh, kw = offset
    do, ho, wo = out_dims
    return xp[:, :,
              kd:kd + stride * (do - 1) + 1:stride,
              kh:kh + stride * (ho - 1) + 1:stride,
              kw:kw + stride * (wo - 1) + 1:stride]


def _corr_forward(x, w, stride, pad):
    n, ci = x.shape[:2]
    co = w.shape[0]
    do, ho, wo = _out_dims(x.shape[2:], pad, stride)
    wk = _offset_weights(w)
    xp = _pad_spatial(x, pad)
    if stride == 1 and pad >= 1:
        dp, hp, wp = xp.shape[2:]
        vp = dp * hp * wp
        xf = xp.reshape(n, ci, vp)
        out_p = np.zeros((n, co, vp), dtype=x.dtype)
        tmp = np.empty((n, co, vp), dtype=x.dtype)
        for kd in range(_K):
            for kh in range(_K):
                for kw in range(_K):
                    delta = (kd * hp + kh) * wp + kw
                    span = vp - delta
                    np.matmul(wk[kd, kh, kw][None], xf[:, :, delta:],
                              out=tmp[:, :, :span])
                    np.add(out_p[:, :, :span], tmp[:, :, :span],
                           out=out_p[:, :, :span])
        grid = out_p.reshape(n, co, dp, hp, wp)
        return np.ascontiguousarray(grid[:, :, :do, :ho, :wo])

    v = do * ho * wo
    out = np.zeros((n, co, v), dtype=x.dtype)
    tmp = np.empty((n, co, v), dtype=x.dtype)
    for kd in range(_K):
        for kh in range(_K):
            for kw in range(_K):
                slab = _gather_slab(xp, (kd, kh, kw), (do, ho, wo), stride)
                np.matmul(wk[kd, kh, kw][None],
                          slab.reshape(n, ci, v), out=tmp)
                np.add(out, tmp, out=out)
    return out.reshape(n, co, do, ho, wo)


def _embed_out_grad(g, padded_spatial):
    n, co = g.shape[:2]
    do, ho, wo = g.shape[2:]
    g_p = np.zeros((n, co) + padded_spatial, dtype=g.dtype)
    g_p[:, :, :do, :ho, :wo] = g
    return g_p


def _corr_input_grad(g, w, stride, pad, in_spatial):
    n = g.shape[0]
    ci = w.shape[1]
    d, h, wd = in_spatial
    do, ho, wo = g.shape[2:]
    wkt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))  # [3,3,3,C,O]
    padded = (d + 2 * pad, h + 2 * pad, wd + 2 * pad)
    if stride == 1 and pad >= 1:
        dp, hp, wp = padded
        vp = dp * hp * wp
        gpf = _embed_out_grad(g, padded).reshape(n, -1, vp)
        gxf = np.zeros((n, ci, vp), dtype=g.dtype)
        tmp = np.empty((n, ci, vp), dtype=g.dtype)
        for kd in range(_K):
            for kh in range(_K):
                for kw in range(_K):
                    delta = (kd * hp + kh) * wp + kw
                    span = vp - delta
                    np.matmul(wkt[kd, kh, kw][None], gpf[:, :, :span],
                              out=tmp[:, :, :span])
                    np.add(gxf[:, :, delta:], tmp[:, :, :span],
                           out=gxf[:, :, delta:])
        grid = gxf.reshape(n, ci, dp, hp, wp)
        return np.ascontiguousarray(
            grid[:, :, pad:pad + d, pad:pad + h, pad:pad + wd])

    v = do * ho * wo
    gf = np.ascontiguousarray(g.reshape(n, -1, v))
    gxp = np.zeros((n, ci) + padded, dtype=g.dtype)
    tmp = np.empty((n, ci, v), dtype=g.dtype)
    for kd in range(_K):
        for kh in range(_K):
            for kw in range(_K):
                np.matmul(wkt[kd, kh, kw][None], gf, out=tmp)
                slab = _gather_slab(gxp, (kd, kh, kw), (do, ho, wo), stride)
                np.add(slab, tmp.reshape(slab.shape), out=slab)
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad:pad + d, pad:pad + h, pad:pad + wd])


def _corr_weight_grad(x, g, stride, pad):
    n, ci = x.shape[:2]
    co = g.shape[1]
    do, ho, wo = g.shape[2:]
    xp = _pad_spatial(x, pad)
    gw = np.empty((_K, _K, _K, co, ci), dtype=x.dtype)
    if stride == 1 and pad >= 1:
        dp, hp, wp = xp.shape[2:]
        vp = dp * hp * wp
        xf = xp.reshape(n, ci, vp)
        gpf = _embed_out_grad(g, (dp, hp, wp)).reshape(n, co, vp)
        for kd in range(_K):
            for kh in range(_K):
                for kw in range(_K):
                    delta = (kd * hp + kh) * wp + kw
                    span = vp - delta
                    prod = np.matmul(gpf[:, :, :span],
                                     xf[:, :, delta:].transpose(0, 2, 1))
                    gw[kd, kh, kw] = prod.sum(axis=0)
        return np.ascontiguousarray(gw.transpose(3, 4, 0, 1, 2))

    v = do * ho * wo
    gf = np.ascontiguousarray(g.reshape(n, co, v))
    for kd in range(_K):
        for kh in range(_K):
            for kw in range(_K):
                slab = _gather_slab(xp, (kd, kh, kw), (do, ho, wo), stride)
                buf = np.ascontiguousarray(slab.reshape(n, ci, v))
                prod = np.matmul(gf, buf.transpose(0, 2, 1))
                gw[kd, kh, kw] = prod.sum(axis=0)
    return np.ascontiguousarray(gw.transpose(3, 4, 0, 1, 2))


class ConvForward(Function):
    def forward(self, x, w, stride=1, pad=1):
        _check_conv_shapes(x, w)
        self.stride, self.pad = stride, pad
        self.in_spatial = x.shape[2:]
        return _corr_forward(x, w, stride, pad)

    def backward(self, g):
        x, w = self.inputs
        gx = ConvInputGrad.apply(g, w, stride=self.stride, pad=self.pad,
                                 in_spatial=self.in_spatial)
        gw = ConvWeightGrad.apply(x, g, stride=self.stride, pad=self.pad)
        return gx, gw


class ConvInputGrad(Function):
    def forward(self, g, w, stride=1, pad=1, in_spatial=None):
        self.stride, self.pad = stride, pad
        self.in_spatial = in_spatial
        return _corr_input_grad(g, w, stride, pad, in_spatial)

    def backward(self, gg):
        g, w = self.inputs
        # d/dg <gg, CIG(g, w)> = corr(gg, w); d/dw = CWG(gg, g)
        ggrad = ConvForward.apply(gg, w, stride=self.stride, pad=self.pad)
        wgrad = ConvWeightGrad.apply(gg, g, stride=self.stride, pad=self.pad)
        return ggrad, wgrad


class ConvWeightGrad(Function):
    def forward(self, x, g, stride=1, pad=1):
        self.stride, self.pad = stride, pad
        self.in_spatial = x.shape[2:]
        return _corr_weight_grad(x, g, stride, pad)

    def backward(self, gw):
        x, g = self.inputs
        xgrad = ConvInputGrad.apply(g, gw, stride=self.stride, pad=self.pad,
                                    in_spatial=self.in_spatial)
        ggrad = ConvForward.apply(x, gw, stride=self.stride, pad=self.pad)
        return xgrad, ggrad


def conv3d_raw(x, w, stride=1, pad=1):
    """Cross-correlation without bias: x [N,Ci,D,H,W] * w [Co,Ci,3,3,3]."""
    return ConvForward.apply(x, w, stride=stride, pad=pad)


def conv3d_input_grad(g, w, in_spatial, stride=1, pad=1):
    return ConvInputGrad.apply(g, w, stride=stride, pad=pad,
                               in_spatial=tuple(in_spatial))


def conv3d_weight_grad(x, g, stride=1, pad=1):
    return ConvWeightGrad.apply(x, g, stride=stride, pad=pad)


def conv3d(x, w, b=None, stride=1, pad=1):
    """3D cross-correlation with optional per-output-channel bias.

    ``x``: Tensor [N, C_in, D, H, W]; ``w``: Tensor [C_out, C_in, 3, 3, 3];
    ``b``: Tensor [C_out] or None.  Differentiable in all three arguments,
    including through a recorded reverse pass.
    """
    out = conv3d_raw(x, w, stride=stride, pad=pad)
    if b is not None:
        b = as_tensor(b)
        if b.ndim != 1 or b.shape[0] != out.shape[1]:
            raise ValueError(
                f"bias shape {b.shape} does not match {out.shape[1]} output channels")
        out = out + reshape(b, (1, b.shape[0], 1, 1, 1))
    return out


class Upsample3d(Function):
    def forward(self, x, factor=2):
        if x.ndim != 5:
            raise ValueError(f"expected 5-d input, got shape {x.shape}")
        if factor < 1:
            raise ValueError("factor must be a positive integer")
        self.factor = factor
        out = x
        for axis in (2, 3, 4):
            out = np.repeat(out, factor, axis=axis)
        return out

    def backward(self, g):
        return (BlockSum3d.apply(g, factor=self.factor),)


class BlockSum3d(Function):
    def forward(self, x, factor=2):
        if x.ndim != 5:
            raise ValueError(f"expected 5-d input, got shape {x.shape}")
        n, c, d, h, w = x.shape
        f = factor
        if d % f or h % f or w % f:
            raise ValueError(
                f"spatial extents {x.shape[2:]} not divisible by factor {f}")
        self.factor = f
        blocks = x.reshape(n, c, d // f, f, h // f, f, w // f, f)
        return blocks.sum(axis=(3, 5, 7))

    def backward(self, g):
        return (Upsample3d.apply(g, factor=self.factor),)


def nearest_upsample3d(x, factor):
    """Replicate every voxel into a factor^3 block; adjoint is the block sum."""
    return Upsample3d.apply(x, factor=int(factor))


def block_sum3d(x, factor):
    """Sum non-overlapping factor^3 blocks; adjoint is nearest upsampling."""
    return BlockSum3d.apply(x, factor=int(factor))


def nearest_downsample3d(arr, factor):
    """Pick the first voxel of every factor^3 block of a raw array.

    Used on binary masks, outside the graph; exact inverse of
    nearest_upsample3d at the same factor.
    """
    f = int(factor)
    if f < 1:
        raise ValueError("factor must be a positive integer")
    arr = np.asarray(arr)
    if any(n % f for n in arr.shape[-3:]):
        raise ValueError(
            f"spatial extents {arr.shape[-3:]} not divisible by factor {f}")
    return arr[..., ::f, ::f, ::f]
