"""Structured differentiable operations: convolutions, pooling, resampling,
linear maps and the GRU cell.

Shape conventions follow the channels-first layout used across the package:
2D convolutions take ``(B, C, H, W)``, 3D convolutions ``(B, C, T, H, W)``.
Convolutions loop over kernel taps, contracting a shifted window view with
that tap's channel matrix (faster here than materializing im2col patches);
backward scatters gradients through the same tap geometry. Convolutions are
cross-correlations (kernels are not flipped).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, ParameterError
from .tensor import GridTensor, add, make_node, mul, sigmoid, sub, tanh


def _tuple_of(v, n: int, name: str):
    if isinstance(v, int):
        return (v,) * n
    t = tuple(int(x) for x in v)
    if len(t) != n:
        raise ParameterError(f"{name} must be an int or length-{n} sequence, got {v!r}")
    return t


# -- conv2d -------------------------------------------------------------------


def conv2d(x: GridTensor, w: GridTensor, b: GridTensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> GridTensor:
    """2D convolution of ``x (B,Cin,H,W)`` with ``w (Cout,Cin,kh,kw)``.

    Output spatial size is ``floor((H + 2p - d*(kh-1) - 1) / s) + 1`` per axis.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    B, Cin, H, W = x.shape
    Cout, Cw, kh, kw = w.shape
    if Cw != Cin:
        raise DimensionError(f"conv2d: input has {Cin} channels, weight expects {Cw}")
    if b is not None and b.shape != (Cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({Cout},)")
    sh, sw = _tuple_of(stride, 2, "stride")
    ph, pw = _tuple_of(padding, 2, "padding")
    dh, dw = _tuple_of(dilation, 2, "dilation")
    if dh < 1 or dw < 1:
        raise ParameterError("conv2d: dilation must be >= 1")
    ekh, ekw = dh * (kh - 1) + 1, dw * (kw - 1) + 1
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if ekh > Hp or ekw > Wp:
        raise DimensionError(f"conv2d: dilated kernel ({ekh}x{ekw}) exceeds padded input ({Hp}x{Wp})")
    Ho = (Hp - ekh) // sh + 1
    Wo = (Wp - ekw) // sw + 1

    pad = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wd = w.data

    def tap(p, q):
        # window of the padded input seen by kernel element (p, q)
        return pad[:, :, p * dh: p * dh + Ho * sh: sh, q * dw: q * dw + Wo * sw: sw]

    out = np.zeros((B, Cout, Ho, Wo), dtype=x.dtype)
    for p in range(kh):
        for q in range(kw):
            out += np.einsum("bchw,oc->bohw", tap(p, q), wd[:, :, p, q], optimize=True)
    if b is not None:
        out += b.data.reshape(1, Cout, 1, 1)

    has_bias = b is not None

    def bw(g):
        gw = np.empty_like(wd)
        gpad = np.zeros_like(pad)
        for p in range(kh):
            for q in range(kw):
                gw[:, :, p, q] = np.einsum("bohw,bchw->oc", g, tap(p, q), optimize=True)
                gpad[:, :, p * dh: p * dh + Ho * sh: sh,
                     q * dw: q * dw + Wo * sw: sw] += np.einsum(
                         "bohw,oc->bchw", g, wd[:, :, p, q], optimize=True)
        gx = gpad[:, :, ph: ph + H, pw: pw + W] if (ph or pw) else gpad
        gx = np.ascontiguousarray(gx)
        if has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w, b) if has_bias else (x, w)
    return make_node(out, parents, bw, "conv2d")


# -- conv3d -------------------------------------------------------------------


def conv3d(x: GridTensor, w: GridTensor, b: GridTensor | None = None,
           stride=1, padding=0, dilation=1) -> GridTensor:
    """3D convolution of ``x (B,Cin,T,H,W)`` with ``w (Cout,Cin,kt,kh,kw)``.

    ``stride``/``padding``/``dilation`` are per-axis ``(t, h, w)`` triples or a
    single int applied to all three axes.
    """
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d expects 5-d input and weight, got {x.shape}, {w.shape}")
    B, Cin, T, H, W = x.shape
    Cout, Cw, kt, kh, kw = w.shape
    if Cw != Cin:
        raise DimensionError(f"conv3d: input has {Cin} channels, weight expects {Cw}")
    if b is not None and b.shape != (Cout,):
        raise DimensionError(f"conv3d: bias shape {b.shape} != ({Cout},)")
    st, sh, sw = _tuple_of(stride, 3, "stride")
    pt, ph, pw = _tuple_of(padding, 3, "padding")
    dt, dh, dw = _tuple_of(dilation, 3, "dilation")
    if min(dt, dh, dw) < 1:
        raise ParameterError("conv3d: dilation must be >= 1")
    ekt, ekh, ekw = dt * (kt - 1) + 1, dh * (kh - 1) + 1, dw * (kw - 1) + 1
    Tp, Hp, Wp = T + 2 * pt, H + 2 * ph, W + 2 * pw
    if ekt > Tp or ekh > Hp or ekw > Wp:
        raise DimensionError(f"conv3d: dilated kernel ({ekt}x{ekh}x{ekw}) exceeds "
                             f"padded input ({Tp}x{Hp}x{Wp})")
    To = (Tp - ekt) // st + 1
    Ho = (Hp - ekh) // sh + 1
    Wo = (Wp - ekw) // sw + 1

    pad = (np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
           if (pt or ph or pw) else x.data)
    wd = w.data

    def tap(r, p, q):
        return pad[:, :, r * dt: r * dt + To * st: st,
                   p * dh: p * dh + Ho * sh: sh,
                   q * dw: q * dw + Wo * sw: sw]

    out = np.zeros((B, Cout, To, Ho, Wo), dtype=x.dtype)
    for r in range(kt):
        for p in range(kh):
            for q in range(kw):
                out += np.einsum("bcthw,oc->bothw", tap(r, p, q),
                                 wd[:, :, r, p, q], optimize=True)
    if b is not None:
        out += b.data.reshape(1, Cout, 1, 1, 1)

    has_bias = b is not None

    def bw(g):
        gw = np.empty_like(wd)
        gpad = np.zeros_like(pad)
        for r in range(kt):
            for p in range(kh):
                for q in range(kw):
                    gw[:, :, r, p, q] = np.einsum("bothw,bcthw->oc", g, tap(r, p, q),
                                                  optimize=True)
                    gpad[:, :, r * dt: r * dt + To * st: st,
                         p * dh: p * dh + Ho * sh: sh,
                         q * dw: q * dw + Wo * sw: sw] += np.einsum(
                             "bothw,oc->bcthw", g, wd[:, :, r, p, q], optimize=True)
        gx = (gpad[:, :, pt: pt + T, ph: ph + H, pw: pw + W]
              if (pt or ph or pw) else gpad)
        gx = np.ascontiguousarray(gx)
        if has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3, 4))
        return gx, gw

    parents = (x, w, b) if has_bias else (x, w)
    return make_node(out, parents, bw, "conv3d")


# -- pooling and resampling -----------------------------------------------------


def _box_mean(arr: np.ndarray, k: int) -> np.ndarray:
    """Mean over the k x k zero-padded neighborhood of the last two axes.

    The divisor is fixed at k*k everywhere, so values decay toward borders.
    """
    r = k // 2
    width = [(0, 0)] * (arr.ndim - 2) + [(r, r), (r, r)]
    pad = np.pad(arr, width)
    win = sliding_window_view(pad, (k, k), axis=(-2, -1))
    return win.sum(axis=(-2, -1)) / float(k * k)


def avg_pool2d(x: GridTensor, k: int) -> GridTensor:
    """Same-size average pooling over the last two axes (odd ``k`` only)."""
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"avg_pool2d: kernel size must be odd, got {k}")
    if x.ndim < 2:
        raise DimensionError("avg_pool2d needs at least two spatial axes")
    out = _box_mean(x.data, k)

    def bw(g):
        # the zero-padded box filter is self-adjoint
        return (_box_mean(g, k),)

    return make_node(out, (x,), bw, "avg_pool2d")


def _up_axis_plan(n: int, factor: int, dtype):
    """Source indices and weights for linear upsampling of one axis.

    Output cell j samples the input at ``(j + 0.5)/factor - 0.5`` (block-center
    alignment, clamped at the borders), which makes block-average downsampling
    followed by upsampling the identity on linear ramps away from the edges.
    """
    pos = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = (pos - i0).astype(dtype)
    w0 = (1.0 - w1).astype(dtype)
    return i0, i1, w0, w1


def _up1d(arr: np.ndarray, axis: int, factor: int):
    n = arr.shape[axis]
    i0, i1, w0, w1 = _up_axis_plan(n, factor, arr.dtype)
    a = np.moveaxis(arr, axis, 0)
    shape_w = (len(i0),) + (1,) * (a.ndim - 1)
    out = a[i0] * w0.reshape(shape_w) + a[i1] * w1.reshape(shape_w)
    return np.moveaxis(out, 0, axis), (n, i0, i1, w0, w1)


def _up1d_adjoint(g: np.ndarray, axis: int, plan) -> np.ndarray:
    n, i0, i1, w0, w1 = plan
    ga = np.moveaxis(g, axis, 0)
    shape_w = (len(i0),) + (1,) * (ga.ndim - 1)
    gi = np.zeros((n,) + ga.shape[1:], dtype=g.dtype)
    np.add.at(gi, i0, ga * w0.reshape(shape_w))
    np.add.at(gi, i1, ga * w1.reshape(shape_w))
    return np.moveaxis(gi, 0, axis)


def resample2d(x: GridTensor, factor: int, mode: str) -> GridTensor:
    """Resample the last two axes by an integer factor.

    ``down-average`` takes the mean of factor x factor blocks (both axes must
    divide); ``up-linear`` performs separable linear interpolation back to
    ``factor`` times the input size.
    """
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"resample2d: factor must be a positive int, got {factor!r}")
    if x.ndim < 2:
        raise DimensionError("resample2d needs at least two spatial axes")
    H, W = x.shape[-2], x.shape[-1]

    if mode == "down-average":
        if H % factor or W % factor:
            raise DimensionError(f"resample2d: {H}x{W} not divisible by {factor}")
        f = factor
        lead = x.shape[:-2]
        blocks = x.data.reshape(lead + (H // f, f, W // f, f))
        out = np.ascontiguousarray(blocks.mean(axis=(-3, -1)))

        def bw(g):
            ge = np.repeat(np.repeat(g, f, axis=-2), f, axis=-1)
            return (ge / float(f * f),)

        return make_node(out, (x,), bw, "resample2d.down")

    if mode == "up-linear":
        out_h, plan_h = _up1d(x.data, x.ndim - 2, factor)
        out, plan_w = _up1d(out_h, x.ndim - 1, factor)
        hax, wax = x.ndim - 2, x.ndim - 1

        def bw(g):
            gh = _up1d_adjoint(g, wax, plan_w)
            return (_up1d_adjoint(gh, hax, plan_h),)

        return make_node(np.ascontiguousarray(out), (x,), bw, "resample2d.up")

    raise ParameterError(f"resample2d: unknown mode {mode!r}")


def gap(x: GridTensor) -> GridTensor:
    """Global average pooling: ``(B,C,H,W) -> (B,C)``."""
    if x.ndim != 4:
        raise DimensionError(f"gap expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))
    n = H * W

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / n, (B, C, H, W)).astype(g.dtype, copy=False),)

    return make_node(np.ascontiguousarray(out), (x,), bw, "gap")


# -- linear and GRU ----------------------------------------------------------------


def linear(x: GridTensor, w: GridTensor, b: GridTensor | None = None) -> GridTensor:
    """Affine map ``(B,n) @ (m,n)^T + (m,)``."""
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"linear expects 2-d input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: inner dims disagree ({x.shape} vs {w.shape})")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data
    has_bias = b is not None

    def bw(g):
        gx = g @ wd
        gw = g.T @ xd
        if has_bias:
            return gx, gw, g.sum(axis=0)
        return gx, gw

    parents = (x, w, b) if has_bias else (x, w)
    return make_node(out, parents, bw, "linear")


@dataclass
class GRUParams:
    """Update (z), reset (r) and candidate (n) gate weights of one GRU cell."""
    wz: GridTensor
    uz: GridTensor
    bz: GridTensor
    wr: GridTensor
    ur: GridTensor
    br: GridTensor
    wn: GridTensor
    un: GridTensor
    bn: GridTensor

    def tensors(self):
        for name in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
            yield name, getattr(self, name)


def gru_cell_step(x: GridTensor, h: GridTensor, params: GRUParams) -> GridTensor:
    """One GRU step: h' = (1 - z) * n + z * h.

    z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn).
    """
    z = sigmoid(add(linear(x, params.wz, params.bz), linear(h, params.uz)))
    r = sigmoid(add(linear(x, params.wr, params.br), linear(h, params.ur)))
    n = tanh(add(linear(x, params.wn, params.bn), mul(r, linear(h, params.un))))
    return add(mul(sub(1.0, z), n), mul(z, h))
