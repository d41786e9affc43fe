"""Direction-aware conditioning of traffic features on the road feature.

The road feature drives three gates: a channel attention vector, a spatial
gate, and a four-channel direction gate. The gated traffic feature, the
projected road feature and the direction gate are fused by two 3x3
convolutions whose final layer starts at zero, so a freshly initialized
module is an exact identity on the traffic feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import GridTensor
from .errors import DimensionError
from .initialization import (ConvLayer, LinearLayer, conv2d_layer,
                             linear_layer, zeros_param)

NORM_EPS = 1e-6
DIRECTION_CHANNELS = 4


@dataclass
class FusionParams:
    road_proj: ConvLayer          # 1x1, C_r -> C_t
    norm_scale: GridTensor        # per-channel affine after standardization
    norm_shift: GridTensor
    chan_reduce: LinearLayer      # C_t -> C_t/4
    chan_expand: LinearLayer      # C_t/4 -> C_t
    spatial: ConvLayer            # 1x1, C_r -> 1
    dir_pre: ConvLayer            # 3x3, C_r -> C_t
    dir_out: ConvLayer            # 1x1, C_t -> 4
    fuse_pre: ConvLayer           # 3x3, (2*C_t+4) -> C_f
    fuse_out: ConvLayer           # 3x3, C_f -> C_f, zero-initialized
    road_channels: int
    traffic_channels: int

    @staticmethod
    def init(rng, road_channels: int, traffic_channels: int,
             dtype=np.float32) -> "FusionParams":
        ct = traffic_channels
        bottleneck = max(1, ct // 4)
        return FusionParams(
            road_proj=conv2d_layer(rng, road_channels, ct, 1, dtype),
            norm_scale=GridTensor(np.ones(ct, dtype=dtype), requires_grad=True, dtype=dtype),
            norm_shift=zeros_param((ct,), dtype),
            chan_reduce=linear_layer(rng, ct, bottleneck, dtype),
            chan_expand=linear_layer(rng, bottleneck, ct, dtype),
            spatial=conv2d_layer(rng, road_channels, 1, 1, dtype),
            dir_pre=conv2d_layer(rng, road_channels, ct, 3, dtype),
            dir_out=conv2d_layer(rng, ct, DIRECTION_CHANNELS, 1, dtype),
            fuse_pre=conv2d_layer(rng, 2 * ct + DIRECTION_CHANNELS, ct, 3, dtype),
            fuse_out=conv2d_layer(rng, ct, ct, 3, dtype, zero=True),
            road_channels=road_channels,
            traffic_channels=ct,
        )

    def tensors(self):
        for name, layer in (("road_proj", self.road_proj), ("chan_reduce", self.chan_reduce),
                            ("chan_expand", self.chan_expand), ("spatial", self.spatial),
                            ("dir_pre", self.dir_pre), ("dir_out", self.dir_out),
                            ("fuse_pre", self.fuse_pre), ("fuse_out", self.fuse_out)):
            for n, t in layer.tensors():
                yield f"{name}.{n}", t
        yield "norm_scale", self.norm_scale
        yield "norm_shift", self.norm_shift


def _standardize(x: GridTensor, scale: GridTensor, shift: GridTensor) -> GridTensor:
    """Per-sample, per-channel standardization over space with learned affine."""
    c = x.shape[1]
    mu = E.mean(x, (2, 3), keepdims=True)
    centered = E.sub(x, mu)
    var = E.mean(E.square(centered), (2, 3), keepdims=True)
    normed = E.mul(centered, E.rsqrt_eps(var, NORM_EPS))
    return E.add(E.mul(normed, E.reshape(scale, (1, c, 1, 1))),
                 E.reshape(shift, (1, c, 1, 1)))


def _projected_road(road_feature: GridTensor, params: FusionParams) -> GridTensor:
    c_r, h, w = road_feature.shape
    r = E.reshape(road_feature, (1, c_r, h, w))
    proj = E.conv2d(r, params.road_proj.w, params.road_proj.b)
    return E.relu(_standardize(proj, params.norm_scale, params.norm_shift))


def fusion_gates(road_feature: GridTensor, params: FusionParams) -> dict:
    """Channel, spatial and direction gates driven by the road feature alone."""
    c_r, h, w = road_feature.shape
    r = E.reshape(road_feature, (1, c_r, h, w))
    proj = _projected_road(road_feature, params)
    squeezed = E.relu(E.linear(E.gap(proj), params.chan_reduce.w, params.chan_reduce.b))
    chan = E.sigmoid(E.linear(squeezed, params.chan_expand.w, params.chan_expand.b))
    chan = E.reshape(chan, (1, params.traffic_channels, 1, 1))
    spatial = E.sigmoid(E.conv2d(r, params.spatial.w, params.spatial.b))
    direction = E.sigmoid(E.conv2d(
        E.relu(E.conv2d(r, params.dir_pre.w, params.dir_pre.b, padding=1)),
        params.dir_out.w, params.dir_out.b))
    return {"channel": chan, "spatial": spatial, "direction": direction, "road_proj": proj}


def fuse(traffic: GridTensor, road_feature: GridTensor, params: FusionParams) -> GridTensor:
    """Condition (B, C_t, H, W) traffic features on a (C_r, H, W) road feature.

    Returns traffic + refinement, so the output keeps the traffic shape; with
    a zero final fusion layer the refinement vanishes and the call is an
    exact identity.
    """
    if traffic.ndim != 4 or road_feature.ndim != 3:
        raise DimensionError(
            f"fuse expects (B,C,H,W) traffic and (C,H,W) road feature, "
            f"got {traffic.shape} and {road_feature.shape}")
    if traffic.shape[2:] != road_feature.shape[1:]:
        raise DimensionError(
            f"spatial sizes disagree: {traffic.shape[2:]} vs {road_feature.shape[1:]}")
    b = traffic.shape[0]
    h, w = road_feature.shape[1:]
    gates = fusion_gates(road_feature, params)
    gated = E.mul(E.mul(traffic, gates["channel"]), gates["spatial"])
    stacked = E.concat([
        gated,
        E.broadcast_to(gates["road_proj"], (b, params.traffic_channels, h, w)),
        E.broadcast_to(gates["direction"], (b, DIRECTION_CHANNELS, h, w)),
    ], axis=1)
    refined = E.conv2d(E.relu(E.conv2d(stacked, params.fuse_pre.w, params.fuse_pre.b, padding=1)),
                       params.fuse_out.w, params.fuse_out.b, padding=1)
    return E.add(traffic, refined)
