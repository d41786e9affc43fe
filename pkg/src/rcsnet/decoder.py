"""Progressive multi-step forecast decoding.

A shared spatial context is refined from the fused representation once; a GRU
then rolls a hidden state across the forecast horizon. Each step contributes
an additive per-channel embedding to the context, runs the shared head, and
emits directional volume and speed maps that are interleaved into the
8-channel frame. The pooled step feature feeds the next recurrence input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import GridTensor, GRUParams
from .errors import DimensionError, ParameterError
from .initialization import (ConvLayer, LinearLayer, conv2d_layer, gru_layer,
                             linear_layer)

HEAD_CHANNELS = 4


@dataclass
class DecoderParams:
    ctx_a: ConvLayer          # 3x3, C_f -> C_f
    ctx_b: ConvLayer          # 3x3, C_f -> C_f
    init_hidden: LinearLayer  # C_f -> hidden
    gru: GRUParams            # input C_f, state hidden
    step_embed: LinearLayer   # hidden -> C_f
    head_shared: ConvLayer    # 3x3, C_f -> C_f
    head_volume: ConvLayer    # 1x1, C_f -> 4
    head_speed: ConvLayer     # 1x1, C_f -> 4
    channels: int
    hidden: int

    @staticmethod
    def init(rng, channels: int, hidden: int = 128, dtype=np.float32) -> "DecoderParams":
        return DecoderParams(
            ctx_a=conv2d_layer(rng, channels, channels, 3, dtype),
            ctx_b=conv2d_layer(rng, channels, channels, 3, dtype),
            init_hidden=linear_layer(rng, channels, hidden, dtype),
            gru=gru_layer(rng, channels, hidden, dtype),
            step_embed=linear_layer(rng, hidden, channels, dtype),
            head_shared=conv2d_layer(rng, channels, channels, 3, dtype),
            head_volume=conv2d_layer(rng, channels, HEAD_CHANNELS, 1, dtype),
            head_speed=conv2d_layer(rng, channels, HEAD_CHANNELS, 1, dtype),
            channels=channels,
            hidden=hidden,
        )

    def tensors(self):
        for name, layer in (("ctx_a", self.ctx_a), ("ctx_b", self.ctx_b),
                            ("init_hidden", self.init_hidden), ("step_embed", self.step_embed),
                            ("head_shared", self.head_shared), ("head_volume", self.head_volume),
                            ("head_speed", self.head_speed)):
            for n, t in layer.tensors():
                yield f"{name}.{n}", t
        for n, t in self.gru.tensors():
            yield f"gru.{n}", t


@dataclass
class Forecast:
    """Predicted future frames, (B, T_out, 8, H, W), normalized units.

    Channel order alternates volume and speed per direction:
    [vol_0, spd_0, vol_1, spd_1, vol_2, spd_2, vol_3, spd_3].
    """
    frames: GridTensor


def interleave(vol: GridTensor, spd: GridTensor) -> GridTensor:
    """Merge (B,4,H,W) volume and speed maps into (B,8,H,W), volume first."""
    if vol.ndim != 4 or vol.shape[1] != HEAD_CHANNELS:
        raise DimensionError(f"interleave: volume must be (B,4,H,W), got {vol.shape}")
    if spd.shape != vol.shape:
        raise DimensionError(f"interleave: shapes disagree {vol.shape} vs {spd.shape}")
    b, _, h, w = vol.shape
    paired = E.stack([vol, spd], axis=2)           # (B,4,2,H,W)
    return E.reshape(paired, (b, 2 * HEAD_CHANNELS, h, w))


def deinterleave(frame: GridTensor):
    """Inverse of :func:`interleave`."""
    if frame.ndim != 4 or frame.shape[1] != 2 * HEAD_CHANNELS:
        raise DimensionError(f"deinterleave: expected (B,8,H,W), got {frame.shape}")
    b, _, h, w = frame.shape
    paired = E.reshape(frame, (b, HEAD_CHANNELS, 2, h, w))
    vol = E.reshape(E.narrow(paired, 2, 0, 1), (b, HEAD_CHANNELS, h, w))
    spd = E.reshape(E.narrow(paired, 2, 1, 1), (b, HEAD_CHANNELS, h, w))
    return vol, spd


def _context(fused: GridTensor, params: DecoderParams) -> GridTensor:
    h = E.relu(E.conv2d(fused, params.ctx_a.w, params.ctx_a.b, padding=1))
    return E.conv2d(h, params.ctx_b.w, params.ctx_b.b, padding=1)


def _emit_frame(step_feature: GridTensor, params: DecoderParams) -> GridTensor:
    q = E.relu(E.conv2d(step_feature, params.head_shared.w, params.head_shared.b, padding=1))
    vol = E.conv2d(q, params.head_volume.w, params.head_volume.b)
    spd = E.conv2d(q, params.head_speed.w, params.head_speed.b)
    return interleave(vol, spd)


def decode(fused: GridTensor, params: DecoderParams, t_out: int) -> Forecast:
    """Roll the recurrence for ``t_out`` steps over a (B, C_f, H, W) input."""
    if t_out < 1:
        raise ParameterError(f"t_out must be >= 1, got {t_out}")
    if fused.ndim != 4:
        raise DimensionError(f"decode expects (B,C,H,W), got {fused.shape}")
    b, c, _, _ = fused.shape
    ctx = _context(fused, params)
    z = E.gap(ctx)
    h = E.tanh(E.linear(z, params.init_hidden.w, params.init_hidden.b))
    frames = []
    for _ in range(t_out):
        h = E.gru_cell_step(z, h, params.gru)
        embed = E.linear(h, params.step_embed.w, params.step_embed.b)
        step = E.add(ctx, E.reshape(embed, (b, c, 1, 1)))
        frames.append(_emit_frame(step, params))
        z = E.gap(step)
    return Forecast(E.stack(frames, axis=1))
