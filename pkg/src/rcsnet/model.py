"""Full forecasting model: parameter collection and forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderParams, decode
from .engine import GridTensor
from .fusion import FusionParams, fuse
from .temporal import DEFAULT_BRANCHES, TemporalEncoderParams, encode_traffic
from .topology import RoadEncoderParams, TopologyPrior, encode_road

TRAFFIC_CHANNELS = 8


@dataclass
class ModelState:
    """All learnable tensors plus the architecture hyperparameters."""
    road_encoder: RoadEncoderParams
    temporal: TemporalEncoderParams
    fusion: FusionParams
    decoder: DecoderParams
    base_channels: int
    hidden: int
    t_in: int
    t_out: int
    branch_specs: tuple = field(default=DEFAULT_BRANCHES)

    @staticmethod
    def init(rng: np.random.Generator, base_channels: int = 32, hidden: int = 128,
             t_in: int = 12, t_out: int = 12, branch_specs=DEFAULT_BRANCHES,
             dtype=np.float32) -> "ModelState":
        c_r = base_channels
        c_t = 2 * base_channels
        return ModelState(
            road_encoder=RoadEncoderParams.init(rng, out_channels=c_r, dtype=dtype),
            temporal=TemporalEncoderParams.init(rng, in_channels=TRAFFIC_CHANNELS,
                                                base=base_channels, specs=branch_specs,
                                                dtype=dtype),
            fusion=FusionParams.init(rng, road_channels=c_r, traffic_channels=c_t, dtype=dtype),
            decoder=DecoderParams.init(rng, channels=c_t, hidden=hidden, dtype=dtype),
            base_channels=base_channels,
            hidden=hidden,
            t_in=t_in,
            t_out=t_out,
            branch_specs=tuple(branch_specs),
        )

    def named_parameters(self) -> dict:
        out = {}
        for prefix, group in (("road", self.road_encoder), ("temporal", self.temporal),
                              ("fusion", self.fusion), ("decoder", self.decoder)):
            for name, tensor in group.tensors():
                out[f"{prefix}.{name}"] = tensor
        return out

    def forward(self, x: GridTensor, prior: TopologyPrior) -> GridTensor:
        """(B, 8, T_in, H, W) traffic plus a topology stack -> (B, T_out, 8, H, W)."""
        road_feature = encode_road(prior, self.road_encoder)
        traffic_feature = encode_traffic(x, self.temporal)
        conditioned = fuse(traffic_feature, road_feature, self.fusion)
        return decode(conditioned, self.decoder, self.t_out).frames
