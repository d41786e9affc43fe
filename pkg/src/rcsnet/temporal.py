"""Multi-horizon temporal encoding of the historical traffic sequence.

A 3D stem projects the input movie into a shared feature volume; three
parallel temporally-dilated branches with increasing receptive fields run on
it, and a 1x1x1 fusion plus temporal mean collapses the result to a
(B, C_t, H, W) map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import GridTensor
from .errors import ConfigurationError, ParameterError
from .initialization import ConvLayer, conv3d_layer


@dataclass(frozen=True)
class BranchSpec:
    """Temporal kernel size and dilation of one encoder branch."""
    name: str
    k: int
    d: int

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ParameterError(f"branch {self.name}: kernel must be odd, got {self.k}")
        if self.d < 1:
            raise ParameterError(f"branch {self.name}: dilation must be >= 1, got {self.d}")


DEFAULT_BRANCHES = (BranchSpec("short", 3, 1),
                    BranchSpec("mid", 3, 2),
                    BranchSpec("long", 3, 4))


def receptive_field(spec: BranchSpec) -> int:
    """Frames visible to a branch: 1 + (k - 1) * d."""
    return 1 + (spec.k - 1) * spec.d


@dataclass
class TemporalEncoderParams:
    stem: ConvLayer
    branches: list
    fuse: ConvLayer
    base: int
    out_channels: int

    @staticmethod
    def init(rng, in_channels: int = 8, base: int = 32,
             specs=DEFAULT_BRANCHES, dtype=np.float32) -> "TemporalEncoderParams":
        specs = tuple(specs)
        if len(specs) != 3:
            raise ConfigurationError(f"exactly three branches required, got {len(specs)}")
        fields = [receptive_field(s) for s in specs]
        if not (fields[0] < fields[1] < fields[2]):
            raise ConfigurationError(
                f"branch receptive fields must be strictly increasing, got {fields}")
        stem = conv3d_layer(rng, in_channels, base, 3, 3, dtype)
        branches = [(s, conv3d_layer(rng, base, base, s.k, 3, dtype)) for s in specs]
        fuse = conv3d_layer(rng, 3 * base, 2 * base, 1, 1, dtype)
        return TemporalEncoderParams(stem, branches, fuse, base, 2 * base)

    def tensors(self):
        for n, t in self.stem.tensors():
            yield f"stem.{n}", t
        for spec, layer in self.branches:
            for n, t in layer.tensors():
                yield f"branch_{spec.name}.{n}", t
        for n, t in self.fuse.tensors():
            yield f"fuse.{n}", t


def _check_window(params: TemporalEncoderParams, t_in: int) -> None:
    for spec, _ in params.branches:
        r = receptive_field(spec)
        if r > t_in:
            raise ConfigurationError(
                f"branch {spec.name} needs {r} frames but the window has {t_in}")


def branch_features(x: GridTensor, params: TemporalEncoderParams) -> list:
    """Per-branch feature volumes before fusion (kept for locality checks)."""
    _check_window(params, x.shape[2])
    f0 = E.conv3d(x, params.stem.w, params.stem.b, padding=1)
    out = []
    for spec, layer in params.branches:
        pad_t = spec.d * (spec.k - 1) // 2
        out.append(E.conv3d(f0, layer.w, layer.b,
                            padding=(pad_t, 1, 1), dilation=(spec.d, 1, 1)))
    return out

def encode_traffic(x: GridTensor, params: TemporalEncoderParams) -> GridTensor:
    """(B, C, T_in, H, W) -> (B, C_t, H, W).

    Branches keep the temporal length via zero padding; after concatenation,
    1x1x1 fusion and relu, the temporal axis is collapsed by its mean.
    """
    fused = E.conv3d(E.concat(branch_features(x, params), axis=1),
                     params.fuse.w, params.fuse.b)
    return E.mean(E.relu(fused), axis=2)
