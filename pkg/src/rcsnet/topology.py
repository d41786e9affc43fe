"""Road-map structural cues and the multi-scale road feature encoder.

A static road map is expanded into a 7-channel structural stack (occupancy,
centerline proximity, edge strength, orientation x/y, connectivity density,
intersection tendency) which a three-branch convolutional encoder turns into
the road feature consumed by the fusion stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import GridTensor
from .errors import DimensionError, ValidationError
from .initialization import ConvLayer, conv2d_layer

EPS = 1e-6

PRIOR_CHANNELS = ("occ", "cen", "edge", "ori_x", "ori_y", "con", "int")

_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])


@dataclass
class RoadMap:
    """Single-channel static road map, values in [0, 1], shape (1, H, W)."""
    grid: GridTensor

    def __post_init__(self):
        if self.grid.ndim != 3 or self.grid.shape[0] != 1:
            raise ValidationError(f"road map must be (1,H,W), got {self.grid.shape}")
        _, h, w = self.grid.shape
        if h < 8 or w < 8:
            raise ValidationError(f"road map must be at least 8x8, got {h}x{w}")
        lo, hi = float(self.grid.data.min()), float(self.grid.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"road map values outside [0,1]: [{lo}, {hi}]")

    @property
    def hw(self):
        return self.grid.shape[1], self.grid.shape[2]


@dataclass
class TopologyPrior:
    """7-channel structural stack derived from a road map, shape (7, H, W)."""
    channels: GridTensor

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != len(PRIOR_CHANNELS):
            raise ValidationError(
                f"prior must have {len(PRIOR_CHANNELS)} channels, got {self.channels.shape}")
        d = self.channels.data
        ori_sq = d[3] * d[3] + d[4] * d[4]
        if float(ori_sq.max()) > 1.0 + 1e-5:
            raise ValidationError("orientation channels exceed the unit bound")
        for idx, name in ((0, "occ"), (5, "con")):
            if float(d[idx].min()) < 0.0 or float(d[idx].max()) > 1.0:
                raise ValidationError(f"channel {name} outside [0,1]")

    @property
    def hw(self):
        return self.channels.shape[1], self.channels.shape[2]


def _stencil(x: GridTensor, kernel: np.ndarray) -> GridTensor:
    """Zero-padded 3x3 cross-correlation of a (1,H,W) map."""
    _, h, w = x.shape
    k = GridTensor(kernel[None, None].astype(x.dtype), dtype=x.dtype)
    out = E.conv2d(E.reshape(x, (1, 1, h, w)), k, padding=1)
    return E.reshape(out, (1, h, w))


def sobel_gradients(road: RoadMap):
    """Horizontal and vertical Sobel responses of the road map, zero-padded."""
    gx = _stencil(road.grid, _SOBEL_X)
    gy = _stencil(road.grid, _SOBEL_Y)
    return gx, gy


def extract_prior(road: RoadMap, pool_k: int = 5) -> TopologyPrior:
    """Build the 7-channel topology stack from a road map.

    Channel order is occ, cen, edge, ori_x, ori_y, con, int:

    * occ: the road map itself
    * cen: road map smoothed twice with a pool_k box (centerline surrogate,
      peaking at road interiors)
    * edge: sqrt(gx^2 + gy^2 + eps) from Sobel responses
    * ori_x, ori_y: Sobel responses normalized by the edge denominator
    * con: one pool_k box smoothing (connectivity density)
    * int: con weighted by the absolute Laplacian response
    """
    occ = road.grid
    gx, gy = sobel_gradients(road)
    mag_sq = E.add(E.square(gx), E.square(gy))
    edge = E.sqrt_eps(mag_sq, EPS)
    inv = E.rsqrt_eps(mag_sq, EPS)
    ori_x = E.mul(gx, inv)
    ori_y = E.mul(gy, inv)
    con = E.avg_pool2d(occ, pool_k)
    cen = E.avg_pool2d(con, pool_k)
    intersections = E.mul(con, E.absval(_stencil(occ, _LAPLACIAN)))
    stacked = E.concat([occ, cen, edge, ori_x, ori_y, con, intersections], axis=0)
    return TopologyPrior(stacked)


@dataclass
class RoadEncoderParams:
    """Three conv branches at full/half/quarter scale plus a 1x1 fusion."""
    branch_full: tuple
    branch_half: tuple
    branch_quarter: tuple
    fuse: ConvLayer
    width: int
    out_channels: int

    @staticmethod
    def init(rng, out_channels: int = 32, width: int = 16,
             dtype=np.float32) -> "RoadEncoderParams":
        def branch():
            return (conv2d_layer(rng, len(PRIOR_CHANNELS), width, 3, dtype),
                    conv2d_layer(rng, width, width, 3, dtype))

        bf, bh, bq = branch(), branch(), branch()
        fuse = conv2d_layer(rng, 3 * width, out_channels, 1, dtype)
        return RoadEncoderParams(bf, bh, bq, fuse, width, out_channels)

    def tensors(self):
        for bname, branch in (("full", self.branch_full), ("half", self.branch_half),
                              ("quarter", self.branch_quarter)):
            for i, layer in enumerate(branch):
                for n, t in layer.tensors():
                    yield f"{bname}.conv{i}.{n}", t
        for n, t in self.fuse.tensors():
            yield f"fuse.{n}", t


def _run_branch(x: GridTensor, branch) -> GridTensor:
    first, second = branch
    h = E.relu(E.conv2d(x, first.w, first.b, padding=1))
    return E.conv2d(h, second.w, second.b, padding=1)


def encode_road(prior: TopologyPrior, params: RoadEncoderParams) -> GridTensor:
    """Encode the topology stack into a (C_r, H, W) road feature.

    Branch one runs at full resolution; branches two and three run on 2x and
    4x block-averaged copies and are linearly upsampled back before the 1x1
    fusion. H and W must be divisible by 4.
    """
    h, w = prior.hw
    if h % 4 or w % 4:
        raise DimensionError(f"road encoder needs H, W divisible by 4, got {h}x{w}")
    x = E.reshape(prior.channels, (1, len(PRIOR_CHANNELS), h, w))
    full = _run_branch(x, params.branch_full)
    half = E.resample2d(_run_branch(E.resample2d(x, 2, "down-average"), params.branch_half),
                        2, "up-linear")
    quarter = E.resample2d(_run_branch(E.resample2d(x, 4, "down-average"), params.branch_quarter),
                           4, "up-linear")
    merged = E.conv2d(E.concat([full, half, quarter], axis=1), params.fuse.w, params.fuse.b)
    return E.reshape(merged, (params.out_channels, h, w))
