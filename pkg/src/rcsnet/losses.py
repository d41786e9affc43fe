"""The composite training objective.

total = pred + lambda_s * struct + lambda_t * temp + lambda_e * edge, where
pred is plain MSE, struct reweights squared errors on road cells, temp matches
frame-to-frame deltas and edge matches forward-difference spatial gradients.
All reductions are element means so the coefficients stay scale-stable across
grid sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import GridTensor
from .errors import DimensionError, ParameterError
from .topology import RoadMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 0.5
    lambda_t: float = 0.2
    lambda_e: float = 0.1
    gamma: float = 5.0
    tau: float = 0.05

    def __post_init__(self):
        for name in ("lambda_s", "lambda_t", "lambda_e", "tau"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.gamma < 1.0:
            raise ParameterError(f"gamma must be >= 1, got {self.gamma}")


@dataclass
class LossBreakdown:
    """Scalar loss tensors; ``total`` carries the full graph for backward."""
    pred: GridTensor
    struct: GridTensor
    temp: GridTensor
    edge: GridTensor
    total: GridTensor

    def values(self) -> dict:
        return {name: getattr(self, name).item()
                for name in ("pred", "struct", "temp", "edge", "total")}


def _check_pair(yhat: GridTensor, y: GridTensor) -> None:
    if yhat.shape != y.shape:
        raise DimensionError(f"prediction {yhat.shape} vs target {y.shape}")
    if yhat.ndim != 5:
        raise DimensionError(f"expected (B,T,C,H,W), got {yhat.shape}")


def pred_loss(yhat: GridTensor, y: GridTensor) -> GridTensor:
    """Mean squared error over every element."""
    _check_pair(yhat, y)
    return E.mean_all(E.square(E.sub(yhat, y)))


def struct_loss(yhat: GridTensor, y: GridTensor, road: RoadMap,
                weights: LossWeights) -> GridTensor:
    """Squared error with weight gamma on cells where road > tau, else 1."""
    _check_pair(yhat, y)
    h, w = road.hw
    if yhat.shape[3:] != (h, w):
        raise DimensionError(f"road map {h}x{w} does not match frames {yhat.shape[3:]}")
    cell_w = np.where(road.grid.data[0] > weights.tau, weights.gamma, 1.0)
    cell_w = GridTensor(cell_w.reshape(1, 1, 1, h, w).astype(yhat.dtype), dtype=yhat.dtype)
    return E.mean_all(E.mul(cell_w, E.square(E.sub(yhat, y))))


def temp_loss(yhat: GridTensor, y: GridTensor) -> GridTensor:
    """MSE between predicted and true frame-to-frame changes."""
    _check_pair(yhat, y)
    t = yhat.shape[1]
    if t < 2:
        log.info("temporal loss skipped: horizon %d has no frame deltas", t)
        return GridTensor(np.zeros((), dtype=yhat.dtype), dtype=yhat.dtype)
    d_hat = E.sub(E.narrow(yhat, 1, 1, t - 1), E.narrow(yhat, 1, 0, t - 1))
    d_true = E.sub(E.narrow(y, 1, 1, t - 1), E.narrow(y, 1, 0, t - 1))
    return E.mean_all(E.square(E.sub(d_hat, d_true)))


def edge_loss(yhat: GridTensor, y: GridTensor) -> GridTensor:
    """Mean absolute difference of forward-difference spatial gradients."""
    _check_pair(yhat, y)
    h, w = yhat.shape[3], yhat.shape[4]
    if h < 2 or w < 2:
        raise DimensionError(f"edge loss needs H, W >= 2, got {h}x{w}")

    def grad(t: GridTensor, axis: int, n: int) -> GridTensor:
        return E.sub(E.narrow(t, axis, 1, n - 1), E.narrow(t, axis, 0, n - 1))

    diff_x = E.sub(grad(yhat, 4, w), grad(y, 4, w))
    diff_y = E.sub(grad(yhat, 3, h), grad(y, 3, h))
    return E.add(E.mean_all(E.absval(diff_x)), E.mean_all(E.absval(diff_y)))


def total_loss(yhat: GridTensor, y: GridTensor, road: RoadMap,
               weights: LossWeights) -> LossBreakdown:
    """All four terms plus their weighted sum."""
    p = pred_loss(yhat, y)
    s = struct_loss(yhat, y, road, weights)
    t = temp_loss(yhat, y)
    e = edge_loss(yhat, y)
    total = E.add(E.add(p, E.mul(s, weights.lambda_s)),
                  E.add(E.mul(t, weights.lambda_t), E.mul(e, weights.lambda_e)))
    return LossBreakdown(pred=p, struct=s, temp=t, edge=e, total=total)
