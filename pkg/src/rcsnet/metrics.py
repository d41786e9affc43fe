"""Forecast quality and road-structure consistency measurement.

All metrics operate on denormalized numpy arrays. Frame tensors are
(T, C, H, W) or batched (B, T, C, H, W); a cell counts as active when its
channel mean exceeds ``theta_act``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

# "active" threshold on the channel mean in denormalized units; scale it to
# the data (0.1 is a few percent of this package's synthetic speed cap, and
# puts off-road activation rates in a regime where they measure material
# bleed instead of sub-percent numerical residue)
THETA_ACT = 0.1
SSIM_WINDOW = 7


def _check_same(yhat: np.ndarray, y: np.ndarray) -> None:
    if yhat.shape != y.shape:
        raise DimensionError(f"shape mismatch {yhat.shape} vs {y.shape}")


def mae(yhat: np.ndarray, y: np.ndarray) -> float:
    _check_same(yhat, y)
    return float(np.mean(np.abs(yhat.astype(np.float64) - y.astype(np.float64))))


def mse(yhat: np.ndarray, y: np.ndarray) -> float:
    _check_same(yhat, y)
    d = yhat.astype(np.float64) - y.astype(np.float64)
    return float(np.mean(d * d))


def rmse(yhat: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(mse(yhat, y)))


def horizon_frame_index(minutes: int, minutes_per_frame: int) -> int:
    """Frame index covering a wall-clock horizon: ceil(h / mpf) - 1."""
    if minutes < 1 or minutes_per_frame < 1:
        raise ParameterError("horizon and frame duration must be positive")
    return -(-minutes // minutes_per_frame) - 1


def horizon_slice(yhat: np.ndarray, y: np.ndarray, minutes_per_frame: int,
                  horizons) -> dict:
    """Cumulative MAE/MSE/RMSE over frames up to each horizon.

    Frames are axis 0 of (T, C, H, W) inputs (use per-sample arrays).
    """
    _check_same(yhat, y)
    t_out = yhat.shape[0]
    table = {}
    for minutes in horizons:
        idx = horizon_frame_index(minutes, minutes_per_frame)
        if idx >= t_out:
            raise ParameterError(
                f"horizon {minutes} min needs frame {idx + 1}, forecast has {t_out}")
        table[minutes] = {
            "mae": mae(yhat[:idx + 1], y[:idx + 1]),
            "mse": mse(yhat[:idx + 1], y[:idx + 1]),
            "rmse": rmse(yhat[:idx + 1], y[:idx + 1]),
        }
    return table


def active_cells(frames: np.ndarray, theta_act: float = THETA_ACT) -> np.ndarray:
    """Boolean (..., H, W) map of cells whose channel mean exceeds theta_act.

    The channel axis is the third from the right of (..., C, H, W).
    """
    if frames.ndim < 3:
        raise DimensionError(f"expected (..., C, H, W), got {frames.shape}")
    return frames.mean(axis=-3) > theta_act


def road_structure_metrics(yhat: np.ndarray, y: np.ndarray, road: np.ndarray,
                           tau: float = 0.05, theta_act: float = THETA_ACT) -> tuple:
    """(road_mae, offroad_activation_rate, road_coverage_recall).

    road is an (H, W) map in [0, 1]; road cells are those above tau. Rates
    use the convention 0 / max(1, n) so empty active sets yield zero.
    """
    _check_same(yhat, y)
    if road.shape != yhat.shape[-2:]:
        raise DimensionError(f"road {road.shape} does not match frames {yhat.shape[-2:]}")
    on_road = road > tau
    road_mae = mae(yhat[..., on_road], y[..., on_road]) if on_road.any() else 0.0
    pred_active = active_cells(yhat, theta_act)
    gt_active = active_cells(y, theta_act)
    n_pred = int(pred_active.sum())
    n_offroad = int((pred_active & ~on_road).sum())
    gt_road = gt_active & on_road
    n_gt_road = int(gt_road.sum())
    n_hit = int((pred_active & gt_road).sum())
    offroad_rate = n_offroad / max(1, n_pred)
    coverage_recall = n_hit / max(1, n_gt_road)
    return road_mae, offroad_rate, coverage_recall


def nonzero_cells(frame: np.ndarray, theta_act: float = THETA_ACT) -> int:
    """Count of active spatial cells in one (C, H, W) frame."""
    if frame.ndim != 3:
        raise DimensionError(f"expected (C, H, W), got {frame.shape}")
    return int(active_cells(frame, theta_act).sum())


def ssim(frame_a: np.ndarray, frame_b: np.ndarray) -> float:
    """Structural similarity of two single-channel maps, frame_b as reference.

    Uniform 7x7 window over valid positions, stabilizers C1 = (0.01 L)^2 and
    C2 = (0.03 L)^2 with L = max(frame_b, 1e-6).
    """
    _check_same(frame_a, frame_b)
    if frame_a.ndim != 2:
        raise DimensionError(f"ssim expects 2-d maps, got {frame_a.shape}")
    h, w = frame_a.shape
    k = SSIM_WINDOW
    if h < k or w < k:
        raise ParameterError(f"maps must be at least {k}x{k} for ssim, got {h}x{w}")
    a = frame_a.astype(np.float64)
    b = frame_b.astype(np.float64)
    level = max(float(b.max()), 1e-6)
    c1 = (0.01 * level) ** 2
    c2 = (0.03 * level) ** 2
    wa = sliding_window_view(a, (k, k))
    wb = sliding_window_view(b, (k, k))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
    return float(score.mean())


def historical_average(x: np.ndarray, t_out: int) -> np.ndarray:
    """Repeat the temporal mean of (C, T_in, H, W) input for t_out frames."""
    if x.ndim != 4:
        raise DimensionError(f"expected (C, T_in, H, W), got {x.shape}")
    if t_out < 1:
        raise ParameterError(f"t_out must be >= 1, got {t_out}")
    mean_frame = x.mean(axis=1)
    return np.repeat(mean_frame[None], t_out, axis=0)


# -- streaming aggregation over a split -------------------------------------------------


@dataclass
class MetricReport:
    mae: float
    mse: float
    rmse: float
    per_horizon: dict
    road_mae: float
    offroad_activation_rate: float
    road_coverage_recall: float
    ssim_per_frame: list
    nonzero_cells_pred: list
    nonzero_cells_gt: list

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "rmse": self.rmse,
            "per_horizon": {str(k): v for k, v in self.per_horizon.items()},
            "road_mae": self.road_mae,
            "offroad_activation_rate": self.offroad_activation_rate,
            "road_coverage_recall": self.road_coverage_recall,
            "ssim_per_frame": self.ssim_per_frame,
            "nonzero_cells_pred": self.nonzero_cells_pred,
            "nonzero_cells_gt": self.nonzero_cells_gt,
        }


@dataclass
class MetricAccumulator:
    """Reduces per-sample errors by summing counts and error accumulators.

    Feed denormalized (T, C, H, W) prediction/target pairs; the road map is
    fixed per accumulator.
    """
    road: np.ndarray
    minutes_per_frame: int = 5
    horizons: tuple = (5, 15, 30, 45, 60)
    tau: float = 0.05
    theta_act: float = THETA_ACT
    _n: int = 0
    _abs_sum: float = 0.0
    _sq_sum: float = 0.0
    _frame_abs: np.ndarray = None
    _frame_sq: np.ndarray = None
    _frame_count: np.ndarray = None
    _road_abs: float = 0.0
    _road_n: int = 0
    _n_pred_active: int = 0
    _n_offroad: int = 0
    _n_gt_road: int = 0
    _n_hit: int = 0
    _ssim_sum: np.ndarray = None
    _nz_pred: np.ndarray = None
    _nz_gt: np.ndarray = None
    _samples: int = 0
    _err_map: np.ndarray = field(default=None)

    def update(self, yhat: np.ndarray, y: np.ndarray) -> None:
        _check_same(yhat, y)
        t_out = yhat.shape[0]
        if self._frame_abs is None:
            self._frame_abs = np.zeros(t_out, dtype=np.float64)
            self._frame_sq = np.zeros(t_out, dtype=np.float64)
            self._frame_count = np.zeros(t_out, dtype=np.int64)
            self._ssim_sum = np.zeros(t_out, dtype=np.float64)
            self._nz_pred = np.zeros(t_out, dtype=np.int64)
            self._nz_gt = np.zeros(t_out, dtype=np.int64)
            self._err_map = np.zeros(yhat.shape[-2:], dtype=np.float64)
        d = yhat.astype(np.float64) - y.astype(np.float64)
        ad = np.abs(d)
        self._n += d.size
        self._abs_sum += float(ad.sum())
        self._sq_sum += float((d * d).sum())
        per_frame = d.reshape(t_out, -1)
        self._frame_abs += np.abs(per_frame).sum(axis=1)
        self._frame_sq += (per_frame * per_frame).sum(axis=1)
        self._frame_count += per_frame.shape[1]
        self._err_map += ad.mean(axis=(0, 1))

        on_road = self.road > self.tau
        if on_road.any():
            self._road_abs += float(ad[..., on_road].sum())
            self._road_n += int(on_road.sum()) * t_out * yhat.shape[1]
        pred_active = active_cells(yhat, self.theta_act)
        gt_active = active_cells(y, self.theta_act)
        self._n_pred_active += int(pred_active.sum())
        self._n_offroad += int((pred_active & ~on_road).sum())
        gt_road = gt_active & on_road
        self._n_gt_road += int(gt_road.sum())
        self._n_hit += int((pred_active & gt_road).sum())
        self._nz_pred += pred_active.reshape(t_out, -1).sum(axis=1)
        self._nz_gt += gt_active.reshape(t_out, -1).sum(axis=1)
        for t in range(t_out):
            self._ssim_sum[t] += ssim(yhat[t].mean(axis=0), y[t].mean(axis=0))
        self._samples += 1

    def error_heatmap(self) -> np.ndarray:
        """Per-cell absolute error, averaged over samples, frames and channels."""
        if self._samples == 0:
            raise ParameterError("no samples accumulated")
        return (self._err_map / self._samples).astype(np.float32)

    def report(self) -> MetricReport:
        if self._samples == 0:
            raise ParameterError("no samples accumulated")
        total_mse = self._sq_sum / self._n
        per_horizon = {}
        for minutes in self.horizons:
            idx = horizon_frame_index(minutes, self.minutes_per_frame)
            if idx >= len(self._frame_abs):
                continue
            n = int(self._frame_count[:idx + 1].sum())
            h_mse = float(self._frame_sq[:idx + 1].sum()) / n
            per_horizon[minutes] = {
                "mae": float(self._frame_abs[:idx + 1].sum()) / n,
                "mse": h_mse,
                "rmse": float(np.sqrt(h_mse)),
            }
        return MetricReport(
            mae=self._abs_sum / self._n,
            mse=total_mse,
            rmse=float(np.sqrt(total_mse)),
            per_horizon=per_horizon,
            road_mae=self._road_abs / max(1, self._road_n),
            offroad_activation_rate=self._n_offroad / max(1, self._n_pred_active),
            road_coverage_recall=self._n_hit / max(1, self._n_gt_road),
            ssim_per_frame=[float(v / self._samples) for v in self._ssim_sum],
            nonzero_cells_pred=[int(v) for v in self._nz_pred],
            nonzero_cells_gt=[int(v) for v in self._nz_gt],
        )
