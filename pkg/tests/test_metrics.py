"""Metric formulas against enumeration and formula oracles."""

import numpy as np
import pytest

from rcsnet.errors import DimensionError, ParameterError
from rcsnet.metrics import (MetricAccumulator, active_cells, historical_average,
                            horizon_frame_index, horizon_slice, mae, mse,
                            nonzero_cells, road_structure_metrics, rmse, ssim)

from oracles import ssim_loop


def test_mae_mse_rmse_hand_case():
    yhat = np.array([1.0, 2.0])
    y = np.array([0.0, 0.0])
    assert mae(yhat, y) == pytest.approx(1.5)
    assert mse(yhat, y) == pytest.approx(2.5)
    assert rmse(yhat, y) == pytest.approx(np.sqrt(2.5))


def test_metrics_zero_at_equality_and_symmetric():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(2, 3, 4, 4))
    assert mae(a, a) == 0.0 and mse(a, a) == 0.0 and rmse(a, a) == 0.0
    assert mae(a, b) == mae(b, a)
    assert mse(a, b) == mse(b, a)


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=(2, 2, 3, 3))
    abs_acc, sq_acc, n = 0.0, 0.0, 0
    for idx in np.ndindex(*a.shape):
        d = float(a[idx]) - float(b[idx])
        abs_acc += abs(d)
        sq_acc += d * d
        n += 1
    assert mae(a, b) == pytest.approx(abs_acc / n, rel=1e-7)
    assert mse(a, b) == pytest.approx(sq_acc / n, rel=1e-7)
    assert rmse(a, b) ** 2 == pytest.approx(mse(a, b), rel=1e-6)


def test_horizon_frame_index():
    assert horizon_frame_index(5, 5) == 0
    assert horizon_frame_index(15, 5) == 2
    assert horizon_frame_index(60, 5) == 11
    assert horizon_frame_index(7, 5) == 1


def test_horizon_slice_consistency():
    rng = np.random.default_rng(2)
    yhat = rng.normal(size=(12, 2, 4, 4))
    y = rng.normal(size=(12, 2, 4, 4))
    table = horizon_slice(yhat, y, 5, [5, 60])
    assert table[5]["mae"] == pytest.approx(mae(yhat[:1], y[:1]))
    assert table[60]["mae"] == pytest.approx(mae(yhat, y))
    assert table[60]["rmse"] == pytest.approx(rmse(yhat, y))


def test_horizon_slice_two_frame_hand_case():
    yhat = np.zeros((2, 1, 1, 1))
    y = np.zeros((2, 1, 1, 1))
    yhat[0] = 1.0   # error 1 in frame 1
    yhat[1] = 3.0   # error 3 in frame 2
    table = horizon_slice(yhat, y, 5, [5, 10])
    assert table[5]["mae"] == pytest.approx(1.0)
    assert table[10]["mae"] == pytest.approx(2.0)   # cumulative over both frames
    assert table[10]["mse"] == pytest.approx(5.0)


def test_horizon_beyond_forecast_rejected():
    yhat = np.zeros((2, 1, 2, 2))
    with pytest.raises(ParameterError):
        horizon_slice(yhat, yhat, 5, [30])


def test_road_structure_perfect_prediction():
    rng = np.random.default_rng(3)
    road = (rng.uniform(size=(6, 6)) > 0.5).astype(np.float64)
    y = np.zeros((2, 3, 6, 6))
    y[..., road > 0.5] = 1.0
    road_mae_v, offroad, recall = road_structure_metrics(y, y, road, 0.05, 1e-3)
    assert road_mae_v == 0.0
    assert offroad == 0.0
    assert recall == 1.0


def test_road_structure_all_zero_prediction():
    rng = np.random.default_rng(4)
    road = (rng.uniform(size=(6, 6)) > 0.5).astype(np.float64)
    y = np.zeros((2, 3, 6, 6))
    y[..., road > 0.5] = 1.0
    zero = np.zeros_like(y)
    _, offroad, recall = road_structure_metrics(zero, y, road, 0.05, 1e-3)
    assert offroad == 0.0   # empty active set convention
    assert recall == 0.0


def test_road_structure_hand_enumeration():
    road = np.zeros((4, 4))
    road[1, 1] = road[2, 2] = 1.0
    y = np.zeros((1, 2, 4, 4))
    y[0, :, 1, 1] = 1.0                      # one active GT road cell
    yhat = np.zeros((1, 2, 4, 4))
    yhat[0, :, 1, 1] = 0.5                   # hit on road
    yhat[0, :, 0, 3] = 2.0                   # off-road activation
    road_mae_v, offroad, recall = road_structure_metrics(yhat, y, road, 0.05, 1e-3)
    # road cells: (1,1) err 0.5 twice, (2,2) err 0 twice -> mean 0.25
    assert road_mae_v == pytest.approx(0.25)
    assert offroad == pytest.approx(1 / 2)   # two active pred cells, one off-road
    assert recall == pytest.approx(1.0)


def test_active_cells_and_nonzero_counts():
    frame = np.zeros((3, 4, 4))
    frame[:, 2, 2] = 1.0
    assert nonzero_cells(frame, 1e-3) == 1
    assert nonzero_cells(np.zeros((3, 4, 4)), 1e-3) == 0
    rng = np.random.default_rng(5)
    f = rng.uniform(size=(2, 5, 5))
    expect = sum(1 for i in range(5) for j in range(5) if f[:, i, j].mean() > 0.4)
    assert int(active_cells(f, 0.4).sum()) == expect


def test_ssim_self_similarity_is_one():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(9, 9))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_anticorrelated_nonpositive():
    rng = np.random.default_rng(7)
    x = rng.uniform(size=(10, 10))
    flipped = -x + 1.0
    assert ssim(flipped, x) <= 0.0


def test_ssim_matches_formula_oracle():
    rng = np.random.default_rng(8)
    for _ in range(5):
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))
        assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-6)


def test_ssim_too_small_rejected():
    with pytest.raises(ParameterError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_historical_average_constant_and_two_frame():
    const = np.full((8, 3, 2, 2), 2.5)
    pred = historical_average(const, 4)
    assert pred.shape == (4, 8, 2, 2)
    assert np.allclose(pred, 2.5)
    x = np.zeros((8, 2, 2, 2))
    x[:, 1] = 2.0
    assert np.allclose(historical_average(x, 3), 1.0)


def test_historical_average_matches_loop_mean():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 5, 3, 3))
    pred = historical_average(x, 2)
    for c in range(8):
        for i in range(3):
            for j in range(3):
                acc = sum(float(x[c, t, i, j]) for t in range(5)) / 5
                assert pred[0, c, i, j] == pytest.approx(acc, abs=1e-6)
    assert np.array_equal(pred[0], pred[1])


def test_accumulator_matches_single_shot_metrics():
    rng = np.random.default_rng(10)
    road = (rng.uniform(size=(8, 8)) > 0.6).astype(np.float64)
    acc = MetricAccumulator(road=road, minutes_per_frame=5, horizons=(5, 10),
                            tau=0.05)
    pairs = [(rng.normal(size=(2, 8, 8, 8)), rng.normal(size=(2, 8, 8, 8)))
             for _ in range(3)]
    for yh, y in pairs:
        acc.update(yh, y)
    report = acc.report()
    all_yh = np.concatenate([p[0] for p in pairs], axis=0)
    all_y = np.concatenate([p[1] for p in pairs], axis=0)
    assert report.mae == pytest.approx(mae(all_yh, all_y), rel=1e-9)
    assert report.mse == pytest.approx(mse(all_yh, all_y), rel=1e-9)
    assert report.rmse ** 2 == pytest.approx(report.mse, rel=1e-6)
    rm, orate, recall = road_structure_metrics(all_yh, all_y, road)
    assert report.road_mae == pytest.approx(rm, rel=1e-9)
    assert report.offroad_activation_rate == pytest.approx(orate, rel=1e-12)
    assert report.road_coverage_recall == pytest.approx(recall, rel=1e-12)
    assert len(report.ssim_per_frame) == 2
    assert report.nonzero_cells_gt[0] == sum(
        nonzero_cells(p[1][0]) for p in pairs)


def test_metrics_stable_under_norm_round_trip():
    from rcsnet.data import NormStats, apply_norm, invert_norm
    rng = np.random.default_rng(11)
    yhat = rng.uniform(0, 5, size=(3, 8, 6, 6)).astype(np.float32)
    y = rng.uniform(0, 5, size=(3, 8, 6, 6)).astype(np.float32)
    stats = NormStats(mean=rng.uniform(1, 2, 8).astype(np.float32),
                      std=rng.uniform(0.5, 2, 8).astype(np.float32))
    yhat_rt = invert_norm(apply_norm(yhat, stats, 1), stats, 1)
    y_rt = invert_norm(apply_norm(y, stats, 1), stats, 1)
    assert mae(yhat_rt, y_rt) == pytest.approx(mae(yhat, y), abs=1e-5)
    assert rmse(yhat_rt, y_rt) == pytest.approx(rmse(yhat, y), abs=1e-5)


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        mae(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        road_structure_metrics(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 4, 4)),
                               np.zeros((5, 5)))
