"""Data pipeline: windowing, normalization, splits, synthetic cities, GTC1."""

import math

import numpy as np
import pytest

from rcsnet.container import read_tensor, write_tensor
from rcsnet.data import (CHANNELS, MovieFile, NormStats, SampleSet, SplitPlan,
                         apply_norm, corridor_plan, corridor_volume,
                         fit_norm_stats, invert_norm, normalize_road,
                         pad_to_multiple, split_files, synth_city,
                         window_indices)
from rcsnet.errors import ParameterError, ValidationError


def test_window_indices_cases():
    assert window_indices(30, 12, 12, 6) == [0, 6]
    assert window_indices(24, 12, 12, 6) == [0]
    assert window_indices(23, 12, 12, 6) == []
    assert window_indices(36, 12, 12, 6) == [0, 6, 12]


def test_fit_norm_stats_constant_channel_floored():
    movie = np.zeros((4, 3, 3, CHANNELS), dtype=np.float32)
    movie[..., 0] = 5.0  # constant channel
    stats = fit_norm_stats([movie])
    assert stats.std[0] == pytest.approx(1e-6)
    normed = apply_norm(movie.transpose(3, 0, 1, 2), stats, 0)
    assert np.allclose(normed[0], 0.0)


def test_fit_norm_stats_matches_loop_oracle():
    rng = np.random.default_rng(0)
    movie = rng.uniform(0, 4, size=(2, 2, 2, CHANNELS)).astype(np.float32)
    stats = fit_norm_stats([movie])
    for c in range(CHANNELS):
        vals = [float(movie[t, i, j, c]) for t in range(2) for i in range(2)
                for j in range(2)]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert stats.mean[c] == pytest.approx(mean, abs=1e-6)
        assert stats.std[c] == pytest.approx(math.sqrt(var), abs=1e-6)


def test_norm_round_trip():
    rng = np.random.default_rng(1)
    movie = rng.uniform(0, 10, size=(3, 4, 4, CHANNELS)).astype(np.float32)
    stats = fit_norm_stats([movie])
    x = movie.transpose(0, 3, 1, 2)
    back = invert_norm(apply_norm(x, stats, 1), stats, 1)
    assert np.abs(back - x).max() <= 1e-5


def test_normalize_road_binary_and_constant_and_range():
    binary = np.array([[0.0, 255.0], [255.0, 0.0]]).repeat(4, 0).repeat(4, 1)
    rm = normalize_road(binary)
    assert set(np.unique(rm.grid.data)) == {0.0, 1.0}
    constant = normalize_road(np.full((8, 8), 3.0))
    assert np.all(constant.grid.data == 0.0)
    rng = np.random.default_rng(2)
    rand = normalize_road(rng.uniform(5, 9, size=(8, 8)))
    assert rand.grid.data.min() == pytest.approx(0.0)
    assert rand.grid.data.max() == pytest.approx(1.0)


def test_normalize_road_multichannel_reduced():
    rng = np.random.default_rng(3)
    raw = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    rm = normalize_road(raw)
    mean = raw.mean(axis=0)
    expect = (mean - mean.min()) / (mean.max() - mean.min())
    assert np.allclose(rm.grid.data[0], expect, atol=1e-6)


def _files(n, city="c0"):
    return [MovieFile(f"{city}/m{i:03d}", city, 30, 8, 8) for i in range(n)]


def test_split_counts_twenty_files():
    plan = split_files(_files(20), seed=42)
    assert (len(plan.train), len(plan.val), len(plan.test)) == (14, 3, 3)
    all_paths = {f.path for f in plan.train + plan.val + plan.test}
    assert len(all_paths) == 20


def test_split_three_files_warns_empty_validation(caplog):
    with caplog.at_level("WARNING"):
        plan = split_files(_files(3), seed=1)
    assert (len(plan.train), len(plan.val), len(plan.test)) == (2, 0, 1)
    assert any("validation split is empty" in r.message for r in caplog.records)


def test_split_determinism_and_min_files():
    a = split_files(_files(10), seed=7)
    b = split_files(_files(10), seed=7)
    assert [f.path for f in a.train] == [f.path for f in b.train]
    assert [f.path for f in a.test] == [f.path for f in b.test]
    with pytest.raises(ParameterError):
        split_files(_files(2), seed=1)
    with pytest.raises(ParameterError):
        SplitPlan([], [], []).part("bogus")


def test_split_is_per_city():
    files = _files(5, "a") + _files(5, "b")
    plan = split_files(files, seed=0)
    train_cities = [f.city for f in plan.train]
    assert train_cities.count("a") == 3 and train_cities.count("b") == 3


# -- synthetic generator ---------------------------------------------------------------


def test_synth_offroad_exactly_zero():
    movie, road = synth_city(11, 16, 16, 24)
    off = road == 0.0
    assert np.abs(movie[:, off, :]).max() == 0.0
    assert np.all(movie[..., 0::2] >= 0.0)


def test_synth_deterministic():
    a, road_a = synth_city(5, 16, 16, 24)
    b, road_b = synth_city(5, 16, 16, 24)
    assert a.tobytes() == b.tobytes()
    assert road_a.tobytes() == road_b.tobytes()
    c, _ = synth_city(6, 16, 16, 24)
    assert a.tobytes() != c.tobytes()


def test_synth_speed_inversely_coupled():
    movie, road = synth_city(12, 16, 16, 24)
    on = road > 0
    vol = movie[..., 0::2][:, on, :]
    spd = movie[..., 1::2][:, on, :]
    assert np.all(spd > 0.0)
    # higher volume always means lower speed at the same cell/direction
    order = np.argsort(vol, axis=0)
    spd_sorted = np.take_along_axis(spd, order, axis=0)
    assert np.all(np.diff(spd_sorted, axis=0) <= 1e-6)


def test_synth_total_volume_matches_closed_form_sum():
    seed, h, w, t = 21, 16, 16, 30
    movie, _ = synth_city(seed, h, w, t, "grid", t0=0)
    plan = corridor_plan(seed, h, w, "grid")
    got = movie[..., 0::2].astype(np.float64).sum(axis=(1, 2, 3))
    for frame in range(0, t, 7):
        expect = 0.0
        for corridor in plan:
            for p in range(len(corridor.cells)):
                for d in range(4):
                    expect += corridor_volume(corridor, p, d, frame)
        assert got[frame] == pytest.approx(expect, rel=1e-5)


def test_synth_respects_offset_continuity():
    a, _ = synth_city(9, 16, 16, 24, t0=0)
    b, _ = synth_city(9, 16, 16, 24, t0=24)
    joint, _ = synth_city(9, 16, 16, 48, t0=0)
    assert np.array_equal(joint[:24], a)
    assert np.array_equal(joint[24:], b)


def test_synth_validates_arguments():
    with pytest.raises(ParameterError):
        synth_city(1, 18, 18, 24)
    with pytest.raises(ParameterError):
        synth_city(1, 16, 16, 10)
    with pytest.raises(ParameterError):
        corridor_plan(1, 16, 16, "bogus")


# -- samples -------------------------------------------------------------------------


def test_sample_reassembles_raw_window():
    movie, road = synth_city(3, 16, 16, 36)
    stats = fit_norm_stats([movie])
    ss = SampleSet([movie], normalize_road(road), stats, 12, 12, 6)
    assert len(ss) == window_indices(36, 12, 12, 6).__len__()
    s = ss.sample(1)
    assert s.start == 6
    x_raw = invert_norm(s.x, stats, 0).transpose(1, 2, 3, 0)
    y_raw = invert_norm(s.y, stats, 1).transpose(0, 2, 3, 1)
    assert np.abs(x_raw - movie[6:18]).max() <= 1e-4
    assert np.abs(y_raw - movie[18:30]).max() <= 1e-4


def test_sampleset_skips_short_movies(caplog):
    movie, road = synth_city(4, 16, 16, 36)
    short = movie[:20]
    stats = fit_norm_stats([movie])
    with caplog.at_level("WARNING"):
        ss = SampleSet([movie, short], normalize_road(road), stats, 12, 12, 6)
    assert len(ss) == 3
    assert any("too short" in r.message for r in caplog.records)


def test_pad_to_multiple():
    arr = np.ones((3, 18, 17))
    padded = pad_to_multiple(arr, 4, axes=(1, 2))
    assert padded.shape == (3, 20, 20)
    assert np.all(padded[:, 18:, :] == 0.0)
    same = pad_to_multiple(np.ones((3, 16, 16)), 4, axes=(1, 2))
    assert same.shape == (3, 16, 16)


# -- container ------------------------------------------------------------------------


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    arr = rng.normal(size=(3, 5, 4)).astype(np.float32)
    path = tmp_path / "t.gtc"
    write_tensor(path, arr, axis_names=["a", "b", "c"],
                 channel_semantics=["x"] * 4, norm_stats={"mean": [1.0]})
    back, header = read_tensor(path)
    assert np.array_equal(back, arr)
    assert header["shape"] == [3, 5, 4]
    assert header["axis_names"] == ["a", "b", "c"]
    assert header["dtype"] == "f32le"
    assert header["norm_stats"] == {"mean": [1.0]}


def test_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.gtc"
    path.write_bytes(b"NOTGTC00" + b"\x00" * 16)
    with pytest.raises(ValidationError):
        read_tensor(path)


def test_container_writes_are_byte_identical(tmp_path):
    rng = np.random.default_rng(7)
    arr = rng.normal(size=(2, 3)).astype(np.float32)
    write_tensor(tmp_path / "a.gtc", arr)
    write_tensor(tmp_path / "b.gtc", arr)
    assert (tmp_path / "a.gtc").read_bytes() == (tmp_path / "b.gtc").read_bytes()


def test_norm_stats_dict_round_trip():
    stats = NormStats(mean=np.arange(8, dtype=np.float32),
                      std=np.arange(1, 9, dtype=np.float32))
    back = NormStats.from_dict(stats.to_dict())
    assert np.array_equal(back.mean, stats.mean)
    assert np.array_equal(back.std, stats.std)


def test_norm_stats_fit_on_train_split_only(tmp_path):
    from rcsnet.cli import main as cli_main
    from rcsnet.data import load_city
    assert cli_main(["synth", "--seed", "3", "--hw", "16", "--t", "30",
                     "--files", "7", "--out", str(tmp_path)]) == 0
    splits, stats, plan = load_city(tmp_path, 12, 12, 6, seed=3)
    # recompute on the train split and compare; all-file stats must differ
    from rcsnet.data import load_movie
    train_arrays = [load_movie(f.path) for f in plan.train]
    refit = fit_norm_stats(train_arrays)
    assert np.allclose(refit.mean, stats.mean, atol=1e-7)
    assert np.allclose(refit.std, stats.std, atol=1e-7)
    all_arrays = train_arrays + [load_movie(f.path) for f in plan.val + plan.test]
    global_stats = fit_norm_stats(all_arrays)
    assert not np.allclose(global_stats.mean, stats.mean, atol=1e-9)


def test_worker_cap_env(monkeypatch):
    from rcsnet.data import _worker_cap
    monkeypatch.delenv("RCSNET_THREADS", raising=False)
    assert _worker_cap() >= 1
    monkeypatch.setenv("RCSNET_THREADS", "2")
    assert _worker_cap() == 2
    monkeypatch.setenv("RCSNET_THREADS", "zero")
    with pytest.raises(ParameterError):
        _worker_cap()
