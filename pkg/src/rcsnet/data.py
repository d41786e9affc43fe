"""Data pipeline: synthetic city generation, normalization, windowing, splits.

Raw movies are (T, H, W, 8) float32 arrays with channels interleaved as
[vol_0, spd_0, ..., vol_3, spd_3]. Samples expose the model layouts:
inputs (C, T_in, H, W) and targets (T_out, C, H, W), both z-scored with
statistics fitted on the training split only.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_tensor
from .engine import GridTensor
from .errors import ParameterError, ValidationError
from .topology import RoadMap

log = logging.getLogger(__name__)

CHANNELS = 8
CHANNEL_SEMANTICS = tuple(f"{kind}_{d}" for d in range(4) for kind in ("vol", "spd"))
SPEED_MAX = 2.5
STD_FLOOR = 1e-6
PERIOD_FRAMES = 48.0

# directional demand mix per corridor orientation: horizontal corridors load
# the first two movement channels, vertical the last two, diagonals all four
_DIR_MIX = {
    "horizontal": (0.425, 0.425, 0.075, 0.075),
    "vertical": (0.075, 0.075, 0.425, 0.425),
    "diagonal": (0.25, 0.25, 0.25, 0.25),
}


# -- windowing and splits -------------------------------------------------------


def window_indices(t: int, t_in: int, t_out: int, stride: int) -> list:
    """Start indices s = 0, stride, 2*stride, ... with s + t_in + t_out <= t."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    span = t_in + t_out
    return [s for s in range(0, max(t - span, 0) + 1, stride) if s + span <= t]


@dataclass(frozen=True)
class MovieFile:
    path: str
    city: str
    t: int
    h: int
    w: int


@dataclass
class SplitPlan:
    train: list
    val: list
    test: list

    def part(self, name: str) -> list:
        try:
            return getattr(self, name)
        except AttributeError:
            raise ParameterError(f"unknown split {name!r}") from None


def split_files(files: list, seed: int) -> SplitPlan:
    """Deterministic 70/15/15 split per city (floor/floor/remainder)."""
    by_city: dict = {}
    for f in files:
        by_city.setdefault(f.city, []).append(f)
    rng = np.random.default_rng(seed)
    plan = SplitPlan([], [], [])
    for city in sorted(by_city):
        group = sorted(by_city[city], key=lambda f: f.path)
        if len(group) < 3:
            raise ParameterError(f"city {city!r} has {len(group)} files; at least 3 required")
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        n = len(shuffled)
        n_train = math.floor(0.70 * n)
        n_val = math.floor(0.15 * n)
        plan.train.extend(shuffled[:n_train])
        plan.val.extend(shuffled[n_train:n_train + n_val])
        plan.test.extend(shuffled[n_train + n_val:])
        if n_val == 0:
            log.warning("city %s: validation split is empty (%d files)", city, n)
    return plan


# -- normalization ----------------------------------------------------------------


@dataclass
class NormStats:
    """Per-channel mean/std fitted on training movies (population std)."""
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.asarray(d["mean"], dtype=np.float32),
                         np.asarray(d["std"], dtype=np.float32))


def fit_norm_stats(movies) -> NormStats:
    """Accumulate channel-wise stats over (T, H, W, 8) arrays in float64."""
    total = np.zeros(CHANNELS, dtype=np.float64)
    total_sq = np.zeros(CHANNELS, dtype=np.float64)
    count = 0
    for movie in movies:
        flat = movie.reshape(-1, CHANNELS).astype(np.float64)
        total += flat.sum(axis=0)
        total_sq += np.square(flat).sum(axis=0)
        count += flat.shape[0]
    if count == 0:
        raise ParameterError("cannot fit normalization stats on zero frames")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormStats(mean.astype(np.float32), std.astype(np.float32))


def apply_norm(x: np.ndarray, stats: NormStats, channel_axis: int) -> np.ndarray:
    shape = [1] * x.ndim
    shape[channel_axis] = CHANNELS
    return ((x - stats.mean.reshape(shape)) / stats.std.reshape(shape)).astype(np.float32)


def invert_norm(x: np.ndarray, stats: NormStats, channel_axis: int) -> np.ndarray:
    shape = [1] * x.ndim
    shape[channel_axis] = CHANNELS
    return (x * stats.std.reshape(shape) + stats.mean.reshape(shape)).astype(np.float32)


def normalize_road(raw: np.ndarray) -> RoadMap:
    """Reduce to one channel (mean) and min-max scale to [0, 1]."""
    arr = np.asarray(raw, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr.mean(axis=0) if arr.shape[0] > 1 else arr[0]
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"road map must be 2-d or (C,H,W), got shape {raw.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo <= 0.0:
        scaled = np.zeros_like(arr)
    else:
        scaled = (arr - lo) / (hi - lo)
    return RoadMap(GridTensor(scaled[None]))


# -- spatial padding ----------------------------------------------------------------


def pad_to_multiple(arr: np.ndarray, multiple: int, axes) -> np.ndarray:
    """Zero-pad the given axes up to the next multiple (road encoder needs 4)."""
    width = [(0, 0)] * arr.ndim
    for ax in axes:
        extra = (-arr.shape[ax]) % multiple
        width[ax] = (0, extra)
    if any(w != (0, 0) for w in width):
        arr = np.pad(arr, width)
    return arr


# -- synthetic city generator ----------------------------------------------------------


@dataclass(frozen=True)
class Corridor:
    """One road segment carrying a traveling demand wave."""
    cells: tuple          # ((r, c), ...) in arc order
    amp: float
    freq: int             # demand cycles per PERIOD_FRAMES
    phase: float
    kappa: float          # along-road phase advance per cell
    decay_len: float      # demand attenuation length along the corridor
    dir_mix: tuple        # share of demand per movement channel


def corridor_plan(seed: int, h: int, w: int, profile: str = "grid") -> list:
    """Seeded corridor layout shared by the generator and its oracle."""
    if profile not in ("grid", "sparse"):
        raise ParameterError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(seed)
    dense = profile == "grid"
    n_rows = max(2, h // 12) if dense else max(1, h // 24)
    n_cols = max(2, w // 12) if dense else max(1, w // 24)
    n_diag = 2 if dense else 1
    rows = np.sort(rng.choice(np.arange(2, h - 2), size=n_rows, replace=False))
    cols = np.sort(rng.choice(np.arange(2, w - 2), size=n_cols, replace=False))
    offsets = rng.integers(-(h // 4), h // 4 + 1, size=n_diag)

    corridors = []

    def add(cells, orientation):
        amp = float(rng.uniform(1.0, 2.5))
        freq = int(rng.integers(1, 4))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        kappa = 2.0 * np.pi / len(cells)
        corridors.append(Corridor(tuple(cells), amp, freq, phase, kappa,
                                  4.0 * len(cells), _DIR_MIX[orientation]))

    for r in rows:
        add([(int(r), c) for c in range(w)], "horizontal")
    for c in cols:
        add([(r, int(c)) for r in range(h)], "vertical")
    for off in offsets:
        cells = [(i, i + int(off)) for i in range(h) if 0 <= i + int(off) < w]
        if len(cells) >= 8:
            add(cells, "diagonal")
    return corridors


def corridor_volume(c: Corridor, p: int, direction: int, frame: int) -> float:
    """Closed-form demand of one corridor cell at one absolute frame (scalar)."""
    theta = (2.0 * np.pi * c.freq * frame / PERIOD_FRAMES + c.phase
             + direction * np.pi / 2.0 - c.kappa * p)
    return (c.amp * c.dir_mix[direction] * math.exp(-p / c.decay_len)
            * 0.5 * (1.0 + math.sin(theta)))


def synth_city(seed: int, h: int, w: int, t: int, profile: str = "grid", t0: int = 0):
    """Deterministic synthetic (movie (T,H,W,8), road (H,W)) pair.

    Volume channels carry per-corridor sinusoidal demand waves traveling along
    each road with exponential attenuation; overlapping corridors add. Demand
    cycles span PERIOD_FRAMES frames, and ``t0`` offsets the absolute frame
    index so several files can cover one continuous city recording. Speed is
    SPEED_MAX * (1 - volume / volume_bound) on road cells, zero elsewhere, so
    every off-road cell is exactly zero across all channels and times.
    """
    if h % 4 or w % 4:
        raise ParameterError(f"synthetic grids must have H, W multiples of 4, got {h}x{w}")
    if t < 24:
        raise ParameterError(f"synthetic movies need T >= 24, got {t}")
    corridors = corridor_plan(seed, h, w, profile)
    vol = np.zeros((t, h, w, 4), dtype=np.float64)
    frames = np.arange(t0, t0 + t, dtype=np.float64)
    dirs = np.arange(4, dtype=np.float64)
    for c in corridors:
        length = len(c.cells)
        ps = np.arange(length, dtype=np.float64)
        envelope = c.amp * np.exp(-ps / c.decay_len)
        theta = (2.0 * np.pi * c.freq * frames[:, None, None] / PERIOD_FRAMES + c.phase
                 + dirs[None, None, :] * np.pi / 2.0
                 - c.kappa * ps[None, :, None])
        wave = (envelope[None, :, None] * np.asarray(c.dir_mix)[None, None, :]
                * 0.5 * (1.0 + np.sin(theta)))
        rs = np.fromiter((rc[0] for rc in c.cells), dtype=np.intp, count=length)
        cs = np.fromiter((rc[1] for rc in c.cells), dtype=np.intp, count=length)
        vol[:, rs, cs, :] += wave
    road = np.zeros((h, w), dtype=np.float32)
    for c in corridors:
        for r, cc in c.cells:
            road[r, cc] = 1.0
    bound = sum(c.amp * max(c.dir_mix) for c in corridors)
    on_road = road[None, :, :, None] > 0
    spd = np.where(on_road, SPEED_MAX * (1.0 - vol / bound), 0.0)
    movie = np.zeros((t, h, w, CHANNELS), dtype=np.float64)
    movie[..., 0::2] = vol
    movie[..., 1::2] = spd
    return movie.astype(np.float32), road


# -- sample materialization ------------------------------------------------------------


@dataclass
class Sample:
    """One training example in model layouts, already normalized."""
    x: np.ndarray            # (8, T_in, H, W)
    y: np.ndarray            # (T_out, 8, H, W)
    road: RoadMap
    city: str
    start: int
    orig_hw: tuple


class SampleSet:
    """Deterministic window enumeration over loaded movies of one city.

    Order is fixed by (movie index, window index) regardless of how movies
    were loaded.
    """

    def __init__(self, movies: list, road: RoadMap, stats: NormStats,
                 t_in: int, t_out: int, stride: int, city: str = "city",
                 orig_hw=None):
        self.movies = movies
        self.road = road
        self.stats = stats
        self.t_in = t_in
        self.t_out = t_out
        self.city = city
        self.orig_hw = orig_hw or (road.grid.shape[1], road.grid.shape[2])
        self.index = []
        for mi, movie in enumerate(movies):
            starts = window_indices(movie.shape[0], t_in, t_out, stride)
            if not starts:
                log.warning("movie %d of city %s too short (%d frames); skipped",
                            mi, city, movie.shape[0])
            self.index.extend((mi, s) for s in starts)

    def __len__(self) -> int:
        return len(self.index)

    def sample(self, i: int) -> Sample:
        mi, s = self.index[i]
        movie = self.movies[mi]
        x = movie[s:s + self.t_in].transpose(3, 0, 1, 2)                    # (8,T_in,H,W)
        y = movie[s + self.t_in:s + self.t_in + self.t_out].transpose(0, 3, 1, 2)
        return Sample(x=apply_norm(x, self.stats, 0),
                      y=apply_norm(y, self.stats, 1),
                      road=self.road, city=self.city, start=s, orig_hw=self.orig_hw)


def _worker_cap() -> int:
    cap = os.environ.get("RCSNET_THREADS")
    if cap is None:
        return 4
    try:
        return max(1, int(cap))
    except ValueError:
        raise ParameterError(f"RCSNET_THREADS must be an int, got {cap!r}") from None


def load_movie(path) -> np.ndarray:
    array, header = read_tensor(path)
    if array.ndim != 4 or array.shape[-1] != CHANNELS:
        raise ValidationError(f"{path}: movies must be (T,H,W,{CHANNELS}), got {array.shape}")
    return array


def scan_city_dir(data_dir, city: str = None) -> tuple:
    """Locate road.gtc and movie_*.gtc files under one city directory."""
    data_dir = Path(data_dir)
    road_path = data_dir / "road.gtc"
    if not road_path.exists():
        raise ValidationError(f"{data_dir}: missing road.gtc")
    movie_paths = sorted(data_dir.glob("movie_*.gtc"))
    if not movie_paths:
        raise ValidationError(f"{data_dir}: no movie_*.gtc files")
    city = city or data_dir.name
    files = []
    for p in movie_paths:
        _, header = read_tensor(p)
        shape = header["shape"]
        files.append(MovieFile(str(p), city, shape[0], shape[1], shape[2]))
    return files, str(road_path)


def load_city(data_dir, t_in: int, t_out: int, stride: int, seed: int):
    """Load one city directory into per-split SampleSets.

    Movies and the road map are zero-padded to H, W multiples of 4; stats are
    fitted on train movies only. Returns (splits dict, NormStats, SplitPlan).
    """
    files, road_path = scan_city_dir(data_dir)
    plan = split_files(files, seed)
    road_raw, _ = read_tensor(road_path)
    road_map = normalize_road(road_raw)
    orig_hw = (road_map.grid.shape[1], road_map.grid.shape[2])
    padded_road = pad_to_multiple(road_map.grid.data, 4, axes=(1, 2))
    road_map = RoadMap(GridTensor(padded_road))

    def load_part(part_files):
        with ThreadPoolExecutor(max_workers=_worker_cap()) as pool:
            movies = list(pool.map(lambda f: load_movie(f.path), part_files))
        return [pad_to_multiple(m, 4, axes=(1, 2)) for m in movies]

    train_movies = load_part(plan.train)
    stats = fit_norm_stats(train_movies)
    splits = {}
    for name, part_files, movies in (("train", plan.train, train_movies),
                                     ("val", plan.val, None),
                                     ("test", plan.test, None)):
        if movies is None:
            movies = load_part(part_files)
        city = part_files[0].city if part_files else "city"
        splits[name] = SampleSet(movies, road_map, stats, t_in, t_out, stride,
                                 city=city, orig_hw=orig_hw)
    return splits, stats, plan
