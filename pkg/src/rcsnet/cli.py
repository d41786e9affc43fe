"""Command-line surface: synth, topology, train, eval, predict, baseline.

Precedence for every setting is flags > config file > defaults, and each
artifact-producing command writes its fully resolved configuration next to
its outputs. Exit codes: 0 success, 2 configuration/validation problems,
3 runtime numeric failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .container import read_tensor, write_tensor
from .data import (CHANNEL_SEMANTICS, NormStats, invert_norm, load_city,
                   normalize_road, synth_city)
from .errors import (ConfigurationError, DimensionError, NumericError,
                     ParameterError, ValidationError)
from .fusion import fusion_gates
from .metrics import THETA_ACT, MetricAccumulator, historical_average
from .topology import PRIOR_CHANNELS, encode_road, extract_prior
from .trainer import (TrainConfig, load_checkpoint, predict_batches, train,
                      zero_prior_like)

log = logging.getLogger(__name__)

_PATH_KEYS = ("data_dir", "out_dir", "road")
_EXTRA_KEYS = ("theta_act", "minutes_per_frame", "horizons",
               "synth_hw", "synth_t", "synth_files", "profile")
_EXTRA_DEFAULTS = {
    "theta_act": THETA_ACT,
    "minutes_per_frame": 5,
    "horizons": [5, 15, 30, 45, 60],
    "synth_hw": 32,
    "synth_t": 48,
    "synth_files": 10,
    "profile": "grid",
}


def resolve_config(config_path, overrides: dict) -> dict:
    """defaults <- config file <- non-None flags, rejecting unknown keys."""
    resolved = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    resolved["branches"] = [{"name": b.name, "k": b.k, "d": b.d}
                            for b in resolved["branches"]]
    resolved.update(_EXTRA_DEFAULTS)
    for key in _PATH_KEYS:
        resolved[key] = None
    allowed = set(resolved)
    if config_path:
        with open(config_path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - allowed
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in allowed:
            raise ConfigurationError(f"unknown override {key!r}")
        resolved[key] = value
    return resolved


def train_config_from(resolved: dict) -> TrainConfig:
    keep = {f.name for f in fields(TrainConfig)}
    return TrainConfig.from_dict({k: v for k, v in resolved.items() if k in keep})


def write_resolved(out_dir, resolved: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)


def _require(resolved: dict, key: str):
    if resolved.get(key) in (None, ""):
        raise ConfigurationError(f"{key} is required (flag or config file)")
    return resolved[key]


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    resolved = resolve_config(args.config, {
        "seed": args.seed, "synth_hw": args.hw, "synth_t": args.t,
        "synth_files": args.files, "profile": args.profile, "out_dir": args.out,
    })
    out_dir = Path(_require(resolved, "out_dir"))
    hw, t = int(resolved["synth_hw"]), int(resolved["synth_t"])
    n_files = int(resolved["synth_files"])
    seed = int(resolved["seed"])
    road = None
    for i in range(n_files):
        movie, road = synth_city(seed, hw, hw, t, resolved["profile"], t0=i * t)
        write_tensor(out_dir / f"movie_{i:03d}.gtc", movie,
                     axis_names=["t", "h", "w", "c"],
                     channel_semantics=CHANNEL_SEMANTICS)
    write_tensor(out_dir / "road.gtc", road, axis_names=["h", "w"])
    write_resolved(out_dir, resolved)
    print(f"wrote {n_files} movies and road map to {out_dir}")
    return 0


def cmd_topology(args) -> int:
    resolved = resolve_config(args.config, {"road": args.road, "pool_k": args.pool_k})
    road_raw, _ = read_tensor(_require(resolved, "road"))
    prior = extract_prior(normalize_road(road_raw), int(resolved["pool_k"]))
    write_tensor(args.out, prior.channels.data,
                 axis_names=["c", "h", "w"], channel_semantics=PRIOR_CHANNELS)
    print(f"wrote 7-channel prior to {args.out}")
    return 0


def _override_dict(args) -> dict:
    keys = ("seed", "epochs", "batch", "lr0", "weight_decay", "base_channels",
            "hidden", "t_in", "t_out", "stride", "pool_k", "tau", "gamma",
            "lambda_s", "lambda_t", "lambda_e", "clip_norm",
            "theta_act", "minutes_per_frame")
    return {k: getattr(args, k, None) for k in keys}


def cmd_train(args) -> int:
    overrides = _override_dict(args)
    overrides.update({"data_dir": args.data, "out_dir": args.out})
    resolved = resolve_config(args.config, overrides)
    config = train_config_from(resolved)
    out_dir = Path(_require(resolved, "out_dir"))
    splits, _, _ = load_city(_require(resolved, "data_dir"),
                             config.t_in, config.t_out, config.stride, config.seed)
    write_resolved(out_dir, resolved)
    ckpt, history = train(config, splits["train"], splits["val"], out_dir,
                          zero_prior=args.zero_prior)
    print(f"best checkpoint: epoch {ckpt.epoch}, validation loss {ckpt.val_loss}")
    print(f"steps run: {len(history)}; artifacts in {out_dir}")
    return 0


def _load_eval_context(args, resolved):
    ckpt = load_checkpoint(Path(args.checkpoint) / "checkpoint"
                           if (Path(args.checkpoint) / "checkpoint").is_dir()
                           else args.checkpoint)
    config = ckpt.config
    splits, _, _ = load_city(_require(resolved, "data_dir"),
                             config.t_in, config.t_out, config.stride, config.seed)
    prior = extract_prior(splits[args.split].road, config.pool_k)
    if getattr(args, "zero_prior", False):
        prior = zero_prior_like(prior)
    return ckpt, splits[args.split], prior


def _crop(arr: np.ndarray, hw) -> np.ndarray:
    return arr[..., :hw[0], :hw[1]]


def _accumulate(sample_set, prior, predict_fn, stats: NormStats, resolved) -> MetricAccumulator:
    road = _crop(sample_set.road.grid.data[0], sample_set.orig_hw)
    horizons = tuple(int(h) for h in resolved["horizons"])
    acc = MetricAccumulator(road=road,
                            minutes_per_frame=int(resolved["minutes_per_frame"]),
                            horizons=horizons,
                            tau=float(resolved["tau"]),
                            theta_act=float(resolved["theta_act"]))
    for samples, preds in predict_fn(sample_set, prior):
        for s, pred in zip(samples, preds):
            yhat = _crop(invert_norm(pred, stats, 1), s.orig_hw)
            ytrue = _crop(invert_norm(s.y, stats, 1), s.orig_hw)
            acc.update(yhat, ytrue)
    return acc


def _write_report(path, model_name: str, split: str, acc: MetricAccumulator,
                  resolved: dict) -> None:
    report = {"model": model_name, "split": split, "metrics": acc.report().to_dict()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    csv_path = path.with_suffix(".horizons.csv")
    with open(csv_path, "w") as fh:
        fh.write("horizon_minutes,mae,mse,rmse\n")
        for minutes, row in report["metrics"]["per_horizon"].items():
            fh.write(f"{minutes},{row['mae']!r},{row['mse']!r},{row['rmse']!r}\n")
    with open(path.with_suffix(".config.json"), "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)


def cmd_eval(args) -> int:
    resolved = resolve_config(args.config, dict(_override_dict(args), data_dir=args.data))
    ckpt, sample_set, prior = _load_eval_context(args, resolved)
    resolved["tau"] = ckpt.config.tau if args.tau is None else args.tau

    def predict_fn(ss, pr):
        return predict_batches(ckpt.model, pr, ss, ckpt.config.batch)

    acc = _accumulate(sample_set, prior, predict_fn, ckpt.stats, resolved)
    _write_report(args.out, "rcsnet", args.split, acc, resolved)
    print(f"report written to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    resolved = resolve_config(args.config, dict(_override_dict(args), data_dir=args.data))
    config = train_config_from(resolved)
    splits, stats, _ = load_city(_require(resolved, "data_dir"),
                                 config.t_in, config.t_out, config.stride, config.seed)
    sample_set = splits[args.split]

    def predict_fn(ss, _prior):
        for i in range(len(ss)):
            s = ss.sample(i)
            yield [s], historical_average(s.x, config.t_out)[None]

    acc = _accumulate(sample_set, None, predict_fn, stats, resolved)
    _write_report(args.out, "historical_average", args.split, acc, resolved)
    print(f"report written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    resolved = resolve_config(args.config, dict(_override_dict(args), data_dir=args.data))
    ckpt, sample_set, prior = _load_eval_context(args, resolved)
    out_dir = Path(args.out)
    limit = args.limit if args.limit is not None else len(sample_set)
    road = _crop(sample_set.road.grid.data[0], sample_set.orig_hw)
    acc = MetricAccumulator(road=road,
                            minutes_per_frame=int(resolved["minutes_per_frame"]),
                            tau=float(resolved["tau"]),
                            theta_act=float(resolved["theta_act"]))
    forecasts = []
    done = 0
    for samples, preds in predict_batches(ckpt.model, prior, sample_set, ckpt.config.batch):
        for s, pred in zip(samples, preds):
            if done >= limit:
                break
            yhat = _crop(invert_norm(pred, ckpt.stats, 1), s.orig_hw)
            ytrue = _crop(invert_norm(s.y, ckpt.stats, 1), s.orig_hw)
            acc.update(yhat, ytrue)
            forecasts.append(yhat)
            done += 1
        if done >= limit:
            break
    write_tensor(out_dir / "forecasts.gtc", np.stack(forecasts),
                 axis_names=["sample", "t", "c", "h", "w"],
                 channel_semantics=CHANNEL_SEMANTICS,
                 norm_stats=ckpt.stats.to_dict())
    write_tensor(out_dir / "error_heatmap.gtc", acc.error_heatmap(),
                 axis_names=["h", "w"])
    write_resolved(out_dir, resolved)
    if args.dump_gates:
        gates_dir = Path(args.dump_gates)
        road_feature = encode_road(prior, ckpt.model.road_encoder)
        gates = fusion_gates(road_feature, ckpt.model.fusion)
        write_tensor(gates_dir / "gate_channel.gtc",
                     gates["channel"].data.reshape(-1), axis_names=["c"])
        write_tensor(gates_dir / "gate_spatial.gtc",
                     gates["spatial"].data[0, 0], axis_names=["h", "w"])
        write_tensor(gates_dir / "gate_direction.gtc",
                     gates["direction"].data[0], axis_names=["c", "h", "w"])
    print(f"wrote {done} forecasts and error heatmap to {out_dir}")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--t-in", dest="t_in", type=int)
    p.add_argument("--t-out", dest="t_out", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--pool-k", dest="pool_k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--lambda-t", dest="lambda_t", type=float)
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--theta-act", dest="theta_act", type=float)
    p.add_argument("--minutes-per-frame", dest="minutes_per_frame", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcsnet",
                                     description="road-conditioned traffic forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic city")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--hw", type=int, help="grid height and width")
    p.add_argument("--t", type=int, help="frames per movie file")
    p.add_argument("--files", type=int, help="number of movie files")
    p.add_argument("--profile", choices=["grid", "sparse"])
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("topology", help="dump the 7-channel topology prior")
    _add_common(p)
    p.add_argument("--road", help="road map GTC1 file")
    p.add_argument("--out", required=True)
    p.add_argument("--pool-k", dest="pool_k", type=int)
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("train", help="train the forecaster on a city directory")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", help="city data directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--zero-prior", action="store_true",
                   help="ablation: replace the topology prior with zeros")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="city data directory")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--zero-prior", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write forecasts and the error heatmap")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="city data directory")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--limit", type=int)
    p.add_argument("--dump-gates", dest="dump_gates",
                   help="directory for fusion gate rasters")
    p.add_argument("--zero-prior", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="historical-average report on one split")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", help="city data directory")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ValidationError, ParameterError, DimensionError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
