"""Optimization loop: AdamW with decoupled decay, per-step cosine schedule,
global gradient clipping, best-validation checkpointing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import engine as E
from .container import read_tensor, write_tensor
from .data import NormStats, SampleSet
from .engine import GridTensor, no_grad, zero_grads
from .errors import ConfigurationError, NumericError, ParameterError
from .losses import LossBreakdown, LossWeights, total_loss
from .model import ModelState
from .temporal import BranchSpec, DEFAULT_BRANCHES
from .topology import TopologyPrior, extract_prior

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    batch: int = 8
    epochs: int = 50
    clip_norm: float = 1.0
    seed: int = 42
    base_channels: int = 32
    hidden: int = 128
    t_in: int = 12
    t_out: int = 12
    lambda_s: float = 0.5
    lambda_t: float = 0.2
    lambda_e: float = 0.1
    gamma: float = 5.0
    tau: float = 0.05
    stride: int = 6
    pool_k: int = 5
    branches: tuple = field(default=DEFAULT_BRANCHES)

    def __post_init__(self):
        for name in ("lr0", "batch", "epochs", "clip_norm", "base_channels",
                     "hidden", "t_in", "t_out", "stride", "pool_k", "gamma"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if isinstance(self.branches, (list, tuple)) and self.branches and \
                isinstance(self.branches[0], dict):
            self.branches = tuple(BranchSpec(**b) for b in self.branches)
        else:
            self.branches = tuple(self.branches)
        from .temporal import receptive_field
        for spec in self.branches:
            if receptive_field(spec) > self.t_in:
                raise ConfigurationError(
                    f"branch {spec.name} receptive field {receptive_field(spec)} "
                    f"exceeds t_in={self.t_in}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_s, self.lambda_t, self.lambda_e,
                           self.gamma, self.tau)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "branches"}
        d["branches"] = [{"name": b.name, "k": b.k, "d": b.d} for b in self.branches]
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d)


# -- optimizer -------------------------------------------------------------------


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float,
               weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps_opt: float = 1e-8) -> None:
    """Bias-corrected moment update followed by decoupled weight decay."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps_opt)
        p.data -= lr * update
        if weight_decay:
            p.data -= lr * weight_decay * p.data


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * step / total_steps)), floored at zero."""
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))


def clip_gradients(grads: dict, max_norm: float = 1.0) -> float:
    """Scale all gradients by max_norm / ||g|| when the global norm exceeds it.

    Returns the applied scale factor (1.0 when no clipping happened).
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads.values():
        g *= scale
    return scale


# -- batching -------------------------------------------------------------------------


def make_batch(samples) -> tuple:
    """Stack samples into (B,8,T_in,H,W) input and (B,T_out,8,H,W) target tensors."""
    xb = np.stack([s.x for s in samples])
    yb = np.stack([s.y for s in samples])
    return GridTensor(xb), GridTensor(yb)


def batch_loss(model: ModelState, prior: TopologyPrior, samples,
               weights: LossWeights) -> LossBreakdown:
    x, y = make_batch(samples)
    yhat = model.forward(x, prior)
    return total_loss(yhat, y, samples[0].road, weights)


def zero_prior_like(prior: TopologyPrior) -> TopologyPrior:
    return TopologyPrior(GridTensor(np.zeros_like(prior.channels.data)))


# -- checkpointing ------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: ModelState
    config: TrainConfig
    stats: NormStats
    opt: AdamWState
    epoch: int
    val_loss: float


def save_checkpoint(out_dir, model: ModelState, config: TrainConfig,
                    stats: NormStats, opt: AdamWState, epoch: int,
                    val_loss: float) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(model.named_parameters())
    manifest = {
        "format": "rcsnet-checkpoint",
        "version": 1,
        "epoch": epoch,
        "val_loss": val_loss,
        "config": config.to_dict(),
        "norm_stats": stats.to_dict(),
        "opt_step": opt.step,
        "tensors": {},
    }
    params = model.named_parameters()
    for i, name in enumerate(names):
        rel = f"params/{i:04d}.gtc"
        write_tensor(out_dir / rel, params[name].data)
        entry = {"file": rel, "shape": list(params[name].shape)}
        if name in opt.m:
            m_rel, v_rel = f"opt_m/{i:04d}.gtc", f"opt_v/{i:04d}.gtc"
            write_tensor(out_dir / m_rel, opt.m[name])
            write_tensor(out_dir / v_rel, opt.v[name])
            entry["m"] = m_rel
            entry["v"] = v_rel
        manifest["tensors"][name] = entry
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(ckpt_dir) -> Checkpoint:
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    config = TrainConfig.from_dict(manifest["config"])
    model = build_model(config)
    params = model.named_parameters()
    opt = AdamWState(step=manifest.get("opt_step", 0))
    for name, entry in manifest["tensors"].items():
        if name not in params:
            raise ConfigurationError(f"checkpoint tensor {name!r} not in model")
        arr, _ = read_tensor(ckpt_dir / entry["file"])
        if arr.shape != params[name].shape:
            raise ConfigurationError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, "
                f"model expects {params[name].shape}")
        params[name].data[...] = arr
        if "m" in entry:
            opt.m[name], _ = read_tensor(ckpt_dir / entry["m"])
            opt.v[name], _ = read_tensor(ckpt_dir / entry["v"])
    stats = NormStats.from_dict(manifest["norm_stats"])
    return Checkpoint(model, config, stats, opt,
                      manifest["epoch"], manifest["val_loss"])


def build_model(config: TrainConfig, seed: int = None) -> ModelState:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return ModelState.init(rng, base_channels=config.base_channels,
                           hidden=config.hidden, t_in=config.t_in,
                           t_out=config.t_out, branch_specs=config.branches)


# -- training loop -------------------------------------------------------------------


def validation_loss(model: ModelState, prior: TopologyPrior, val_set: SampleSet,
                    weights: LossWeights, batch: int) -> float:
    """Mean total loss over the validation split, computed without any graph."""
    total, count = 0.0, 0
    with no_grad():
        for lo in range(0, len(val_set), batch):
            samples = [val_set.sample(i) for i in range(lo, min(lo + batch, len(val_set)))]
            breakdown = batch_loss(model, prior, samples, weights)
            total += breakdown.total.item() * len(samples)
            count += len(samples)
    return total / count


def train(config: TrainConfig, train_set: SampleSet, val_set: SampleSet,
          out_dir, zero_prior: bool = False) -> tuple:
    """Run the full optimization and return (best Checkpoint, step history).

    Deterministic for a fixed config seed: initialization, batch order and
    every update replay identically. The best checkpoint (lowest validation
    total loss, earliest epoch on ties) is persisted under out_dir/checkpoint.
    """
    if len(train_set) == 0:
        raise ParameterError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    model = build_model(config)
    params = model.named_parameters()
    tensors = list(params.values())
    opt = AdamWState()
    weights = config.loss_weights()
    prior = extract_prior(train_set.road, config.pool_k)
    if zero_prior:
        prior = zero_prior_like(prior)

    steps_per_epoch = math.ceil(len(train_set) / config.batch)
    total_steps = config.epochs * steps_per_epoch
    ckpt_dir = out_dir / "checkpoint"
    history = []
    best_val = None
    step = 0
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w") as log_fh:
        for epoch in range(config.epochs):
            perm = rng.permutation(len(train_set))
            for lo in range(0, len(train_set), config.batch):
                ids = perm[lo:lo + config.batch]
                samples = [train_set.sample(int(i)) for i in ids]
                lr = cosine_lr(step, total_steps, config.lr0)
                zero_grads(tensors)
                try:
                    breakdown = batch_loss(model, prior, samples, weights)
                    E.backward(breakdown.total)
                except NumericError as exc:
                    batch_ids = [int(i) for i in ids]
                    log.error("non-finite loss at epoch %d step %d, batch %s",
                              epoch, step, batch_ids)
                    xb, yb = make_batch(samples)
                    write_tensor(out_dir / "diagnostic_batch_x.gtc", xb.data)
                    write_tensor(out_dir / "diagnostic_batch_y.gtc", yb.data)
                    raise NumericError(f"{exc} (epoch {epoch}, step {step}, "
                                       f"batch {batch_ids})") from exc
                grads = {name: p.grad for name, p in params.items() if p.grad is not None}
                clip_gradients(grads, config.clip_norm)
                adamw_step(params, grads, opt, lr, config.weight_decay)
                record = {"step": step, "epoch": epoch, "lr": lr}
                record.update(breakdown.values())
                history.append(record)
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                step += 1
            if len(val_set) > 0:
                val = validation_loss(model, prior, val_set, weights, config.batch)
                log.info("epoch %d: validation total loss %.6f", epoch, val)
                if best_val is None or val < best_val:
                    best_val = val
                    save_checkpoint(ckpt_dir, model, config, train_set.stats,
                                    opt, epoch, val)
            else:
                save_checkpoint(ckpt_dir, model, config, train_set.stats,
                                opt, epoch, float("nan"))
    if len(val_set) == 0:
        log.warning("validation split empty; kept the final epoch checkpoint")
    return load_checkpoint(ckpt_dir), history


def predict_batches(model: ModelState, prior: TopologyPrior, sample_set: SampleSet,
                    batch: int):
    """Yield (samples, normalized predictions) over a split without gradients."""
    with no_grad():
        for lo in range(0, len(sample_set), batch):
            samples = [sample_set.sample(i)
                       for i in range(lo, min(lo + batch, len(sample_set)))]
            x, _ = make_batch(samples)
            yhat = model.forward(x, prior)
            yield samples, yhat.data
