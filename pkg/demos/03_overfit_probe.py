"""Overfit a tiny forecaster on four windows of one synthetic city.

A fast version of the training-dynamics check: 60 optimizer steps on four
samples should pull the total loss well below its starting point. Run with
no arguments; takes a couple of minutes on a laptop CPU.
"""

from pathlib import Path
import tempfile

from rcsnet.data import SampleSet, fit_norm_stats, normalize_road, synth_city
from rcsnet.trainer import TrainConfig, train

movie, road = synth_city(seed=42, h=32, w=32, t=48)
stats = fit_norm_stats([movie])
road_map = normalize_road(road)

samples = SampleSet([movie], road_map, stats, t_in=12, t_out=12, stride=6)
samples.index = samples.index[:4]
empty = SampleSet([movie], road_map, stats, t_in=12, t_out=12, stride=6)
empty.index = []

config = TrainConfig(epochs=60, batch=8, seed=42)
out_dir = Path(tempfile.mkdtemp(prefix="rcsnet_probe_"))
print(f"training 60 steps on 4 samples; artifacts in {out_dir}")

checkpoint, history = train(config, samples, empty, out_dir)

print("\nstep  total    pred     struct   lr")
for record in history[:: max(1, len(history) // 12)]:
    print(f"{record['step']:4d}  {record['total']:.4f}  {record['pred']:.4f}"
          f"  {record['struct']:.4f}  {record['lr']:.2e}")
ratio = history[-1]["total"] / history[0]["total"]
print(f"\nfinal/initial total loss: {ratio:.3f}")
