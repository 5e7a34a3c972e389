"""Train on synthetic scan pairs, pick a threshold, and compare with nearest neighbours.

A small run (about two minutes on one core). The acceptance benchmark uses the
same steps with 400 training pairs and 100 epochs.

Run: python demos/03_train_and_match.py
"""

import time

from radarcorr import InferenceConfig, ModelConfig, SynthConfig, TrainConfig, train
from radarcorr.dataio import dataset_n_max
from radarcorr.evaluation import evaluate
from radarcorr.matcher import calibrate_threshold, match_pair, nearest_neighbor_matches
from radarcorr.synth import synthetic_pairs
from radarcorr.trainer import make_example

sigma = 0.1
pairs = synthetic_pairs(SynthConfig(noise_sigma=sigma, seed=1), 300)
train_pairs, cal_pairs, val_pairs = pairs[:200], pairs[200:250], pairs[250:]
n = dataset_n_max([p.prev for p in pairs] + [p.curr for p in pairs])

t0 = time.perf_counter()
res = train([make_example(p, n, 3 * sigma) for p in train_pairs], ModelConfig(n_max=n),
            TrainConfig(epochs=60, weight_decay=0.1))
print(f"trained in {time.perf_counter() - t0:.0f} s, loss {res.losses[0]:.3f} -> {res.losses[-1]:.3f}")

cal = calibrate_threshold(cal_pairs, res.net, 0.9, InferenceConfig())
print("threshold", round(cal.threshold, 4), "target reached" if cal.attained else "target missed")
print("sweep (threshold, precision, recall, kept):")
for row in cal.table[:: max(1, len(cal.table) // 6)]:
    print(f"  {row[0]:.3f}  {row[1]:.3f}  {row[2]:.3f}  {int(row[3])}")

conf = InferenceConfig(accept_threshold=cal.threshold)
truth = {p.pair_id: p.truth for p in val_pairs}
net_report = evaluate({p.pair_id: match_pair(p.prev, p.curr, res.net, conf).matches for p in val_pairs}, truth)
nn_report = evaluate({p.pair_id: nearest_neighbor_matches(p.prev, p.curr, 1.0, conf.fov).matches
                      for p in val_pairs}, truth)
for name, rep in (("network", net_report), ("nearest neighbour", nn_report)):
    p, r = rep.pooled()
    print(f"{name:18s} precision {p:.3f} recall {r:.3f}")
