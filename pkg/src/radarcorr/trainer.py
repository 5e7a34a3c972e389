"""Row-wise cross-entropy training of the correspondence network."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .geometry import PaddedCloud, pad_cloud
from .labelgen import LabelSet, generate_labels
from .model import AffinityMatrix, CorrespondenceNet, ModelConfig

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,mean_loss,val_precision,val_recall,wall_seconds"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled (AdamW-style); 0 disables
    seed: int = 0
    checkpoint_every: int = 10
    matched_rows_only: bool = False
    validate_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainExample:
    padded_prev: PaddedCloud
    padded_curr: PaddedCloud
    labels: LabelSet
    pair_id: str = ""
    truth: np.ndarray | None = None

    def __post_init__(self):
        if len(self.labels) != self.padded_prev.valid_count:
            raise ValueError("need one label per real point of the previous cloud")
        if len(self.labels) and self.labels.labels.max() > self.padded_curr.valid_count:
            raise ValueError("label refers past the end of the current cloud")


def make_example(pair, n_max: int, gate: float) -> TrainExample:
    """Pad a ``ScanPair`` and label it from its pose."""
    labels = generate_labels(pair.prev, pair.curr, pair.pose, gate)
    return TrainExample(pad_cloud(pair.prev, n_max), pad_cloud(pair.curr, n_max), labels,
                        pair.pair_id, pair.truth)


def _targets(labels: np.ndarray, matched_rows_only: bool):
    rows = np.arange(1, len(labels) + 1)
    if matched_rows_only:
        keep = labels > 0
        return rows[keep], labels[keep]
    return rows, labels


def batch_cross_entropy(g: dc.Tensor, label_sets, matched_rows_only: bool = False) -> dc.Tensor:
    """Mean over the batch of each example's row cross-entropy.

    ``g`` is (B, N+1, N+1). Row ``i`` of example ``b`` (point ``i - 1`` of the
    first cloud) is scored against target column ``labels[i - 1]``; the
    softmax runs over all N+1 columns. An example with no supervised rows
    contributes zero.
    """
    b_idx, r_idx, c_idx, weights = [], [], [], []
    batch = len(label_sets)
    for b, lab in enumerate(label_sets):
        lab = lab.labels if isinstance(lab, LabelSet) else np.asarray(lab)
        rows, cols = _targets(lab, matched_rows_only)
        if len(rows) == 0:
            log.warning("example %d has no supervised rows; it contributes zero loss", b)
            continue
        b_idx.append(np.full(len(rows), b))
        r_idx.append(rows)
        c_idx.append(cols)
        weights.append(np.full(len(rows), -1.0 / (len(rows) * batch)))
    if not b_idx:
        return dc.total(dc.scale(g, 0.0))
    logp = dc.log_softmax_rows(g)
    picked = dc.gather(logp, (np.concatenate(b_idx), np.concatenate(r_idx), np.concatenate(c_idx)))
    w = np.concatenate(weights)
    return dc.reshape(dc.matmul(dc.reshape(picked, (1, -1)), w.reshape(-1, 1)), ())


def row_cross_entropy(g: AffinityMatrix | dc.Tensor, labels, matched_rows_only: bool = False) -> dc.Tensor:
    """Cross-entropy of one affinity matrix against its label vector."""
    t = g.g if isinstance(g, AffinityMatrix) else dc._t(g)
    return batch_cross_entropy(dc.reshape(t, (1,) + t.shape), [labels], matched_rows_only)


def stack_batch(examples):
    pa = np.stack([e.padded_prev.matrix for e in examples])
    pb = np.stack([e.padded_curr.matrix for e in examples])
    ca = np.array([e.padded_prev.valid_count for e in examples])
    cb = np.array([e.padded_curr.valid_count for e in examples])
    return pa, pb, ca, cb


def batch_loss(net: CorrespondenceNet, examples, matched_rows_only: bool = False) -> dc.Tensor:
    pa, pb, ca, cb = stack_batch(examples)
    g = net.forward(pa, pb, ca, cb)
    return batch_cross_entropy(g, [e.labels for e in examples], matched_rows_only)


def split_dataset(items, val_fraction: float = 0.2, seed: int = 0):
    """Deterministic shuffle-and-split by scan pair."""
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = int(round(val_fraction * len(items)))
    val = [items[i] for i in sorted(order[:n_val])]
    train = [items[i] for i in sorted(order[n_val:])]
    return train, val


@dataclass
class TrainResult:
    net: CorrespondenceNet
    losses: list = field(default_factory=list)
    metrics: list = field(default_factory=list)  # rows matching METRICS_HEADER
    checkpoint: Path | None = None


def format_metrics_row(row) -> str:
    epoch, loss, prec, rec, wall = row
    return f"{epoch},{loss!r},{prec!r},{rec!r},{wall:.3f}"


def train(dataset, mconf: ModelConfig, tconf: TrainConfig, val_set=None,
          out_dir=None, validator=None, extra_config: dict | None = None) -> TrainResult:
    """Adam on mini-batches of ``TrainExample``.

    ``validator(net, val_set) -> (precision, recall)`` is called every
    ``validate_every`` epochs when a validation set is given. Checkpoints and a
    ``metrics.csv`` log go to ``out_dir`` when set.
    """
    if not dataset:
        raise ValueError("empty training set")
    n_max = {e.padded_prev.n_max for e in dataset} | {e.padded_curr.n_max for e in dataset}
    if n_max != {mconf.n_max}:
        raise ValueError(f"examples padded to N={sorted(n_max)} but model has N={mconf.n_max}")
    net = CorrespondenceNet(mconf, seed=tconf.seed)
    store = net.params
    rng = np.random.default_rng(tconf.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    config_block = {"model": mconf.to_dict(), "train": asdict(tconf), **(extra_config or {})}
    result = TrainResult(net)
    metrics_lines = [METRICS_HEADER]
    last_good = store.state()
    start = time.perf_counter()

    def save(tag="final"):
        if out is None:
            return None
        path = out / f"checkpoint_{tag}.params"
        dc.save_params(store, path, config_block)
        return path

    def diverged(what):
        store.load_state(last_good)
        path = save("last_good")
        raise TrainingDiverged(f"non-finite {what} at epoch {epoch}; "
                               f"last good parameters kept in {path}")

    for epoch in range(1, tconf.epochs + 1):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for s in range(0, len(order), tconf.batch_size):
            batch = [dataset[i] for i in order[s:s + tconf.batch_size]]
            loss = batch_loss(net, batch, tconf.matched_rows_only)
            value = float(loss.data)
            if not math.isfinite(value):
                diverged("loss")
            dc.backward(loss)
            dc.adam_step(store, tconf.learning_rate, tconf.beta1, tconf.beta2, tconf.eps,
                         tconf.weight_decay)
            store.zero_grad()
            if not all(np.isfinite(p.data).all() for p in store.params.values()):
                diverged("parameters")
            total += value * len(batch)
            count += len(batch)
        mean_loss = total / count
        last_good = store.state()
        prec = rec = float("nan")
        if val_set and validator is not None and (epoch % tconf.validate_every == 0
                                                  or epoch == tconf.epochs):
            probe = batch_loss(net, val_set[:1], tconf.matched_rows_only).data
            if not np.isfinite(probe):
                diverged("validation loss")
            prec, rec = validator(net, val_set)
        row = (epoch, mean_loss, prec, rec, time.perf_counter() - start)
        result.losses.append(mean_loss)
        result.metrics.append(row)
        metrics_lines.append(format_metrics_row(row))
        log.info("epoch %d loss %.5f val P %.3f R %.3f", epoch, mean_loss, prec, rec)
        if out is not None:
            (out / "metrics.csv").write_text("\n".join(metrics_lines) + "\n")
            if tconf.checkpoint_every and epoch % tconf.checkpoint_every == 0:
                save(f"epoch{epoch:04d}")
    result.checkpoint = save("final")
    return result


def load_model(path) -> tuple[CorrespondenceNet, dict]:
    """Rebuild a network from a checkpoint; returns it with the header config block."""
    header, arrays = dc.read_checkpoint(path)
    mconf = ModelConfig.from_dict(header["config"]["model"])
    net = CorrespondenceNet(mconf, seed=header.get("seed", 0))
    net.params.load_state(arrays)
    return net, header["config"]
