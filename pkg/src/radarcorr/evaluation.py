"""Precision / recall of predicted correspondences against reference pairs."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PairMetrics:
    pair_id: str
    n_predicted: int
    n_truth: int
    n_correct: int
    precision: float
    recall: float
    f1: float
    no_predictions: bool


def pair_metrics(pair_id: str, predicted, truth) -> PairMetrics:
    """Precision is reported as 1.0 (with ``no_predictions`` set) when nothing was predicted."""
    pred = {(int(i), int(j)) for i, j, *_ in predicted}
    ref = {(int(i), int(j)) for i, j in np.asarray(truth, dtype=np.int64).reshape(-1, 2).tolist()}
    correct = len(pred & ref)
    precision = correct / len(pred) if pred else 1.0
    recall = correct / len(ref) if ref else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PairMetrics(pair_id, len(pred), len(ref), correct, precision, recall, f1, not pred)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    sweep: np.ndarray | None = None  # threshold, precision, recall, n_predicted
    runtimes: np.ndarray | None = None  # seconds per pair

    @property
    def mean_precision(self) -> float:
        return float(np.mean([r.precision for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_recall(self) -> float:
        return float(np.mean([r.recall for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_f1(self) -> float:
        return float(np.mean([r.f1 for r in self.rows])) if self.rows else float("nan")

    def pooled(self) -> tuple[float, float]:
        """Precision and recall over all pairs' matches taken together."""
        pred = sum(r.n_predicted for r in self.rows)
        ref = sum(r.n_truth for r in self.rows)
        correct = sum(r.n_correct for r in self.rows)
        return (correct / pred if pred else 1.0), (correct / ref if ref else 1.0)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("pair_id,n_predicted,n_truth,n_correct,precision,recall,f1,no_predictions\n")
        for r in self.rows:
            out.write(f"{r.pair_id},{r.n_predicted},{r.n_truth},{r.n_correct},"
                      f"{r.precision!r},{r.recall!r},{r.f1!r},{int(r.no_predictions)}\n")
        pp, pr = self.pooled()
        out.write(f"#mean,,,,{self.mean_precision!r},{self.mean_recall!r},{self.mean_f1!r},\n")
        out.write(f"#pooled,,,,{pp!r},{pr!r},,\n")
        if self.runtimes is not None and len(self.runtimes):
            out.write(f"#runtime_mean_s,{float(np.mean(self.runtimes))!r}\n")
            out.write(f"#runtime_std_s,{float(np.std(self.runtimes))!r}\n")
        if self.sweep is not None:
            out.write("#sweep,threshold,precision,recall,n_predicted\n")
            for t, p, r, n in self.sweep:
                out.write(f"#sweep,{float(t)!r},{float(p)!r},{float(r)!r},{int(n)}\n")
        return out.getvalue()


def read_report(text: str) -> EvalReport:
    rows, sweep = [], []
    for line in text.splitlines()[1:]:
        if line.startswith("#sweep,") and not line.startswith("#sweep,threshold"):
            sweep.append([float(v) for v in line.split(",")[1:]])
        if line.startswith("#") or not line.strip():
            continue
        f = line.split(",")
        rows.append(PairMetrics(f[0], int(f[1]), int(f[2]), int(f[3]), float(f[4]),
                                float(f[5]), float(f[6]), bool(int(f[7]))))
    return EvalReport(rows, np.array(sweep) if sweep else None)


def evaluate(predictions: dict, truth: dict, runtimes=None) -> EvalReport:
    """``predictions`` maps pair id -> iterable of (i, j[, score]); ``truth`` pair id -> (m, 2)."""
    rows = [pair_metrics(pid, predictions.get(pid, []), ref) for pid, ref in truth.items()]
    rt = None if runtimes is None else np.asarray(runtimes, dtype=np.float64)
    return EvalReport(rows, runtimes=rt)
