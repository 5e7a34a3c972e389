"""Inference: affinity -> assignment on the real-point block -> threshold -> FOV pruning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_max
from .geometry import FovSpec, PointCloud, pad_cloud
from .model import CorrespondenceNet

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    """A cloud has more points than the model's N."""


@dataclass
class InferenceConfig:
    accept_threshold: float = 0.0
    fov: FovSpec = field(default_factory=FovSpec)
    apply_fov: bool = True  # prune matches whose endpoints leave the FOV
    prefilter_fov: bool = True  # drop out-of-FOV points before the network
    score_space: str = "softmax"  # row probability over all N+1 columns, or "logit" for raw G

    def __post_init__(self):
        if self.score_space not in ("logit", "softmax"):
            raise ValueError("score_space must be 'logit' or 'softmax'")


@dataclass
class MatchSet:
    matches: list  # (prev_index, curr_index, score), original cloud indices
    threshold_used: float
    fov_used: FovSpec | None

    def __len__(self) -> int:
        return len(self.matches)

    def pairs(self) -> set:
        return {(i, j) for i, j, _ in self.matches}


def _row_softmax(g: np.ndarray) -> np.ndarray:
    z = g - g.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def green_scores(prev: PointCloud, curr: PointCloud, net: CorrespondenceNet,
                 conf: InferenceConfig):
    """Score block of the real points kept by the optional FOV pre-filter.

    Returns (prev_idx, curr_idx, block) where block[a, b] scores
    prev point prev_idx[a] against curr point curr_idx[b].
    """
    n_max = net.config.n_max
    ia = np.arange(len(prev))
    ib = np.arange(len(curr))
    pa, pb = prev.points, curr.points
    if conf.prefilter_fov:
        ka, kb = conf.fov.contains(pa), conf.fov.contains(pb)
        ia, ib, pa, pb = ia[ka], ib[kb], pa[ka], pb[kb]
    if len(ia) == 0 or len(ib) == 0:
        return ia, ib, np.zeros((len(ia), len(ib)))
    if len(ia) > n_max or len(ib) > n_max:
        raise CapacityError(f"cloud sizes ({len(ia)}, {len(ib)}) exceed model N={n_max}")
    ca, cb = pad_cloud(pa, n_max), pad_cloud(pb, n_max)
    g = net.forward(ca.matrix, cb.matrix, ca.valid_count, cb.valid_count).data
    scores = _row_softmax(g) if conf.score_space == "softmax" else g
    return ia, ib, scores[1:len(ia) + 1, 1:len(ib) + 1]


def candidate_matches(prev: PointCloud, curr: PointCloud, net: CorrespondenceNet,
                      conf: InferenceConfig):
    """Assignment pairs on the real-point block before thresholding.

    Returns (prev_idx, curr_idx, scores) in original cloud indices, with the
    optional FOV pre-filter applied but no post-filter.
    """
    ia, ib, green = green_scores(prev, curr, net, conf)
    if green.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    sol = solve_max(green)
    return ia[sol.rows], ib[sol.cols], green[sol.rows, sol.cols]


def select_matches(prev: PointCloud, curr: PointCloud, rows, cols, scores,
                   conf: InferenceConfig) -> MatchSet:
    keep = scores >= conf.accept_threshold
    if conf.apply_fov and len(rows):
        keep &= conf.fov.contains(prev.points[rows]) & conf.fov.contains(curr.points[cols])
    matches = [(int(i), int(j), float(s)) for i, j, s in zip(rows[keep], cols[keep], scores[keep])]
    return MatchSet(matches, conf.accept_threshold, conf.fov if conf.apply_fov else None)


def match_pair(prev: PointCloud, curr: PointCloud, net: CorrespondenceNet,
               conf: InferenceConfig | None = None) -> MatchSet:
    """One-to-one correspondences between two scans."""
    conf = conf or InferenceConfig()
    rows, cols, scores = candidate_matches(prev, curr, net, conf)
    return select_matches(prev, curr, rows, cols, scores, conf)


def _pr(n_correct, n_pred, n_truth):
    precision = n_correct / n_pred if n_pred else 1.0
    recall = n_correct / n_truth if n_truth else 1.0
    return precision, recall


@dataclass
class Calibration:
    threshold: float
    table: np.ndarray  # columns: threshold, precision, recall, n_predicted
    attained: bool


def calibrate_threshold(pairs, net: CorrespondenceNet, target_precision: float,
                        conf: InferenceConfig | None = None, n_quantiles: int = 50,
                        truth_of=None) -> Calibration:
    """Smallest acceptance threshold whose validation precision reaches the target.

    Candidate thresholds are quantiles of the observed assignment scores
    (including the minimum). ``truth_of(pair)`` returns the reference pairs;
    the default uses ``pair.truth``.
    """
    conf = conf or InferenceConfig()
    truth_of = truth_of or (lambda p: p.truth)
    all_scores, all_correct = [], []
    n_truth = 0
    for pair in pairs:
        truth = {tuple(t) for t in np.asarray(truth_of(pair)).reshape(-1, 2).tolist()}
        n_truth += len(truth)
        rows, cols, scores = candidate_matches(pair.prev, pair.curr, net, conf)
        if conf.apply_fov and len(rows):
            ok = conf.fov.contains(pair.prev.points[rows]) & conf.fov.contains(pair.curr.points[cols])
            rows, cols, scores = rows[ok], cols[ok], scores[ok]
        all_scores.append(scores)
        all_correct.append(np.array([(int(i), int(j)) in truth for i, j in zip(rows, cols)], bool))
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    correct = np.concatenate(all_correct) if all_correct else np.zeros(0, bool)
    if len(scores) == 0:
        log.warning("no candidate matches on the validation set")
        return Calibration(np.inf, np.zeros((0, 4)), False)
    grid = np.unique(np.quantile(scores, np.linspace(0.0, 1.0, n_quantiles + 1)))
    rows = []
    for t in grid:
        kept = scores >= t
        p, r = _pr(int((correct & kept).sum()), int(kept.sum()), n_truth)
        rows.append((t, p, r, int(kept.sum())))
    table = np.array(rows, dtype=np.float64)
    hit = np.flatnonzero(table[:, 1] >= target_precision)
    if len(hit):
        return Calibration(float(table[hit[0], 0]), table, True)
    best = int(np.argmax(table[:, 1]))
    log.warning("target precision %.3f unattainable; best is %.3f at threshold %.4g",
                target_precision, table[best, 1], table[best, 0])
    return Calibration(float(table[best, 0]), table, False)


def nearest_neighbor_matches(prev: PointCloud, curr: PointCloud, max_distance: float = np.inf,
                             fov: FovSpec | None = None) -> MatchSet:
    """Baseline: mutual nearest neighbours in raw sensor coordinates, gated by distance."""
    ia, ib = np.arange(len(prev)), np.arange(len(curr))
    pa, pb = prev.points, curr.points
    if fov is not None:
        ka, kb = fov.contains(pa), fov.contains(pb)
        ia, ib, pa, pb = ia[ka], ib[kb], pa[ka], pb[kb]
    if len(ia) == 0 or len(ib) == 0:
        return MatchSet([], max_distance, fov)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    fwd = d.argmin(axis=1)
    back = d.argmin(axis=0)
    matches = [(int(ia[i]), int(ib[j]), float(-d[i, j])) for i, j in enumerate(fwd)
               if back[j] == i and d[i, j] <= max_distance]
    return MatchSet(matches, max_distance, fov)
