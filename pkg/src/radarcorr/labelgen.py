"""Self-supervised correspondence labels from a known inter-frame pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import solve_min
from .geometry import PointCloud, PoseSE3

DEFAULT_GATE = 0.5


class NoLabelsError(ValueError):
    """Raised when a cost matrix cannot be built because a cloud is empty."""


@dataclass(frozen=True)
class LabelSet:
    """One class label per previous-cloud point.

    ``labels[i] = j + 1`` means previous point ``i`` matches current point ``j``;
    ``labels[i] = 0`` means no match.
    """

    labels: np.ndarray
    gate_distance: float = DEFAULT_GATE

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))

    def __len__(self) -> int:
        return len(self.labels)

    def pairs(self) -> list[tuple[int, int]]:
        """(previous index, current index) for every non-zero label."""
        rows = np.flatnonzero(self.labels)
        return [(int(i), int(self.labels[i]) - 1) for i in rows]

    def validate(self, n_curr: int) -> None:
        nz = self.labels[self.labels > 0]
        if (self.labels < 0).any() or (self.labels > n_curr).any():
            raise ValueError(f"labels must lie in [0, {n_curr}]")
        if len(np.unique(nz)) != len(nz):
            raise ValueError("non-zero labels must be unique")


def build_cost_matrix(prev: PointCloud, curr: PointCloud, pose: PoseSE3) -> np.ndarray:
    """Distances between current points (rows) and pose-mapped previous points (columns).

    ``pose`` maps previous-frame coordinates into the current frame, so entry
    (i, j) is ``|curr_i - (R prev_j + t)|``.
    """
    if len(prev) == 0 or len(curr) == 0:
        raise NoLabelsError("empty cloud: no labels derivable")
    moved = pose.apply(prev.points)
    diff = curr.points[:, None, :] - moved[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def generate_labels(prev: PointCloud, curr: PointCloud, pose: PoseSE3,
                    gate: float = DEFAULT_GATE) -> LabelSet:
    """Minimum-distance one-to-one matching, gated at ``gate`` meters.

    ``gate=math.inf`` keeps every assignment pair.
    """
    if not gate > 0:
        raise ValueError("gate must be positive")
    labels = np.zeros(len(prev), dtype=np.int64)
    try:
        cost = build_cost_matrix(prev, curr, pose)
    except NoLabelsError:
        return LabelSet(labels, gate)
    sol = solve_min(cost)
    curr_idx, prev_idx = sol.rows, sol.cols
    keep = cost[curr_idx, prev_idx] <= gate
    labels[prev_idx[keep]] = curr_idx[keep] + 1
    return LabelSet(labels, gate)


def label_recovery(labels: LabelSet, truth) -> tuple[float, float]:
    """Fraction of truth pairs recovered, and fraction of labeled pairs not in truth."""
    truth = {tuple(map(int, p)) for p in truth}
    got = set(labels.pairs())
    recovered = len(got & truth) / len(truth) if truth else 1.0
    false = len(got - truth) / len(got) if got else 0.0
    return recovered, false

