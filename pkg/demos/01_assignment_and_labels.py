"""Labels from poses: the cost matrix, the assignment, and the distance gate.

Run: python demos/01_assignment_and_labels.py
"""

import numpy as np

from radarcorr import PoseSE3, generate_labels, solve_min
from radarcorr.labelgen import build_cost_matrix
from radarcorr.synth import SynthConfig, synthetic_pairs

np.set_printoptions(precision=3, suppress=True)

# A tiny assignment first. Rows are workers, columns are jobs.
cost = np.array([[4.0, 1.0, 3.0],
                 [2.0, 0.0, 5.0],
                 [3.0, 2.0, 2.0]])
sol = solve_min(cost)
print("pairs", sol.pairs, "total", sol.objective)  # 5.0

# Rectangular problems leave the extra rows unassigned.
wide = np.array([[1.0, 9.0], [9.0, 1.0], [0.5, 0.5]])
print("rectangular", solve_min(wide).pairs)

# One synthetic scan pair with generator truth.
pair = synthetic_pairs(SynthConfig(seed=3), 1)[0]
print(len(pair.prev), "previous points,", len(pair.curr), "current points,",
      len(pair.truth), "true correspondences")

# Distances between current points and previous points moved into the current frame.
c = build_cost_matrix(pair.prev, pair.curr, pair.pose)
print("cost matrix", c.shape, "(current x previous)")

# Assignment + gate. Label k > 0 means previous point i matches current point k - 1.
labels = generate_labels(pair.prev, pair.curr, pair.pose, gate=0.15)
print("labels", labels.labels)
got = set(labels.pairs())
ref = {tuple(t) for t in pair.truth.tolist()}
print(f"recovered {len(got & ref)} of {len(ref)} true pairs, {len(got - ref)} spurious")

# Without the pose the same procedure falls apart, which is why labels need ground truth.
blind = set(generate_labels(pair.prev, pair.curr, PoseSE3.identity(), gate=0.15).pairs())
print(f"identity pose instead: {len(blind & ref)} of {len(ref)}")
