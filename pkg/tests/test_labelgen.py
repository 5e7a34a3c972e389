import math

import numpy as np
import pytest

from radarcorr.geometry import PointCloud, PoseSE3, random_pose
from radarcorr.labelgen import LabelSet, NoLabelsError, build_cost_matrix, generate_labels


def test_identical_clouds_zero_diagonal(rng):
    c = PointCloud(rng.normal(size=(6, 3)))
    cost = build_cost_matrix(c, c, PoseSE3.identity())
    np.testing.assert_array_equal(np.diag(cost), 0)


def test_translated_single_point():
    pose = PoseSE3(np.eye(3), [1.0, 0, 0])
    cost = build_cost_matrix(PointCloud([[1.0, 2, 3]]), PointCloud([[2.0, 2, 3]]), pose)
    assert cost.shape == (1, 1) and cost[0, 0] == 0


def test_cost_entries_match_scalar_formula(rng):
    prev = PointCloud(rng.normal(size=(8, 3)))
    curr = PointCloud(rng.normal(size=(5, 3)))
    pose = random_pose(rng)
    cost = build_cost_matrix(prev, curr, pose)
    assert cost.shape == (5, 8)
    r, t = pose.rotation, pose.translation
    for i in range(5):
        for j in range(8):
            moved = [sum(r[a, b] * prev.points[j, b] for b in range(3)) + t[a] for a in range(3)]
            d = math.sqrt(sum((curr.points[i, a] - moved[a]) ** 2 for a in range(3)))
            assert abs(cost[i, j] - d) <= 1e-12


def test_empty_cloud_signals():
    with pytest.raises(NoLabelsError):
        build_cost_matrix(PointCloud(np.zeros((0, 3))), PointCloud([[1.0, 0, 0]]), PoseSE3())
    lab = generate_labels(PointCloud([[1.0, 0, 0]]), PointCloud(np.zeros((0, 3))), PoseSE3())
    np.testing.assert_array_equal(lab.labels, [0])


def test_self_matching(rng):
    c = PointCloud(rng.uniform(1, 10, size=(5, 3)))
    lab = generate_labels(c, c, PoseSE3.identity(), gate=0.5)
    np.testing.assert_array_equal(lab.labels, [1, 2, 3, 4, 5])


def test_no_overlap_all_zero(rng):
    prev = PointCloud(rng.uniform(0, 1, size=(4, 3)))
    curr = PointCloud(rng.uniform(0, 1, size=(4, 3)) + 100)
    assert not generate_labels(prev, curr, PoseSE3(), gate=0.5).labels.any()


def test_known_correspondence_table(rng):
    prev_pts = np.array([[2.0, 0, 0], [4, 1, 0], [6, -1, 1], [3, 3, 0], [8, 0, -1], [5, -3, 0]])
    pose = PoseSE3(np.eye(3), [0.0, 0, 0]).compose(random_pose(rng, max_angle=0.2, max_translation=0.5))
    moved = pose.apply(prev_pts)
    # drop previous point 4, add two ghosts far from everything, shuffle
    ghosts = np.array([[20.0, 20, 20], [-20.0, 15, 3]])
    curr_pts = np.vstack([moved[[0, 1, 2, 3, 5]] + rng.normal(scale=0.02, size=(5, 3)), ghosts])
    order = rng.permutation(len(curr_pts))
    curr = PointCloud(curr_pts[order])
    where = {int(src): k for k, src in enumerate(order)}
    truth = np.zeros(6, dtype=int)
    for j, p in enumerate([0, 1, 2, 3, 5]):
        truth[p] = where[j] + 1
    lab = generate_labels(PointCloud(prev_pts), curr, pose, gate=0.3)
    np.testing.assert_array_equal(lab.labels, truth)


def test_gate_inf_labels_every_row_when_L_le_K(rng):
    prev = PointCloud(rng.normal(size=(4, 3)))
    curr = PointCloud(rng.normal(size=(7, 3)) * 50)
    lab = generate_labels(prev, curr, PoseSE3(), gate=math.inf)
    assert (lab.labels > 0).sum() == 4


class TestProperties:
    def _random_case(self, rng):
        prev = PointCloud(rng.uniform(-5, 5, size=(rng.integers(1, 12), 3)))
        pose = random_pose(rng, max_angle=0.3, max_translation=0.5)
        moved = pose.apply(prev.points)
        keep = rng.random(len(moved)) > 0.3
        curr_pts = np.vstack([moved[keep] + rng.normal(scale=0.1, size=(keep.sum(), 3)),
                              rng.uniform(-5, 5, size=(rng.integers(0, 4), 3))])
        if len(curr_pts) == 0:
            curr_pts = rng.uniform(-5, 5, size=(1, 3))
        return prev, PointCloud(rng.permutation(curr_pts)), pose

    def test_gate_respected_and_injective(self, rng):
        for _ in range(200):
            prev, curr, pose = self._random_case(rng)
            lab = generate_labels(prev, curr, pose, gate=0.25)
            lab.validate(len(curr))
            cost = build_cost_matrix(prev, curr, pose)
            for i, j in lab.pairs():
                assert cost[j, i] <= 0.25

    def test_invariant_to_common_rigid_transform(self, rng):
        for _ in range(100):
            prev, curr, pose = self._random_case(rng)
            extra = random_pose(rng, max_translation=20)
            prev2 = PointCloud(extra.apply(prev.points))
            curr2 = PointCloud(extra.apply(curr.points))
            pose2 = extra.compose(pose).compose(extra.inverse())
            a = generate_labels(prev, curr, pose, 0.25).labels
            b = generate_labels(prev2, curr2, pose2, 0.25).labels
            np.testing.assert_array_equal(a, b)


def test_labelset_validation():
    with pytest.raises(ValueError):
        LabelSet([1, 1]).validate(3)
    with pytest.raises(ValueError):
        LabelSet([4]).validate(3)
    LabelSet([0, 0, 2]).validate(3)
