"""Synthetic SoC-radar scan sequences with known point correspondences.

A fixed landmark field is observed from a smoothly moving sensor. Each scan
keeps the landmarks inside the field of view, perturbs them with Gaussian
noise, drops some, injects ghost returns uniformly inside the field of view
and shuffles the result, so the row order carries no identity. The landmark id
of every emitted point is kept, which gives exact truth correspondences
between consecutive scans.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import ScanPair, ScanRecord, make_pairs
from .geometry import FovSpec, PoseSE3, rotation_about_axis

log = logging.getLogger(__name__)

GHOST = -1


@dataclass(frozen=True)
class SynthConfig:
    points_min: int = 1
    points_max: int = 40
    landmark_density: float = 0.06  # landmarks per cubic meter
    band_height: float = 3.0  # landmarks occupy |z| <= band_height in the world
    translation_step: float = 0.3  # mean forward motion per scan, meters
    rotation_step: float = np.deg2rad(2.0)  # yaw-rate scale per scan, radians
    noise_sigma: float = 0.05  # 3D RMS position error, meters (per axis: sigma / sqrt(3))
    dropout: float = 0.2
    ghost_rate: float = 0.2
    scan_period: float = 0.1
    fov: FovSpec = field(default_factory=FovSpec)
    seed: int = 0
    max_attempts: int = 10

    def __post_init__(self):
        if not (0 <= self.dropout <= 1 and 0 <= self.ghost_rate <= 1):
            raise ValueError("dropout and ghost_rate must lie in [0, 1]")
        if self.noise_sigma < 0 or self.translation_step < 0 or self.rotation_step < 0:
            raise ValueError("noise and motion magnitudes must be non-negative")
        if not 0 <= self.points_min <= self.points_max:
            raise ValueError("need 0 <= points_min <= points_max")


@dataclass
class SyntheticSequence:
    records: list
    landmark_ids: list  # per scan: landmark id of every point, GHOST for ghosts
    truth: list  # per consecutive pair: (m, 2) array of (prev index, curr index)
    world_poses: list

    def pairs(self, name="synth") -> list[ScanPair]:
        return make_pairs(self.records, name, self.truth)


def _trajectory(conf: SynthConfig, n: int, rng) -> list[PoseSE3]:
    poses = []
    yaw = pitch = roll = 0.0
    omega = 0.0
    pos = np.zeros(3)
    for _ in range(n):
        r = (rotation_about_axis([0, 0, 1], yaw) @ rotation_about_axis([0, 1, 0], pitch)
             @ rotation_about_axis([1, 0, 0], roll))
        poses.append(PoseSE3(r, pos.copy()))
        # smooth yaw rate (AR(1)), small attitude wobble, forward-dominant velocity
        omega = 0.7 * omega + conf.rotation_step * rng.normal()
        yaw += omega
        pitch = 0.5 * pitch + 0.25 * conf.rotation_step * rng.normal()
        roll = 0.5 * roll + 0.25 * conf.rotation_step * rng.normal()
        step = conf.translation_step * np.array([1.0 + 0.2 * rng.normal(),
                                                 0.2 * rng.normal(), 0.1 * rng.normal()])
        pos = pos + r @ step
    return poses


def _landmarks(conf: SynthConfig, poses, rng) -> np.ndarray:
    centers = np.array([p.translation for p in poses])
    reach = conf.fov.range_max
    lo = centers.min(axis=0) - reach
    hi = centers.max(axis=0) + reach
    lo[2], hi[2] = -conf.band_height, conf.band_height
    volume = float(np.prod(hi - lo))
    count = rng.poisson(conf.landmark_density * volume)
    return rng.uniform(lo, hi, size=(count, 3))


def sample_in_fov(fov: FovSpec, n: int, rng) -> np.ndarray:
    """Points uniformly distributed over the volume of the field of view."""
    az = rng.uniform(fov.azimuth_min, fov.azimuth_max, n)
    s_lo, s_hi = np.sin(fov.elevation_min), np.sin(fov.elevation_max)
    el = np.arcsin(rng.uniform(s_lo, s_hi, n))
    r = np.cbrt(rng.uniform(fov.range_min ** 3, fov.range_max ** 3, n))
    return np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az),
                     r * np.sin(el)], axis=1)


def _scan(conf, landmarks, pose, rng):
    fov = conf.fov
    local = pose.inverse().apply(landmarks)
    ids = np.flatnonzero(fov.contains(local))
    keep = rng.random(len(ids)) >= conf.dropout
    ids = ids[keep]
    pts = local[ids] + (conf.noise_sigma / np.sqrt(3.0)) * rng.normal(size=(len(ids), 3))
    inside = fov.contains(pts)
    pts, ids = pts[inside], ids[inside]
    n_ghost = rng.binomial(len(ids), conf.ghost_rate) if len(ids) else 0
    ghosts = sample_in_fov(fov, n_ghost, rng)
    pts = np.vstack([pts, ghosts])
    ids = np.concatenate([ids, np.full(n_ghost, GHOST)])
    if len(ids) > conf.points_max:
        sel = np.sort(rng.choice(len(ids), conf.points_max, replace=False))
        pts, ids = pts[sel], ids[sel]
    order = rng.permutation(len(ids))
    return pts[order], ids[order]


def correspondences(ids_prev: np.ndarray, ids_curr: np.ndarray) -> np.ndarray:
    """(prev index, curr index) of points sharing a landmark id; ghosts never match."""
    where = {int(l): j for j, l in enumerate(ids_curr) if l != GHOST}
    pairs = [(i, where[int(l)]) for i, l in enumerate(ids_prev) if l != GHOST and int(l) in where]
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def generate_synthetic(conf: SynthConfig, n_scans: int) -> SyntheticSequence:
    """Simulate ``n_scans`` consecutive scans. Deterministic for a given ``conf.seed``."""
    rng = np.random.default_rng(conf.seed)
    for attempt in range(max(1, conf.max_attempts)):
        poses = _trajectory(conf, n_scans, rng)
        landmarks = _landmarks(conf, poses, rng)
        scans = [_scan(conf, landmarks, p, rng) for p in poses]
        short = sum(len(ids) < conf.points_min for _, ids in scans)
        if not short:
            break
        log.warning("synthetic sequence has %d scans below points_min=%d (attempt %d); "
                    "regenerating", short, conf.points_min, attempt + 1)
    records = [ScanRecord.from_pose(k * conf.scan_period, pts, pose)
               for k, ((pts, _), pose) in enumerate(zip(scans, poses))]
    ids = [i for _, i in scans]
    truth = [correspondences(ids[k], ids[k + 1]) for k in range(n_scans - 1)]
    return SyntheticSequence(records, ids, truth, poses)


def synthetic_pairs(conf: SynthConfig, n_pairs: int, scans_per_sequence: int = 11,
                    name: str = "synth") -> list[ScanPair]:
    """``n_pairs`` scan pairs drawn from independent short sequences."""
    pairs = []
    k = 0
    while len(pairs) < n_pairs:
        seq = generate_synthetic(replace(conf, seed=conf.seed * 100003 + k), scans_per_sequence)
        pairs.extend(seq.pairs(f"{name}{k}"))
        k += 1
    return pairs[:n_pairs]
