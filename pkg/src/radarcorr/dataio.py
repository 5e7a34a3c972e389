"""Sequence, manifest, label and match files.

All text formats start with a ``format_version=<n> kind=<kind>`` line.
Floats are written with ``repr`` so reading back is bit-exact.

Sequence line::

    <timestamp> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <n> x1 y1 z1 ... xn yn zn

The pose is the sensor in the world frame, quaternion in (w, x, y, z) order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FovSpec, PointCloud, PoseSE3, quat_to_rotation, rotation_to_quat

FORMAT_VERSION = 1
QUAT_TOL = 1e-6
_EPS_NORM = 8 * np.finfo(np.float64).eps


class FormatError(ValueError):
    """Malformed file content. ``line`` is 1-based when known."""

    def __init__(self, msg, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + msg)
        self.path = path
        self.line = line


class VersionError(FormatError):
    pass


def normalize_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > QUAT_TOL:
        raise ValueError(f"quaternion norm {norm:.9f} is not 1 within {QUAT_TOL}")
    # leave already-unit quaternions untouched so files round-trip bit-exactly
    return q / norm if abs(norm - 1.0) > _EPS_NORM else q


@dataclass
class ScanRecord:
    timestamp: float
    points: np.ndarray
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 3) if pts.size else np.zeros((0, 3))
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def from_pose(cls, timestamp, points, pose: PoseSE3) -> "ScanRecord":
        return cls(timestamp, points, rotation_to_quat(pose.rotation), pose.translation)

    @property
    def pose(self) -> PoseSE3:
        return PoseSE3(quat_to_rotation(self.quaternion), self.translation)

    def cloud(self, frame_id: str = "radar") -> PointCloud:
        return PointCloud(self.points, self.timestamp, frame_id)

    def validate(self) -> None:
        if not np.isfinite(self.points).all():
            raise ValueError("non-finite point coordinate")
        if (np.abs(self.points).sum(axis=1) == 0).any():
            raise ValueError("point at the exact origin collides with zero padding")
        if not (np.isfinite(self.quaternion).all() and np.isfinite(self.translation).all()
                and np.isfinite(self.timestamp)):
            raise ValueError("non-finite pose or timestamp")

    def __eq__(self, other):
        if not isinstance(other, ScanRecord):
            return NotImplemented
        return (self.timestamp == other.timestamp
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.quaternion, other.quaternion)
                and np.array_equal(self.translation, other.translation))


def _header(kind: str, **extra) -> str:
    parts = [f"format_version={FORMAT_VERSION}", f"kind={kind}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts)


def _parse_header(line: str, kind: str, path) -> dict:
    fields = {}
    for tok in line.split():
        if "=" not in tok:
            raise FormatError(f"bad header token {tok!r}", path, 1)
        k, v = tok.split("=", 1)
        fields[k] = v
    if "format_version" not in fields:
        raise FormatError("missing format_version", path, 1)
    if fields["format_version"] != str(FORMAT_VERSION):
        raise VersionError(f"format_version {fields['format_version']} unsupported "
                           f"(expected {FORMAT_VERSION})", path, 1)
    if fields.get("kind") != kind:
        raise FormatError(f"expected kind={kind}, got {fields.get('kind')}", path, 1)
    return fields


def _lines(path):
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text:
        raise FormatError("empty file", path)
    return text


# -- sequences --------------------------------------------------------------

def write_sequence(records, path) -> None:
    out = [_header("sequence")]
    for rec in records:
        vals = [rec.timestamp, *rec.quaternion, *rec.translation]
        row = [repr(float(v)) for v in vals] + [str(len(rec.points))]
        row += [repr(float(v)) for v in rec.points.reshape(-1)]
        out.append(" ".join(row))
    Path(path).write_text("\n".join(out) + "\n")


def read_sequence(path) -> list[ScanRecord]:
    lines = _lines(path)
    _parse_header(lines[0], "sequence", path)
    records = []
    last_t = -np.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tok = line.split()
        try:
            vals = [float(t) for t in tok[:8]]
            n = int(tok[8])
            coords = [float(t) for t in tok[9:]]
        except (ValueError, IndexError) as exc:
            raise FormatError(f"unparseable record ({exc})", path, lineno) from None
        if len(coords) != 3 * n:
            raise FormatError(f"expected {3 * n} coordinates, found {len(coords)}", path, lineno)
        try:
            q = normalize_quaternion(vals[1:5])
            rec = ScanRecord(vals[0], np.array(coords).reshape(n, 3), q, vals[5:8])
            rec.validate()
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
        if not rec.timestamp > last_t:
            raise FormatError("timestamps must be strictly increasing", path, lineno)
        last_t = rec.timestamp
        records.append(rec)
    return records


# -- pairs ------------------------------------------------------------------

@dataclass
class ScanPair:
    pair_id: str
    prev: PointCloud
    curr: PointCloud
    pose: PoseSE3  # previous frame -> current frame
    truth: np.ndarray | None = None  # (m, 2) previous/current index pairs, when known


def relative_pose(prev_pose: PoseSE3, curr_pose: PoseSE3) -> PoseSE3:
    """Transform mapping previous-sensor-frame points into the current sensor frame."""
    return curr_pose.inverse().compose(prev_pose)


def make_pairs(records, name: str = "seq", truth=None) -> list[ScanPair]:
    """Consecutive scan pairs with the relative pose between them."""
    pairs = []
    for k in range(len(records) - 1):
        a, b = records[k], records[k + 1]
        t = None if truth is None else np.asarray(truth[k], dtype=np.int64).reshape(-1, 2)
        pairs.append(ScanPair(f"{name}:{k}", a.cloud(), b.cloud(),
                              relative_pose(a.pose, b.pose), t))
    return pairs


# -- manifest ---------------------------------------------------------------

@dataclass
class Manifest:
    n_max: int
    fov: FovSpec
    gate: float
    sequences: list = field(default_factory=list)  # [{"path": str, "records": int}]
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {"format_version": self.format_version, "kind": "manifest",
                "n_max": self.n_max, "fov": self.fov.as_dict(), "gate": self.gate,
                "sequences": self.sequences}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc})", path) from None
        if d.get("format_version") != FORMAT_VERSION:
            raise VersionError(f"format_version {d.get('format_version')} unsupported", path)
        if d.get("kind") != "manifest":
            raise FormatError("not a manifest", path)
        return cls(int(d["n_max"]), FovSpec(**d["fov"]), float(d["gate"]),
                   list(d["sequences"]), d["format_version"])


def dataset_n_max(clouds) -> int:
    """Longest cloud length, the N every cloud is padded to."""
    return max((len(c) for c in clouds), default=0)


# -- labels, matches and truth tables --------------------------------------

def write_labels(labels: dict, path, gate: float) -> None:
    """``labels`` maps pair id -> integer label vector."""
    out = [_header("labels", gate=repr(float(gate)))]
    for pid, lab in labels.items():
        lab = np.asarray(lab, dtype=np.int64)
        out.append(" ".join([pid, str(len(lab)), *map(str, lab.tolist())]))
    Path(path).write_text("\n".join(out) + "\n")


def read_labels(path) -> tuple[dict, float]:
    lines = _lines(path)
    head = _parse_header(lines[0], "labels", path)
    result = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tok = line.split()
        try:
            n = int(tok[1])
            lab = np.array([int(t) for t in tok[2:]], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"unparseable labels ({exc})", path, lineno) from None
        if len(lab) != n or (lab < 0).any():
            raise FormatError("label count mismatch or negative label", path, lineno)
        result[tok[0]] = lab
    return result, float(head["gate"])


@dataclass
class MatchRecord:
    pair_id: str
    t_prev: float
    t_curr: float
    matches: list  # (prev_index, curr_index, score)


def write_matches(records, path, threshold: float) -> None:
    out = [_header("matches", threshold=repr(float(threshold)))]
    for r in records:
        row = [r.pair_id, repr(float(r.t_prev)), repr(float(r.t_curr)), str(len(r.matches))]
        for i, j, s in r.matches:
            row += [str(int(i)), str(int(j)), repr(float(s))]
        out.append(" ".join(row))
    Path(path).write_text("\n".join(out) + "\n")


def read_matches(path) -> tuple[list[MatchRecord], float]:
    lines = _lines(path)
    head = _parse_header(lines[0], "matches", path)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tok = line.split()
        try:
            m = int(tok[3])
            body = tok[4:]
            if len(body) != 3 * m:
                raise ValueError(f"expected {3 * m} values, found {len(body)}")
            triples = [(int(body[3 * k]), int(body[3 * k + 1]), float(body[3 * k + 2]))
                       for k in range(m)]
            out.append(MatchRecord(tok[0], float(tok[1]), float(tok[2]), triples))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"unparseable match record ({exc})", path, lineno) from None
    return out, float(head["threshold"])


def write_truth(truth: dict, path) -> None:
    """``truth`` maps pair id -> (m, 2) array of (previous, current) indices."""
    out = [_header("truth")]
    for pid, pairs in truth.items():
        flat = np.asarray(pairs, dtype=np.int64).reshape(-1)
        out.append(" ".join([pid, str(len(flat) // 2), *map(str, flat.tolist())]))
    Path(path).write_text("\n".join(out) + "\n")


def read_truth(path) -> dict:
    lines = _lines(path)
    _parse_header(lines[0], "truth", path)
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tok = line.split()
        try:
            m = int(tok[1])
            vals = np.array([int(t) for t in tok[2:]], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"unparseable truth record ({exc})", path, lineno) from None
        if len(vals) != 2 * m:
            raise FormatError("truth pair count mismatch", path, lineno)
        out[tok[0]] = vals.reshape(m, 2)
    return out
