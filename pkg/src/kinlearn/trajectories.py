"""Feature-trajectory data model and the on-disk .traj / .gt formats.

A demonstration is a set of time-stamped 3-D feature trajectories, each
observation carrying a position (m) and a unit surface normal. The text
format is newline-delimited, one record per (trajectory, frame)
observation, preceded by a header with schema version and frame rate:

    traj 1 <frame_rate>
    <id> <frame> <px> <py> <pz> <nx> <ny> <nz>

Records are grouped by trajectory id with strictly increasing frame
indices inside a group. Ground truth lives in a sidecar ``.gt`` file (see
``save_ground_truth``) holding part labels, per-part per-frame poses and
the true joint specs with their configuration sequences.

Floats are written with ``repr`` so the round trip is lossless and runs
are byte-identical for a fixed seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaVersionMismatch
from .geometry import Pose

TRAJ_SCHEMA = 1
GT_SCHEMA = 1

RIGID = "rigid"
PRISMATIC = "prismatic"
REVOLUTE = "revolute"
JOINT_KINDS = (RIGID, PRISMATIC, REVOLUTE)


@dataclass(frozen=True)
class FeatureObservation:
    """One feature sighting: frame index, position (m), unit normal."""

    frame: int
    position: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        p.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "normal", n)

    def __eq__(self, other):
        if not isinstance(other, FeatureObservation):
            return NotImplemented
        return (
            self.frame == other.frame
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.normal, other.normal)
        )


@dataclass(frozen=True)
class FeatureTrajectory:
    """One tracked point's observations, frames strictly increasing."""

    id: int
    observations: tuple[FeatureObservation, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        if len(obs) < 2:
            raise ValueError(f"trajectory {self.id}: needs >=2 observations")
        frames = [o.frame for o in obs]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"trajectory {self.id}: frames not strictly increasing")
        object.__setattr__(self, "observations", obs)

    @property
    def frames(self) -> np.ndarray:
        return np.array([o.frame for o in self.observations])

    @property
    def positions(self) -> np.ndarray:
        return np.array([o.position for o in self.observations])

    @property
    def normals(self) -> np.ndarray:
        return np.array([o.normal for o in self.observations])


@dataclass(frozen=True)
class GroundTruthJoint:
    parent: int
    child: int
    kind: str
    axis: np.ndarray  # world frame at frame 0 (unit; zeros for rigid)
    origin: np.ndarray  # point on the axis, world frame at frame 0
    configurations: np.ndarray  # q per frame (radians or meters)

    def __eq__(self, other):
        if not isinstance(other, GroundTruthJoint):
            return NotImplemented
        return (
            (self.parent, self.child, self.kind) == (other.parent, other.child, other.kind)
            and np.array_equal(self.axis, other.axis)
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.configurations, other.configurations)
        )


@dataclass
class GroundTruth:
    """Synthetic stand-in for marker-based ground truth."""

    labels: dict[int, int]  # trajectory id -> part id
    part_poses: dict[int, list[Pose]]  # part id -> pose per frame
    joints: list[GroundTruthJoint]

    def parts(self) -> list[int]:
        return sorted(self.part_poses)

    def validate(self, trajectory_ids) -> None:
        for tid in trajectory_ids:
            if tid not in self.labels:
                raise ValueError(f"trajectory {tid} has no part label")
            if self.labels[tid] not in self.part_poses:
                raise ValueError(f"trajectory {tid} labeled with unknown part")

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        if self.labels != other.labels or self.joints != other.joints:
            return False
        if set(self.part_poses) != set(other.part_poses):
            return False
        return all(self.part_poses[p] == other.part_poses[p] for p in self.part_poses)


@dataclass
class Demonstration:
    trajectories: list[FeatureTrajectory]
    frame_rate: float = 30.0
    ground_truth: GroundTruth | None = None

    def __post_init__(self):
        ids = [t.id for t in self.trajectories]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate trajectory ids")
        if self.ground_truth is not None:
            self.ground_truth.validate(ids)

    def n_frames(self) -> int:
        return 1 + max(int(t.frames[-1]) for t in self.trajectories)

    def by_id(self) -> dict[int, FeatureTrajectory]:
        return {t.id: t for t in self.trajectories}

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.trajectories == other.trajectories
            and self.ground_truth == other.ground_truth
        )


# ---------------------------------------------------------------------------
# serialization


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def gt_path_for(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".gt"


def save(demo: Demonstration, path: str, with_ground_truth: bool = True) -> None:
    """Write a demonstration; ground truth goes to the ``.gt`` sidecar."""
    lines = [f"traj {TRAJ_SCHEMA} {demo.frame_rate!r}"]
    for traj in demo.trajectories:
        for o in traj.observations:
            lines.append(f"{traj.id} {o.frame} {_fmt(o.position)} {_fmt(o.normal)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    if with_ground_truth and demo.ground_truth is not None:
        save_ground_truth(demo.ground_truth, gt_path_for(path))


def save_ground_truth(gt: GroundTruth, path: str) -> None:
    lines = [f"gt {GT_SCHEMA}"]
    for tid in sorted(gt.labels):
        lines.append(f"label {tid} {gt.labels[tid]}")
    for part in sorted(gt.part_poses):
        for frame, pose in enumerate(gt.part_poses[part]):
            lines.append(f"pose {part} {frame} {_fmt(pose.q)} {_fmt(pose.t)}")
    for j in gt.joints:
        lines.append(
            f"joint {j.parent} {j.child} {j.kind} {_fmt(j.axis)} {_fmt(j.origin)}"
        )
        for frame, q in enumerate(j.configurations):
            lines.append(f"config {j.parent} {j.child} {frame} {float(q)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load(path: str) -> Demonstration:
    """Read a ``.traj`` file; loads the ``.gt`` sidecar when present."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 3 or header[0] != "traj":
        raise ParseError("expected header 'traj <schema> <frame_rate>'", line=1)
    if header[1] != str(TRAJ_SCHEMA):
        raise SchemaVersionMismatch(header[1], str(TRAJ_SCHEMA))
    frame_rate = float(header[2])

    trajectories: list[FeatureTrajectory] = []
    seen: set[int] = set()
    cur_id: int | None = None
    cur_obs: list[FeatureObservation] = []
    last_frame = -1

    def flush(lineno):
        if cur_id is None:
            return
        if len(cur_obs) < 2:
            raise ParseError(f"trajectory {cur_id} has fewer than 2 observations", line=lineno)
        trajectories.append(FeatureTrajectory(cur_id, tuple(cur_obs)))

    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", line=lineno)
        try:
            tid = int(parts[0])
            frame = int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if tid != cur_id:
            flush(lineno)
            if tid in seen:
                raise ParseError(f"duplicate id {tid}", line=lineno)
            seen.add(tid)
            cur_id = tid
            cur_obs = []
            last_frame = -1
        if frame <= last_frame:
            raise ParseError(
                f"trajectory {tid}: frame {frame} not increasing", line=lineno
            )
        last_frame = frame
        cur_obs.append(FeatureObservation(frame, np.array(vals[:3]), np.array(vals[3:])))
    flush(len(lines) + 1)

    gt = None
    gt_path = gt_path_for(path)
    if os.path.exists(gt_path):
        gt = load_ground_truth(gt_path)
    return Demonstration(trajectories, frame_rate, gt)


def load_ground_truth(path: str) -> GroundTruth:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 2 or header[0] != "gt":
        raise ParseError("expected header 'gt <schema>'", line=1)
    if header[1] != str(GT_SCHEMA):
        raise SchemaVersionMismatch(header[1], str(GT_SCHEMA))

    labels: dict[int, int] = {}
    poses: dict[int, dict[int, Pose]] = {}
    joints: dict[tuple[int, int], dict] = {}
    configs: dict[tuple[int, int], dict[int, float]] = {}

    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        try:
            tag = parts[0]
            if tag == "label":
                labels[int(parts[1])] = int(parts[2])
            elif tag == "pose":
                part, frame = int(parts[1]), int(parts[2])
                vals = [float(v) for v in parts[3:]]
                if len(vals) != 7:
                    raise ParseError("pose record needs 7 floats", line=lineno)
                poses.setdefault(part, {})[frame] = Pose(np.array(vals[:4]), np.array(vals[4:]))
            elif tag == "joint":
                key = (int(parts[1]), int(parts[2]))
                kind = parts[3]
                if kind not in JOINT_KINDS:
                    raise ParseError(f"unknown joint kind {kind!r}", line=lineno)
                vals = [float(v) for v in parts[4:]]
                joints[key] = {
                    "kind": kind,
                    "axis": np.array(vals[:3]),
                    "origin": np.array(vals[3:]),
                }
            elif tag == "config":
                key = (int(parts[1]), int(parts[2]))
                configs.setdefault(key, {})[int(parts[3])] = float(parts[4])
            else:
                raise ParseError(f"unknown record tag {tag!r}", line=lineno)
        except ParseError:
            raise
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), line=lineno) from None

    part_poses: dict[int, list[Pose]] = {}
    for part, by_frame in poses.items():
        n = 1 + max(by_frame)
        if sorted(by_frame) != list(range(n)):
            raise ParseError(f"part {part}: pose frames not contiguous from 0")
        part_poses[part] = [by_frame[f] for f in range(n)]

    gt_joints = []
    for key, info in joints.items():
        by_frame = configs.get(key, {})
        qs = np.array([by_frame[f] for f in sorted(by_frame)])
        gt_joints.append(
            GroundTruthJoint(key[0], key[1], info["kind"], info["axis"], info["origin"], qs)
        )
    return GroundTruth(labels, part_poses, gt_joints)
