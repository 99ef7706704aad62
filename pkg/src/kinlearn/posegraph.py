"""Per-cluster SE(3) pose sequences from tracked features.

Each cluster's motion is recovered in three steps: robust frame-to-frame
alignment of its member features (iterative inlier reselection with a
seeded minimal-sample fallback), assembly of relative-pose constraints
(consecutive, a sparse long-range set every ``sparse_stride`` frames, and
constant-velocity regularizers), and batch Gauss-Newton smoothing over
the pose chain. The first observed frame is gauge-fixed to the identity,
so every pose maps first-frame world coordinates to the current frame.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import DegenerateGeometry, InsufficientCorrespondences
from .geometry import (
    Pose,
    align_point_sets,
    apply_pose,
    compose,
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_rotvec,
)
from .trajectories import Demonstration

__all__ = [
    "ClusterFrameSet",
    "PoseConstraint",
    "ClusterPoseSequence",
    "estimate_delta",
    "build_constraints",
    "optimize",
    "estimate_cluster_poses",
]

CONSECUTIVE = "consecutive"
SPARSE = "sparse"
VELOCITY = "velocity"

DEFAULT_INLIER_THRESHOLD = 0.01  # meters
DEFAULT_SPARSE_STRIDE = 10


@dataclass(frozen=True)
class ClusterFrameSet:
    """Member feature observations of one cluster at one frame."""

    cluster_id: int
    frame: int
    ids: tuple[int, ...]
    positions: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3)

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(len(self.ids), 3)
        n = np.asarray(self.normals, dtype=float).reshape(len(self.ids), 3)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "normals", n)


@dataclass(frozen=True)
class PoseConstraint:
    """One factor in the pose chain.

    ``frames`` holds (a, b) for consecutive/sparse constraints with the
    measured delta mapping the pose at a to the pose at b, or (a, b, c)
    for a constant-velocity regularizer with no measurement.
    """

    kind: str
    frames: tuple[int, ...]
    delta: Pose | None
    weight: float

    def __post_init__(self):
        if self.kind not in (CONSECUTIVE, SPARSE, VELOCITY):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == VELOCITY:
            if self.delta is not None or len(self.frames) != 3:
                raise ValueError("velocity constraint: 3 frames, no delta")
        elif self.delta is None or len(self.frames) != 2:
            raise ValueError(f"{self.kind} constraint: 2 frames and a delta")
        if self.weight < 0:
            raise ValueError("constraint weight must be >= 0")


@dataclass
class ClusterPoseSequence:
    """Smoothed pose per observed frame; first observed frame = identity."""

    cluster_id: int
    poses: dict[int, Pose]
    inlier_counts: dict[int, int] = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0

    def frames(self) -> list[int]:
        return sorted(self.poses)

    def first_frame(self) -> int:
        return min(self.poses)


def estimate_delta(
    prev: ClusterFrameSet,
    curr: ClusterFrameSet,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    seed: int = 0,
):
    """Robust relative pose from ``prev`` to ``curr`` over common features.

    Returns (delta, inlier feature ids). Starts from an all-point fit and
    iterates fit / reclassify-inliers to a fixed point; when the initial
    fit rejects more than half the points, consensus is re-seeded from
    random 3-point minimal samples (deterministic for a fixed seed).
    """
    common, ia, ib = np.intersect1d(prev.ids, curr.ids, return_indices=True)
    if len(common) < 3:
        raise InsufficientCorrespondences(
            f"need >=3 common features, got {len(common)}"
        )
    src = prev.positions[ia]
    dst = curr.positions[ib]

    def residuals(pose):
        return np.linalg.norm(apply_pose(pose, src) - dst, axis=1)

    pose = align_point_sets(src, dst)
    inliers = residuals(pose) < inlier_threshold

    if inliers.sum() < 0.5 * len(common):
        rng = np.random.default_rng(seed)
        best = None
        for _ in range(100):
            idx = rng.choice(len(common), size=3, replace=False)
            try:
                cand = align_point_sets(src[idx], dst[idx])
            except DegenerateGeometry:
                continue
            mask = residuals(cand) < inlier_threshold
            if best is None or mask.sum() > best.sum():
                best = mask
        if best is not None and best.sum() >= 3:
            inliers = best

    for _ in range(20):
        if inliers.sum() < 3:
            break
        pose = align_point_sets(src[inliers], dst[inliers])
        refreshed = residuals(pose) < inlier_threshold
        if np.array_equal(refreshed, inliers):
            break
        inliers = refreshed
    return pose, tuple(int(i) for i in common[inliers])


def build_constraints(
    frames: list[ClusterFrameSet],
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    sparse_stride: int = DEFAULT_SPARSE_STRIDE,
    seed: int = 0,
) -> list[PoseConstraint]:
    """Measurement and smoothing factors for one cluster's pose chain.

    Consecutive constraints join adjacent frame indices; sparse ones join
    (t - sparse_stride, t) when both are observed with enough common
    features; velocity regularizers cover every contiguous frame triple.
    Measurement weights are the inlier counts; the velocity weight is
    0.1 x the median consecutive weight.
    """
    frames = sorted(frames, key=lambda s: s.frame)
    by_frame = {s.frame: s for s in frames}
    constraints: list[PoseConstraint] = []

    for a, b in zip(frames, frames[1:]):
        if b.frame - a.frame != 1:
            continue  # gap: no consecutive constraint across it
        try:
            delta, inl = estimate_delta(a, b, inlier_threshold, seed)
        except (InsufficientCorrespondences, DegenerateGeometry):
            continue
        constraints.append(PoseConstraint(CONSECUTIVE, (a.frame, b.frame), delta, float(len(inl))))

    for b in frames:
        a = by_frame.get(b.frame - sparse_stride)
        if a is None:
            continue
        if len(np.intersect1d(a.ids, b.ids)) < 3:
            continue
        try:
            delta, inl = estimate_delta(a, b, inlier_threshold, seed)
        except (InsufficientCorrespondences, DegenerateGeometry):
            continue
        constraints.append(PoseConstraint(SPARSE, (a.frame, b.frame), delta, float(len(inl))))

    consecutive_weights = [c.weight for c in constraints if c.kind == CONSECUTIVE]
    w_v = 0.1 * float(np.median(consecutive_weights)) if consecutive_weights else 1.0
    for s in frames:
        t = s.frame
        if t - 1 in by_frame and t + 1 in by_frame:
            constraints.append(PoseConstraint(VELOCITY, (t - 1, t, t + 1), None, w_v))
    return constraints


def _pair_residuals(qa, ta, qb, tb, qd, td):
    # error of x_b relative to delta o x_a, in the measurement frame
    q_rel = quat_mul(qb, quat_conj(qa))
    t_rel = tb - quat_rotate(q_rel, ta)
    q_err = quat_mul(quat_conj(qd), q_rel)
    t_err = quat_rotate(quat_conj(qd), t_rel - td)
    return np.concatenate([quat_to_rotvec(q_err), t_err], axis=-1)


def _velocity_residuals(qa, ta, qb, tb, qc, tc):
    q1 = quat_mul(qb, quat_conj(qa))
    t1 = tb - quat_rotate(q1, ta)
    q2 = quat_mul(qc, quat_conj(qb))
    t2 = tc - quat_rotate(q2, tb)
    q_err = quat_mul(quat_conj(q1), q2)
    t_err = quat_rotate(quat_conj(q1), t2 - t1)
    return np.concatenate([quat_to_rotvec(q_err), t_err], axis=-1)


def _perturb(q, t, axis, eps):
    """Left-multiply each pose by exp(eps * e_axis) in the decoupled chart."""
    if axis < 3:
        rv = np.zeros(3)
        rv[axis] = eps
        dq = quat_from_rotvec(rv)
        return quat_mul(dq, q), quat_rotate(dq[None, :].repeat(len(t), 0), t)
    t2 = t.copy()
    t2[:, axis - 3] += eps
    return q, t2


def optimize(
    constraints: list[PoseConstraint], initial: ClusterPoseSequence
) -> ClusterPoseSequence:
    """Batch Gauss-Newton smoothing of the pose chain.

    Minimizes the weighted squared norm of constraint residuals over
    6-dim tangent increments with the first observed frame held at its
    initial (identity) value. The best iterate is kept, so the returned
    cost never exceeds the initial one; failure to meet the relative
    tolerance within 50 iterations sets ``converged = False``.
    """
    frames = sorted(initial.poses)
    index = {f: i for i, f in enumerate(frames)}
    n = len(frames)
    Q = np.array([initial.poses[f].q for f in frames])
    T = np.array([initial.poses[f].t for f in frames])
    # free-variable slot per frame, -1 for the gauge-fixed first frame
    var = np.array([i - 1 for i in range(n)])

    pairs = [c for c in constraints if c.kind in (CONSECUTIVE, SPARSE)]
    vels = [c for c in constraints if c.kind == VELOCITY]
    pairs = [c for c in pairs if all(f in index for f in c.frames)]
    vels = [c for c in vels if all(f in index for f in c.frames)]
    if (not pairs and not vels) or n < 2:
        return ClusterPoseSequence(
            initial.cluster_id, dict(initial.poses), dict(initial.inlier_counts)
        )

    pa = np.array([index[c.frames[0]] for c in pairs], dtype=int)
    pb = np.array([index[c.frames[1]] for c in pairs], dtype=int)
    pqd = np.array([c.delta.q for c in pairs]).reshape(-1, 4)
    ptd = np.array([c.delta.t for c in pairs]).reshape(-1, 3)
    psw = np.sqrt(np.array([c.weight for c in pairs]))
    va = np.array([index[c.frames[0]] for c in vels], dtype=int)
    vb = np.array([index[c.frames[1]] for c in vels], dtype=int)
    vc = np.array([index[c.frames[2]] for c in vels], dtype=int)
    vsw = np.sqrt(np.array([c.weight for c in vels]))
    m, k = len(pairs), len(vels)

    def weighted_residuals(Q, T):
        parts = []
        if m:
            parts.append(psw[:, None] * _pair_residuals(Q[pa], T[pa], Q[pb], T[pb], pqd, ptd))
        if k:
            parts.append(
                vsw[:, None]
                * _velocity_residuals(Q[va], T[va], Q[vb], T[vb], Q[vc], T[vc])
            )
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, 6))

    def jacobian(Q, T, r0):
        # numerical Jacobian, one batched evaluation per (slot, axis)
        eps = 1e-6
        rows, cols, data = [], [], []
        slots = []
        if m:
            slots += [("pair", 0, pa), ("pair", 1, pb)]
        if k:
            slots += [("vel", 0, va), ("vel", 1, vb), ("vel", 2, vc)]
        for kind, slot, fidx in slots:
            free = var[fidx] >= 0
            if not free.any():
                continue
            for axis in range(6):
                if kind == "pair":
                    qs = [Q[pa], Q[pb]]
                    ts = [T[pa], T[pb]]
                    qs[slot], ts[slot] = _perturb(qs[slot], ts[slot], axis, eps)
                    r = psw[:, None] * _pair_residuals(qs[0], ts[0], qs[1], ts[1], pqd, ptd)
                    base_row = 0
                    r_ref = r0[:m]
                else:
                    qs = [Q[va], Q[vb], Q[vc]]
                    ts = [T[va], T[vb], T[vc]]
                    qs[slot], ts[slot] = _perturb(qs[slot], ts[slot], axis, eps)
                    r = vsw[:, None] * _velocity_residuals(
                        qs[0], ts[0], qs[1], ts[1], qs[2], ts[2]
                    )
                    base_row = 6 * m
                    r_ref = r0[m:] if m else r0
                d = (r - r_ref) / eps  # (count, 6)
                ci = np.flatnonzero(free)
                col = 6 * var[fidx[ci]] + axis
                rows.append((base_row + 6 * ci[:, None] + np.arange(6)).ravel())
                cols.append(np.repeat(col, 6))
                data.append(d[ci].ravel())
        n_rows = 6 * (m + k)
        return scipy.sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_rows, 6 * (n - 1)),
        ).tocsr()

    r = weighted_residuals(Q, T)
    cost = float(np.sum(r**2))
    best = (Q.copy(), T.copy(), cost)
    lam = 1e-9
    converged = False
    iterations = 0
    for iterations in range(1, 51):
        if cost < 1e-18:
            converged = True
            break
        J = jacobian(Q, T, r)
        A = (J.T @ J).tocsc()
        g = J.T @ r.ravel()
        accepted = False
        for _ in range(8):
            H = A + lam * scipy.sparse.identity(A.shape[0], format="csc")
            try:
                step = scipy.sparse.linalg.spsolve(H, -g)
            except RuntimeError:
                lam *= 10
                continue
            Qn, Tn = Q.copy(), T.copy()
            for i in range(1, n):
                s = step[6 * (i - 1): 6 * i]
                dq = quat_from_rotvec(s[:3])
                Qn[i] = quat_mul(dq, Qn[i])
                Tn[i] = quat_rotate(dq, Tn[i]) + s[3:]
            Qn = quat_normalize(Qn)
            rn = weighted_residuals(Qn, Tn)
            cn = float(np.sum(rn**2))
            if cn <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged = True  # no descent direction left: local optimum
            break
        drop = cost - cn
        Q, T, r, cost = Qn, Tn, rn, cn
        lam = max(lam / 10, 1e-9)
        if cost < best[2]:
            best = (Q.copy(), T.copy(), cost)
        if cost < 1e-18 or drop < 1e-8 * max(cost, 1e-12):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"pose optimization did not converge in {iterations} iterations",
            RuntimeWarning,
        )
    Q, T, _ = best
    poses = {f: Pose(Q[i], T[i]) for i, f in enumerate(frames)}
    return ClusterPoseSequence(
        initial.cluster_id, poses, dict(initial.inlier_counts), converged, iterations
    )


def _cluster_frame_sets(demo: Demonstration, cid: int, member_ids) -> list[ClusterFrameSet]:
    by_frame: dict[int, list] = {}
    lookup = demo.by_id()
    for tid in sorted(member_ids):
        traj = lookup[tid]
        for o in traj.observations:
            by_frame.setdefault(o.frame, []).append((tid, o.position, o.normal))
    return [
        ClusterFrameSet(
            cid,
            frame,
            tuple(t for t, _, _ in entries),
            np.array([p for _, p, _ in entries]),
            np.array([nv for _, _, nv in entries]),
        )
        for frame, entries in sorted(by_frame.items())
    ]


def estimate_cluster_poses(
    demo: Demonstration,
    assignment,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    sparse_stride: int = DEFAULT_SPARSE_STRIDE,
    seed: int = 0,
) -> list[ClusterPoseSequence]:
    """Full per-cluster pipeline: frame sets, deltas, constraints, smoothing.

    Clusters observable with >=3 features in fewer than 2 frames are
    dropped with a warning. Results are ordered by cluster id.
    """
    results: list[ClusterPoseSequence] = []
    for cid in sorted(assignment.clusters):
        members = assignment.clusters[cid]
        sets = [s for s in _cluster_frame_sets(demo, cid, members) if len(s.ids) >= 3]
        if len(sets) < 2:
            warnings.warn(
                f"cluster {cid}: fewer than 2 frames with >=3 features, dropped",
                RuntimeWarning,
            )
            continue
        constraints = build_constraints(sets, inlier_threshold, sparse_stride, seed)
        consec = {c.frames[1]: c for c in constraints if c.kind == CONSECUTIVE}

        poses: dict[int, Pose] = {}
        counts: dict[int, int] = {}
        prev = None
        for s in sets:
            if prev is None:
                poses[s.frame] = Pose.identity()
                counts[s.frame] = len(s.ids)
            else:
                c = consec.get(s.frame)
                if c is not None and c.frames[0] == prev.frame:
                    poses[s.frame] = compose(c.delta, poses[prev.frame])
                    counts[s.frame] = int(c.weight)
                else:
                    # gap or failed delta: hold the previous pose
                    poses[s.frame] = poses[prev.frame]
                    counts[s.frame] = 0
            prev = s
        initial = ClusterPoseSequence(cid, poses, counts)
        results.append(optimize(constraints, initial))
    return results
