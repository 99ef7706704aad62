"""SE(3) geometry kernel.

Rotations are stored as unit quaternions in (w, x, y, z) order with a
canonical sign (scalar part >= 0, ties broken by the first nonzero vector
component), which makes equality tests unambiguous. Translations are in
meters. All values are immutable and all operations are pure functions.

Batched quaternion helpers (``quat_*``) operate on arrays of shape
``(..., 4)`` and are used by the pose-graph optimizer and the synthetic
generator where per-Pose Python objects would be too slow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptyInput

__all__ = [
    "Pose",
    "Twist",
    "RelativeTransform",
    "compose",
    "inverse",
    "relative",
    "apply_pose",
    "exp_twist",
    "log_pose",
    "mean_rotation",
    "align_point_sets",
    "rotation_angle",
    "pose_distance",
    "quat_mul",
    "quat_conj",
    "quat_rotate",
    "quat_canonical",
    "quat_from_rotvec",
    "quat_to_rotvec",
    "quat_angle",
]


# ---------------------------------------------------------------------------
# batched quaternion primitives


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of quaternion arrays, shape (..., 4)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * np.cross(u, uv + w * v)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip signs so the first nonzero component (w first) is positive."""
    q = np.asarray(q, dtype=float)
    sign = np.zeros(q.shape[:-1])
    for k in range(4):
        comp = q[..., k]
        sign = np.where(sign == 0.0, np.sign(comp), sign)
    sign = np.where(sign == 0.0, 1.0, sign)
    return q * sign[..., None]


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Quaternion of the rotation vector (axis * angle), batched."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1)
    half = 0.5 * angle
    # sin(x/2)/x, series for small x to avoid 0/0
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    w = np.cos(half)
    return quat_canonical(np.concatenate([w[..., None], v * k[..., None]], axis=-1))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion; angle in [0, pi], batched."""
    q = quat_canonical(np.asarray(q, dtype=float))
    w = q[..., 0]
    u = q[..., 1:]
    n = np.linalg.norm(u, axis=-1)
    angle = 2.0 * np.arctan2(n, w)
    small = n < 1e-12
    safe = np.where(small, 1.0, n)
    scale = np.where(small, 2.0, angle / safe)
    return u * scale[..., None]


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Geodesic rotation angle (radians) of a unit quaternion, batched."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(n, np.abs(q[..., 0]))


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_canonical(quat_normalize(q))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# domain types


def _as_array(v, n):
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid motion: unit quaternion (w, x, y, z) plus translation (m).

    The quaternion is normalized and sign-canonicalized on construction.
    """

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_canonical(quat_normalize(_as_array(self.q, 4)))
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", _as_array(self.t, 3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rotvec(rotvec, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_rotvec(np.asarray(rotvec, dtype=float)), np.asarray(t, dtype=float))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(quat_from_matrix(T[:3, :3]), T[:3, 3])

    @staticmethod
    def rot_about_line(axis, point, angle: float) -> "Pose":
        """Rotation by ``angle`` about the line through ``point`` along ``axis``."""
        axis = np.asarray(axis, dtype=float)
        point = np.asarray(point, dtype=float)
        q = quat_from_rotvec(axis / np.linalg.norm(axis) * angle)
        t = point - quat_rotate(q, point)
        return Pose(q, t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.q)
        T[:3, 3] = self.t
        return T

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.q.tobytes(), self.t.tobytes()))

    def __repr__(self):
        return f"Pose(q={self.q.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True)
class Twist:
    """Local 6-dim parametrization: rotation vector (rad) + translation (m)."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", _as_array(self.rot, 3))
        object.__setattr__(self, "trans", _as_array(self.trans, 3))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float)
        return Twist(v[:3], v[3:])


@dataclass(frozen=True)
class RelativeTransform:
    """Measured relative pose between two parts/clusters at one frame."""

    frm: int
    to: int
    at_time: int
    delta: Pose

    def reversed(self) -> "RelativeTransform":
        return RelativeTransform(self.to, self.frm, self.at_time, inverse(self.delta))


# ---------------------------------------------------------------------------
# operations


def compose(a: Pose, b: Pose) -> Pose:
    """a (+) b: apply b first, then a."""
    return Pose(quat_mul(a.q, b.q), quat_rotate(a.q, b.t) + a.t)


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.q)
    return Pose(qc, -quat_rotate(qc, p.t))


def relative(a: Pose, b: Pose) -> Pose:
    """a (-) b: the pose d with b (+) d = a, i.e. inverse(b) (+) a."""
    return compose(inverse(b), a)


def apply_pose(p: Pose, points: np.ndarray) -> np.ndarray:
    """Transform points of shape (..., 3)."""
    return quat_rotate(p.q, np.asarray(points, dtype=float)) + p.t


def exp_twist(tw: Twist) -> Pose:
    """Pose of a twist (decoupled rotation-vector / translation chart)."""
    return Pose(quat_from_rotvec(tw.rot), tw.trans)


def log_pose(p: Pose) -> Twist:
    """Twist of a pose; inverse of :func:`exp_twist` for angles < pi."""
    return Twist(quat_to_rotvec(p.q), p.t)


def rotation_angle(a: Pose, b: Pose | None = None) -> float:
    """Geodesic angle of a (or of the relative rotation b -> a), radians."""
    q = a.q if b is None else quat_mul(quat_conj(b.q), a.q)
    return float(quat_angle(q))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance in m, rotation angle in rad) between two poses."""
    return float(np.linalg.norm(a.t - b.t)), rotation_angle(a, b)


def mean_rotation(rotations, weights=None) -> np.ndarray:
    """Chordal mean of unit quaternions (largest eigenvector of sum w qq^T).

    Accepts a sequence of quaternion arrays or an (n, 4) array. The result
    carries the canonical sign convention.
    """
    qs = np.asarray([np.asarray(q, dtype=float) for q in rotations])
    if qs.size == 0:
        raise EmptyInput("mean_rotation needs at least one rotation")
    if weights is None:
        weights = np.ones(len(qs))
    w = np.asarray(weights, dtype=float)
    M = (qs * w[:, None]).T @ qs
    vals, vecs = np.linalg.eigh(M)
    return quat_canonical(quat_normalize(vecs[:, -1]))


def align_point_sets(src, dst, weights=None) -> Pose:
    """Weighted least-squares rigid alignment mapping ``src`` onto ``dst``.

    Minimizes sum w_i ||dst_i - (R src_i + t)||^2 via the cross-covariance
    SVD with reflection correction, so the rotation always has det +1.

    Raises DegenerateGeometry for fewer than 3 points or (near-)collinear
    source geometry (second singular value of the centered source below
    1e-6 of the first).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need >=3 correspondences, got {n}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("weights sum to zero")
    cs = (w @ src) / wsum
    cd = (w @ dst) / wsum
    src_c = src - cs
    dst_c = dst - cd
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] < 1e-6 * max(sv[0], 1e-300):
        raise DegenerateGeometry("source points are collinear within tolerance")
    H = (w[:, None] * src_c).T @ dst_c
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    q = quat_from_matrix(R)
    t = cd - quat_rotate(q, cs)
    return Pose(q, t)
