"""Domain types and exact geometric primitives for the distributed camera model.

A *distributed camera* is a bag of observed light rays (origin + unit
direction in a local frame) together with 3D points and observations that
tie rays to point identities.  A single pinhole camera is the special case
where all ray origins coincide.

Frame convention
----------------
A pose estimated against world points is stored as a
:class:`SimilarityTransform` ``(R, t, s)`` whose fields satisfy the ray
constraint ``s*c_i + alpha_i*d_i = R*X_i + t``: world points land in the
camera frame via ``R X + t`` while local ray origins are stretched by
``s``.  As a *point map* the class acts as the ordinary similarity
``p -> s*R*p + t`` so that composition and inversion form a group.  Use
:func:`alignment_from_pose` to turn a solved pose into the similarity that
places the camera's local frame into the world (base) frame; that is the
map reconstruction merging consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

_SIGN_EPS = 1e-12


def _as_vec3(v, name="vector"):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise InvalidInputError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} must be finite, got {a}")
    return a


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion with a canonical sign.

    Normalized on construction; the first component whose magnitude
    exceeds 1e-12 is made positive so that q and -q compare equal.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        a = np.array([self.w, self.x, self.y, self.z], dtype=float)
        if not np.all(np.isfinite(a)):
            raise InvalidInputError(f"quaternion components must be finite, got {a}")
        n = np.linalg.norm(a)
        if n < _SIGN_EPS:
            raise InvalidInputError("all-zero quaternion")
        a /= n
        for comp in a:
            if abs(comp) > _SIGN_EPS:
                if comp < 0.0:
                    a = -a
                break
        object.__setattr__(self, "w", float(a[0]))
        object.__setattr__(self, "x", float(a[1]))
        object.__setattr__(self, "y", float(a[2]))
        object.__setattr__(self, "z", float(a[3]))

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Quaternion":
        a = np.asarray(a, dtype=float)
        if a.shape != (4,):
            raise InvalidInputError(f"quaternion array must have shape (4,), got {a.shape}")
        return Quaternion(a[0], a[1], a[2], a[3])

    @staticmethod
    def from_rotation_matrix(R) -> "Quaternion":
        """Quaternion of a proper rotation matrix (Shepperd's method)."""
        R = np.asarray(R, dtype=float)
        if R.shape != (3, 3):
            raise InvalidInputError("rotation matrix must be 3x3")
        tr = np.trace(R)
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            q = (0.25 * s,
                 (R[2, 1] - R[1, 2]) / s,
                 (R[0, 2] - R[2, 0]) / s,
                 (R[1, 0] - R[0, 1]) / s)
        elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = ((R[2, 1] - R[1, 2]) / s,
                 0.25 * s,
                 (R[0, 1] + R[1, 0]) / s,
                 (R[0, 2] + R[2, 0]) / s)
        elif R[1, 1] >= R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = ((R[0, 2] - R[2, 0]) / s,
                 (R[0, 1] + R[1, 0]) / s,
                 0.25 * s,
                 (R[1, 2] + R[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = ((R[1, 0] - R[0, 1]) / s,
                 (R[0, 2] + R[2, 0]) / s,
                 (R[1, 2] + R[2, 1]) / s,
                 0.25 * s)
        return Quaternion(*q)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotation(self)

    def angle_deg_to(self, other: "Quaternion") -> float:
        """Geodesic rotation angle between the two rotations, in degrees."""
        dot = min(1.0, abs(float(np.dot(self.array, other.array))))
        return math.degrees(2.0 * math.acos(dot))


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a quaternion (Quaternion or length-4 array-like).

    Array inputs are normalized internally; the underlying map is even in
    q, so q and -q produce identical matrices.
    """
    if isinstance(q, Quaternion):
        a = q.array
    else:
        a = np.asarray(q, dtype=float)
        if a.shape != (4,):
            raise InvalidInputError(f"quaternion must have 4 components, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("quaternion components must be finite")
        n = np.linalg.norm(a)
        if n < _SIGN_EPS:
            raise InvalidInputError("all-zero quaternion")
        a = a / n
    w, x, y, z = a
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


@dataclass(frozen=True)
class SimilarityTransform:
    """7-DoF similarity: unit-quaternion rotation, translation, positive scale."""

    rotation: Quaternion
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        t = _as_vec3(self.translation, "translation")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        s = float(self.scale)
        if not math.isfinite(s) or s <= 0.0:
            raise InvalidInputError(f"scale must be positive and finite, got {s}")
        object.__setattr__(self, "scale", s)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(Quaternion.identity(), np.zeros(3), 1.0)

    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.rotation_matrix()

    def apply(self, p) -> np.ndarray:
        return apply_similarity(self, p)


def apply_similarity(T: SimilarityTransform, p) -> np.ndarray:
    """Point action of the similarity: ``s * R @ p + t``.

    Accepts a single 3-vector or an (n, 3) array of points.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("point must be finite")
    R = T.rotation_matrix()
    return T.scale * (p @ R.T) + T.translation


def compose_similarity(T2: SimilarityTransform, T1: SimilarityTransform) -> SimilarityTransform:
    """The similarity applying T1 first, then T2.

    Scales multiply, rotations compose, and the translation is
    ``s2 * R2 @ t1 + t2``.
    """
    q = T2.rotation * T1.rotation
    t = T2.scale * (T2.rotation_matrix() @ T1.translation) + T2.translation
    return SimilarityTransform(q, t, T2.scale * T1.scale)


def invert_similarity(T: SimilarityTransform) -> SimilarityTransform:
    Rt = T.rotation_matrix().T
    return SimilarityTransform(T.rotation.conjugate(), -(Rt @ T.translation) / T.scale, 1.0 / T.scale)


def alignment_from_pose(T: SimilarityTransform) -> SimilarityTransform:
    """Similarity that places the camera's local frame into the world frame.

    For a pose ``(R, t, s)`` satisfying ``s*c + alpha*d = R*X + t``, the
    local point ``p`` maps to the world point ``s*R^T p - R^T t``.
    """
    Rt = T.rotation_matrix().T
    return SimilarityTransform(T.rotation.conjugate(), -(Rt @ T.translation), T.scale)


def pose_from_alignment(T: SimilarityTransform) -> SimilarityTransform:
    """Inverse of :func:`alignment_from_pose`."""
    R = T.rotation_matrix().T  # rotation of the pose
    return SimilarityTransform(T.rotation.conjugate(), -(R @ T.translation), T.scale)


@dataclass(frozen=True)
class Ray:
    """Observed light ray in a distributed camera's local frame."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _as_vec3(self.origin, "ray origin")
        d = _as_vec3(self.direction, "ray direction")
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise InvalidInputError("ray direction must be nonzero")
        if abs(n - 1.0) > 1e-9:   # keep already-unit vectors bit-identical
            d = d / n
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Correspondence:
    """A ray paired with a known 3D world point."""

    ray: Ray
    point: np.ndarray
    score: Optional[float] = None
    point_id: Optional[int] = None

    def __post_init__(self):
        p = _as_vec3(self.point, "world point")
        p.setflags(write=False)
        object.__setattr__(self, "point", p)
        if self.score is not None:
            s = float(self.score)
            if not (0.0 <= s <= 1.0):
                raise InvalidInputError(f"score must be in [0, 1], got {s}")
            object.__setattr__(self, "score", s)


def reprojection_residual(T: SimilarityTransform, c: Correspondence) -> Tuple[float, float]:
    """Angular error (radians) and predicted depth of a correspondence.

    The predicted ray is ``R X + t - s c``; the residual is its angle to
    the observed direction and the depth is its norm.  When the point
    coincides with the scaled ray origin the geometry is degenerate and
    the angle is reported as pi (depth 0) rather than raising, so robust
    scoring keeps running.
    """
    R = T.rotation_matrix()
    pred = R @ c.point + T.translation - T.scale * c.ray.origin
    depth = float(np.linalg.norm(pred))
    if depth < 1e-12:
        return math.pi, 0.0
    cosang = float(np.dot(pred, c.ray.direction)) / depth
    cosang = max(-1.0, min(1.0, cosang))
    return math.acos(cosang), depth


@dataclass(frozen=True)
class DistributedCamera:
    """Rays, points, and observations with shared point identities.

    ``cameras`` holds (id, center, orientation) per physical camera in the
    local frame; ``points`` holds (point_id, xyz) in the local frame;
    ``observations`` holds (camera_id, point_id, unit direction in the
    local frame).  Doubles as a (sub-)reconstruction.
    """

    cameras: Tuple[Tuple[object, np.ndarray, Quaternion], ...]
    points: Tuple[Tuple[int, np.ndarray], ...]
    observations: Tuple[Tuple[object, int, np.ndarray], ...]

    def __post_init__(self):
        cams = []
        cam_ids = set()
        for cid, center, orient in self.cameras:
            if cid in cam_ids:
                raise InvalidInputError(f"duplicate camera id {cid!r}")
            cam_ids.add(cid)
            c = _as_vec3(center, f"camera {cid!r} center")
            c.setflags(write=False)
            if not isinstance(orient, Quaternion):
                orient = Quaternion.from_array(orient)
            cams.append((cid, c, orient))
        pts = []
        pids = set()
        for pid, xyz in self.points:
            if pid in pids:
                raise InvalidInputError(f"duplicate point id {pid!r}")
            pids.add(pid)
            p = _as_vec3(xyz, f"point {pid!r}")
            p.setflags(write=False)
            pts.append((pid, p))
        obs = []
        for cid, pid, d in self.observations:
            if cid not in cam_ids:
                raise InvalidInputError(f"observation references unknown camera id {cid!r}")
            if pid not in pids:
                raise InvalidInputError(f"observation references unknown point id {pid!r}")
            dv = _as_vec3(d, "observation direction")
            n = np.linalg.norm(dv)
            if n < 1e-12:
                raise InvalidInputError("observation direction must be nonzero")
            if abs(n - 1.0) > 1e-9:
                dv = dv / n
            dv.setflags(write=False)
            obs.append((cid, pid, dv))
        object.__setattr__(self, "cameras", tuple(cams))
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "observations", tuple(obs))

    @staticmethod
    def empty() -> "DistributedCamera":
        return DistributedCamera((), (), ())

    @property
    def point_map(self):
        return {pid: xyz for pid, xyz in self.points}

    @property
    def camera_map(self):
        return {cid: (center, orient) for cid, center, orient in self.cameras}

    @property
    def point_ids(self):
        return frozenset(pid for pid, _ in self.points)

    @property
    def n_points(self) -> int:
        return len(self.points)


def merge_distributed_cameras(
    base: DistributedCamera,
    other: DistributedCamera,
    T: SimilarityTransform,
) -> DistributedCamera:
    """Union of two distributed cameras, with ``other`` mapped by ``T``.

    ``T`` must map other's local frame into base's frame.  Points whose
    ids already exist in base keep base's coordinates; directions from
    ``other`` are rotated by R only.  Camera-id collisions raise; callers
    namespace ids.
    """
    base_cam_ids = {cid for cid, _, _ in base.cameras}
    for cid, _, _ in other.cameras:
        if cid in base_cam_ids:
            raise InvalidInputError(f"camera id collision on {cid!r}; namespace ids before merging")
    R = T.rotation_matrix()
    cams = list(base.cameras)
    for cid, center, orient in other.cameras:
        cams.append((cid, apply_similarity(T, center), T.rotation * orient))
    base_pids = base.point_ids
    pts = list(base.points)
    for pid, xyz in other.points:
        if pid not in base_pids:
            pts.append((pid, apply_similarity(T, xyz)))
    obs = list(base.observations)
    for cid, pid, d in other.observations:
        obs.append((cid, pid, R @ d))
    return DistributedCamera(tuple(cams), tuple(pts), tuple(obs))
