"""Meshes, rigid poses, cameras and boxes.

Coordinates are camera-centred with +x right, +y down and +z into the scene
(the usual pinhole/OpenCV convention), so image rows grow with +y.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyGeometryError, InvalidCameraError, InvalidMeshError

TWO_PI = 2.0 * np.pi


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if len(f) == 0:
            raise InvalidMeshError("mesh has no faces")
        if not np.all(np.isfinite(v)):
            raise InvalidMeshError("non-finite vertex coordinates")
        if f.min() < 0 or f.max() >= len(v):
            raise InvalidMeshError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise InvalidMeshError("degenerate face (repeated vertex index)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def edges(self):
        """Unique undirected edges (E, 2) and the faces using each one.

        Returns ``(edges, face_a, face_b)``; ``face_b`` is -1 for border edges
        and edges shared by more than two faces keep only the first two.
        """
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        owner = np.tile(np.arange(len(f)), 3)
        key = np.sort(e, axis=1)
        order = np.lexsort((owner, key[:, 1], key[:, 0]))
        key, owner = key[order], owner[order]
        uniq, start, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
        fa = owner[start]
        fb = np.where(counts >= 2, owner[np.minimum(start + 1, len(owner) - 1)], -1)
        return uniq, fa, fb

    @cached_property
    def is_watertight(self) -> bool:
        f = self.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology, new positions; shares the validated faces and edge caches."""
        v = _frozen(vertices, np.float64).reshape(-1, 3)
        if v.shape != self.vertices.shape:
            raise InvalidMeshError("vertex count changed")
        if not np.all(np.isfinite(v)):
            raise InvalidMeshError("non-finite vertex coordinates")
        out = object.__new__(TriMesh)
        object.__setattr__(out, "vertices", v)
        object.__setattr__(out, "faces", self.faces)
        out.__dict__["edges"] = self.edges  # computed once on the source mesh
        for key in ("is_watertight",):
            if key in self.__dict__:
                out.__dict__[key] = self.__dict__[key]
        return out


def axis_angle_to_matrix(omega) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if theta < 1e-8:
        # second-order Taylor keeps the result orthonormal to ~1e-16
        return np.eye(3) + K + 0.5 * K @ K
    K /= theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def matrix_to_axis_angle(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_t))
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * vee
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        if vee @ axis < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * vee


def canonical_axis_angle(omega) -> np.ndarray:
    """Wrap an axis-angle vector so its magnitude lies in [0, pi]."""
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta <= np.pi:
        return w.copy()
    return matrix_to_axis_angle(axis_angle_to_matrix(w))


def geodesic_angle(Ra, Rb) -> float:
    """Rotation angle of Ra^T Rb in radians."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class RigidPose:
    """World vertices are ``scale * (R(rotation) @ v + translation)``."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        if np.linalg.norm(rot) >= TWO_PI:
            rot = canonical_axis_angle(rot)
        object.__setattr__(self, "rotation", _frozen(rot, np.float64))
        object.__setattr__(self, "translation", _frozen(np.reshape(self.translation, 3), np.float64))
        s = float(self.scale)
        if not (s > 0 and np.isfinite(s)):
            raise ValueError(f"scale must be positive, got {s}")
        object.__setattr__(self, "scale", s)
        if not (np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.translation))):
            raise ValueError("non-finite pose")

    @cached_property
    def matrix(self) -> np.ndarray:
        return axis_angle_to_matrix(self.rotation)

    def transform_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * (pts @ self.matrix.T + self.translation)

    def inverse_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts / self.scale - self.translation) @ self.matrix

    def same_as(self, other: "RigidPose") -> bool:
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.scale == other.scale
        )

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation],
            "translation": [float(x) for x in self.translation],
            "scale": float(self.scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        return cls(
            np.asarray(d.get("rotation", [0.0, 0.0, 0.0]), dtype=np.float64),
            np.asarray(d["translation"], dtype=np.float64),
            float(d.get("scale", 1.0)),
        )


IDENTITY_POSE = RigidPose()


def apply_pose(mesh: TriMesh, pose: RigidPose) -> TriMesh:
    return mesh.with_vertices(pose.transform_points(mesh.vertices))


def compose_poses(outer: RigidPose, inner: RigidPose) -> RigidPose:
    """Pose equal to applying ``inner`` first and then ``outer``.

    s2 (R2 s1 (R1 v + t1) + t2) = s1 s2 (R2 R1 v + R2 t1 + t2 / s1)
    """
    R = outer.matrix @ inner.matrix
    t = outer.matrix @ inner.translation + outer.translation / inner.scale
    return RigidPose(matrix_to_axis_angle(R), t, inner.scale * outer.scale)


@dataclass(frozen=True)
class Aabb:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"inverted box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)


def aabb_of_points(pts, padding: float = 0.0) -> Aabb:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyGeometryError("no points to bound")
    return Aabb(pts.min(axis=0) - padding, pts.max(axis=0) + padding)


def aabb_of_mesh(mesh: TriMesh, padding: float = 0.0) -> Aabb:
    if padding < 0:
        raise ValueError("padding must be >= 0")
    return aabb_of_points(mesh.vertices, padding)


def aabb_overlap(a: Aabb, b: Aabb) -> bool:
    # touching boxes overlap: only a strict gap on some axis separates them
    for k in range(3):
        if a.lo[k] > b.hi[k] or b.lo[k] > a.hi[k]:
            return False
    return True


def centroid(mesh_or_points) -> np.ndarray:
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriMesh) else np.asarray(mesh_or_points)
    if len(pts) == 0:
        raise EmptyGeometryError("centroid of empty geometry")
    return pts.mean(axis=0)


@dataclass(frozen=True)
class Camera:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise InvalidCameraError(f"focal length must be > 0, got {self.focal}")
        if not (isinstance(self.width, (int, np.integer)) and self.width > 0 and self.height > 0):
            raise InvalidCameraError("image size must be positive integers")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidCameraError("principal point outside the image")

    @classmethod
    def centered(cls, focal: float, width: int, height: int) -> "Camera":
        return cls(float(focal), width / 2.0, height / 2.0, int(width), int(height))

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class WeakPerspective:
    sigma: float
    tx: float = 0.0
    ty: float = 0.0


def weak_to_perspective(wp: WeakPerspective, f: float) -> np.ndarray:
    """Translation [t_x, t_y, f / sigma]: depth is the reciprocal of the camera scale."""
    if not wp.sigma > 0:
        raise InvalidCameraError(f"weak-perspective scale must be > 0, got {wp.sigma}")
    if not f > 0:
        raise InvalidCameraError(f"focal length must be > 0, got {f}")
    return np.array([wp.tx, wp.ty, f / wp.sigma], dtype=np.float64)


@dataclass(frozen=True)
class Rect2:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted rect {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def bbox_iou_2d(a: Rect2, b: Rect2) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def mask_box(mask) -> Rect2 | None:
    """Pixel-edge bounding rect of a binary mask, None when empty."""
    ys, xs = np.nonzero(np.asarray(mask))
    if len(xs) == 0:
        return None
    return Rect2(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
