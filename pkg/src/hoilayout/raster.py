"""Perspective software rasterizer: depth/index buffers and soft silhouettes.

Pixel (row r, column c) is sampled at its centre (c + 0.5, r + 0.5) and is
covered when that centre lies inside a projected triangle (top-left fill rule
on shared edges).

Soft silhouettes replace the hard 0/1 coverage by a logistic falloff of the
signed pixel distance D to the projected outline (positive inside)::

    S = 1 / (1 + exp(-k D)),   k = ln(19) / soft_width

so S = 0.5 on the outline and S = 0.95 / 0.05 at +/- soft_width pixels.
The outline is approximated by the mesh's contour edges (edges between a
front- and a back-facing projected triangle, plus open borders), which is
exact for convex meshes and continuous in the pose for any mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BehindCameraError, ConfigError, DimensionMismatchError
from .geometry import Camera, TriMesh

SOFT_GAIN = float(np.log(19.0))
NEAR = 1e-6
SATURATION = 15.0


def project(camera: Camera, p) -> tuple:
    x, y, z = (float(c) for c in np.asarray(p, dtype=np.float64).reshape(3))
    if z <= 0:
        raise BehindCameraError(f"point {p} is behind the camera")
    return (camera.focal * x / z + camera.cx, camera.focal * y / z + camera.cy, z)


def project_points(camera: Camera, pts) -> np.ndarray:
    """(N,3) -> (N,3) columns u, v, z. Every point must have z > 0."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    if np.any(z <= NEAR):
        raise BehindCameraError("mesh crosses or lies behind the camera plane")
    return np.column_stack([camera.focal * pts[:, 0] / z + camera.cx,
                            camera.focal * pts[:, 1] / z + camera.cy, z])


@dataclass
class DepthIndexMap:
    depth: np.ndarray  # (H, W) float64, +inf where empty
    index: np.ndarray  # (H, W) int64, 0 = background

    @property
    def shape(self):
        return self.depth.shape


def render_depth(mesh: TriMesh, camera: Camera, inst_id: int = 1) -> DepthIndexMap:
    """Render one posed mesh into fresh buffers."""
    depth = np.full(camera.shape, np.inf)
    index = np.zeros(camera.shape, dtype=np.int64)
    _draw(mesh, camera, depth, index, inst_id)
    return DepthIndexMap(depth, index)


def _draw(mesh, camera, depth, index, inst_id):
    uvz = project_points(camera, mesh.vertices)
    _kernels.raster_depth(np.ascontiguousarray(uvz[:, 0]), np.ascontiguousarray(uvz[:, 1]),
                          1.0 / uvz[:, 2], mesh.faces, camera.width, camera.height,
                          depth, index, int(inst_id))


def render_scene(meshes, camera: Camera) -> DepthIndexMap:
    """Z-buffer a list of ``(instance_id, posed TriMesh)`` pairs."""
    meshes = list(meshes)
    if not meshes:
        raise ConfigError("render_scene needs at least one mesh")
    ids = [int(i) for i, _ in meshes]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate instance ids {ids}")
    if min(ids) <= 0:
        raise ConfigError("instance ids must be > 0")
    depth = np.full(camera.shape, np.inf)
    index = np.zeros(camera.shape, dtype=np.int64)
    for inst_id, mesh in sorted(meshes, key=lambda m: int(m[0])):
        _draw(mesh, camera, depth, index, inst_id)
    return DepthIndexMap(depth, index)


def composite(layers: dict) -> DepthIndexMap:
    """Front-most instance per pixel from per-instance depth maps (ties -> lower id)."""
    ids = sorted(layers)
    stack = np.stack([layers[i] for i in ids])
    front = np.argmin(stack, axis=0)  # first minimum = lowest id
    depth = np.take_along_axis(stack, front[None], axis=0)[0]
    index = np.where(np.isfinite(depth), np.asarray(ids)[front], 0)
    return DepthIndexMap(depth, index.astype(np.int64))


def contour_segments(mesh: TriMesh, uv: np.ndarray) -> np.ndarray:
    """Projected contour edges as (S, 4) rows ``ax, ay, bx, by``."""
    edges, fa, fb = mesh.edges
    f = mesh.faces
    a, b, c = uv[f[:, 0]], uv[f[:, 1]], uv[f[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    front = area > 0
    border = fb < 0
    fb_safe = np.where(border, fa, fb)
    keep = border | (front[fa] != front[fb_safe])
    e = edges[keep]
    return np.ascontiguousarray(np.column_stack([uv[e[:, 0]], uv[e[:, 1]]]))


def signed_outline_distance(mesh: TriMesh, camera: Camera, cap: float = np.inf):
    """Hard coverage and signed pixel distance to the outline (positive inside).

    Magnitudes are clipped at ``cap`` pixels.
    """
    uvz = project_points(camera, mesh.vertices)
    depth = np.full(camera.shape, np.inf)
    index = np.zeros(camera.shape, dtype=np.int64)
    _kernels.raster_depth(np.ascontiguousarray(uvz[:, 0]), np.ascontiguousarray(uvz[:, 1]),
                          1.0 / uvz[:, 2], mesh.faces, camera.width, camera.height, depth, index, 1)
    covered = index > 0
    seg = contour_segments(mesh, uvz[:, :2])
    dist = _kernels.segment_distance_field(seg.reshape(-1, 4), camera.width, camera.height, float(cap))
    return covered, np.where(covered, dist, -dist)


def render_silhouette(mesh: TriMesh, camera: Camera, soft_width: float = 2.0) -> np.ndarray:
    """(H, W) coverage in [0, 1]; ``soft_width=0`` gives the hard 0/1 raster."""
    if soft_width < 0:
        raise ConfigError("soft_width must be >= 0")
    if np.all(mesh.vertices[:, 2] <= NEAR):
        raise BehindCameraError("mesh lies entirely behind the camera")
    if soft_width == 0:
        return (render_depth(mesh, camera).index > 0).astype(np.float64)
    k = SOFT_GAIN / soft_width
    # beyond SATURATION / k pixels the falloff is within exp(-15) of 0 or 1
    # and is snapped there, so the silhouette is exactly 0 far from the mesh
    cap = SATURATION / k
    uvz = project_points(camera, mesh.vertices)
    depth = np.full(camera.shape, np.inf)
    index = np.zeros(camera.shape, dtype=np.int64)
    _kernels.raster_depth(np.ascontiguousarray(uvz[:, 0]), np.ascontiguousarray(uvz[:, 1]),
                          1.0 / uvz[:, 2], mesh.faces, camera.width, camera.height, depth, index, 1)
    seg = contour_segments(mesh, uvz[:, :2]).reshape(-1, 4)
    dist = _kernels.segment_distance_field(seg, camera.width, camera.height, float(cap))
    return _kernels.soft_coverage(dist, index, k, cap)


def soft_falloff(distance, soft_width: float):
    """The silhouette falloff as a function of signed pixel distance."""
    return 1.0 / (1.0 + np.exp(-SOFT_GAIN / soft_width * np.asarray(distance, dtype=np.float64)))


def edge_map(mask, filter_size: int = 7) -> np.ndarray:
    """MaxPool(M) - M with a ``filter_size`` square window, zero-padded.

    Works on soft masks too (the band just outside the foreground).
    """
    if filter_size < 3 or filter_size % 2 == 0:
        raise ConfigError(f"edge filter must be odd and >= 3, got {filter_size}")
    m = np.asarray(mask, dtype=np.float64)
    out = np.zeros_like(m)
    rows = np.flatnonzero(m.any(axis=1))
    if len(rows) == 0:
        return out
    cols = np.flatnonzero(m.any(axis=0))
    # everything farther than the window radius from a nonzero pixel stays 0
    rad = filter_size // 2
    r0, r1 = max(rows[0] - rad, 0), min(rows[-1] + rad + 1, m.shape[0])
    c0, c1 = max(cols[0] - rad, 0), min(cols[-1] + rad + 1, m.shape[1])
    sub = np.ascontiguousarray(m[r0:r1, c0:c1])
    out[r0:r1, c0:c1] = _kernels.max_filter_zero(sub, rad) - sub
    return out


def check_same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"buffer shapes differ: {sorted(shapes)}")
