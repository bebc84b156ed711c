"""Modified signed distance grids and the penetration measure.

phi(x) = -min(SDF(x), 0): positive inside a mesh (distance to its surface),
zero outside. Grids are built once in an instance's local frame; world-space
queries are pulled back through the current pose and rescaled, so moving or
scaling an instance never requires re-voxelizing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ResolutionError, SignUndecidableError
from .geometry import Aabb, RigidPose, TriMesh, aabb_of_mesh, aabb_of_points, aabb_overlap

# irrational-ish unit directions tried in turn by the ray-parity oracle
_RAY_DIRECTIONS = np.array([
    [0.5377, 0.7261, 0.4285],
    [-0.3923, 0.2715, 0.8789],
    [0.8112, -0.5231, 0.2611],
    [-0.1419, -0.8863, -0.4407],
    [0.6604, 0.1318, -0.7393],
    [-0.7702, 0.5933, -0.2341],
])
_RAY_DIRECTIONS /= np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)
_GRAZE_EPS = 1e-9


def _triangles(mesh: TriMesh) -> np.ndarray:
    return mesh.vertices[mesh.faces]


def _point_triangle_distance(points, tris):
    """(P,3) x (F,3,3) -> (P,F) Euclidean distances, numpy only."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    n = np.cross(b - a, c - a)
    n_len = np.linalg.norm(n, axis=1)
    n_unit = n / n_len[:, None]
    p = points[:, None, :]
    d_plane = np.einsum("pfk,fk->pf", p - a[None], n_unit)
    proj = p - d_plane[..., None] * n_unit[None]
    # barycentric inside test via edge cross products against the normal
    inside = np.ones(d_plane.shape, dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        cr = np.cross((v - u)[None], proj - u[None])
        inside &= np.einsum("pfk,fk->pf", cr, n) >= 0
    best = np.where(inside, np.abs(d_plane), np.inf)
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        t = np.einsum("pfk,fk->pf", p - u[None], e) / np.einsum("fk,fk->f", e, e)
        t = np.clip(t, 0.0, 1.0)
        q = u[None] + t[..., None] * e[None]
        best = np.minimum(best, np.linalg.norm(p - q, axis=-1))
    return best


def _crossings(point, direction, tris):
    """Number of ray/triangle crossings, or None when the ray grazes an edge."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = np.einsum("fk,fk->f", e1, h)
    s = point - a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = np.einsum("fk,fk->f", s, h) * inv
        q = np.cross(s, e1)
        v = (q @ direction) * inv
        t = np.einsum("fk,fk->f", e2, q) * inv
    parallel = np.abs(det) < 1e-14
    inside = (~parallel) & (u >= -_GRAZE_EPS) & (v >= -_GRAZE_EPS) & (u + v <= 1 + _GRAZE_EPS) & (t > -_GRAZE_EPS)
    graze = inside & ((np.abs(u) < _GRAZE_EPS) | (np.abs(v) < _GRAZE_EPS)
                      | (np.abs(1 - u - v) < _GRAZE_EPS) | (np.abs(t) < _GRAZE_EPS))
    if np.any(graze):
        return None
    return int(np.count_nonzero(inside))


def _inside_by_parity(points, tris):
    out = np.empty(len(points), dtype=bool)
    for i, p in enumerate(points):
        for d in _RAY_DIRECTIONS:
            n = _crossings(p, d, tris)
            if n is not None:
                out[i] = n % 2 == 1
                break
        else:
            raise SignUndecidableError(f"every probe ray grazes the surface at {p}")
    return out


def _require_watertight(mesh: TriMesh):
    if not mesh.is_watertight:
        raise SignUndecidableError("mesh is not watertight; inside/outside is undefined")


def brute_force_signed_distance(mesh: TriMesh, p) -> np.ndarray | float:
    """Exact signed distance (negative inside) by exhaustive triangle search.

    Slow by design; this is the reference the voxel grids are checked against.
    Accepts a single point or an (N, 3) array.
    """
    _require_watertight(mesh)
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    tris = _triangles(mesh)
    dist = np.concatenate([
        _point_triangle_distance(pts[i:i + 256], tris).min(axis=1) for i in range(0, len(pts), 256)
    ])
    on_surface = dist < 1e-12
    sign = np.ones(len(pts))
    if np.any(~on_surface):
        inside = _inside_by_parity(pts[~on_surface], tris)
        sign[~on_surface] = np.where(inside, -1.0, 1.0)
    out = sign * dist
    return float(out[0]) if single else out


def clamped_phi(mesh: TriMesh, p):
    """max(-SDF, 0) from the brute-force oracle."""
    return np.maximum(-brute_force_signed_distance(mesh, p), 0.0)


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """phi sampled at voxel centres ``origin + (idx + 0.5) * cell_size``.

    ``values[i, j, k]`` is indexed x, y, z.
    """

    origin: np.ndarray
    cell_size: float
    resolution: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))

    @property
    def cell_diagonal(self) -> float:
        return float(self.cell_size * np.sqrt(3.0))

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.resolution) + 0.5) * self.cell_size


def build_sdf_grid(mesh: TriMesh, n: int = 64, padding: float | None = None) -> SdfGrid:
    """Voxelize phi over a cube enclosing the padded bounding box of ``mesh``.

    ``padding`` defaults to 10% of the mesh's box diagonal. It is raised to at
    least one cell so the outer voxel layer always sits outside the mesh.
    """
    if n < 8:
        raise ResolutionError(f"grid resolution must be >= 8, got {n}")
    _require_watertight(mesh)
    box = aabb_of_mesh(mesh)
    ext = box.extent
    if padding is None:
        padding = 0.1 * float(np.linalg.norm(ext))
    if padding <= 0:
        raise ValueError("padding must be > 0")
    padding = max(float(padding), float(ext.max()) / (n - 2))
    side = float(ext.max()) + 2.0 * padding
    cell = side / n
    center = (np.asarray(box.lo) + np.asarray(box.hi)) / 2.0
    origin = center - side / 2.0
    xs, ys, zs = (origin[k] + (np.arange(n) + 0.5) * cell for k in range(3))

    tris = np.ascontiguousarray(_triangles(mesh))
    inside, degenerate = _kernels.column_parity(xs, ys, zs, tris, 1e-10)
    for i, j in np.argwhere(degenerate):
        col = np.column_stack([np.full(n, xs[i]), np.full(n, ys[j]), zs])
        dist = _kernels.unsigned_distance(col, tris)
        flags = np.zeros(n, dtype=bool)
        off = dist > 1e-12
        flags[off] = _inside_by_parity(col[off], tris)
        inside[i, j] = flags
    inside[[0, -1], :, :] = False
    inside[:, [0, -1], :] = False
    inside[:, :, [0, -1]] = False

    values = np.zeros((n, n, n))
    idx = np.argwhere(inside)
    if len(idx):
        pts = origin + (idx + 0.5) * cell
        values[inside] = _kernels.unsigned_distance(np.ascontiguousarray(pts), tris)
    return SdfGrid(origin, cell, n, values)


def sample_trilinear(grid: SdfGrid, p) -> np.ndarray | float:
    """Interpolate phi between the 8 surrounding voxel centres.

    Lookups past the outermost centres treat the missing neighbours as 0; since
    the outer layer is 0 this is continuous, and anything outside the grid box
    evaluates to exactly 0.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    n = grid.resolution
    u = (pts - grid.origin) / grid.cell_size - 0.5
    i0 = np.floor(u).astype(np.int64)
    f = u - i0
    out = np.zeros(len(pts))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        ix = i0[:, 0] + dx
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            iy = i0[:, 1] + dy
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                iz = i0[:, 2] + dz
                ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n) & (iz >= 0) & (iz < n)
                val = np.zeros(len(pts))
                val[ok] = grid.values[ix[ok], iy[ok], iz[ok]]
                out += wx * wy * wz * val
    return float(out[0]) if single else out


def sample_trilinear_with_grad(grid: SdfGrid, pts):
    """Values and spatial gradients (local frame) of the trilinear field."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    n = grid.resolution
    u = (pts - grid.origin) / grid.cell_size - 0.5
    i0 = np.floor(u).astype(np.int64)
    f = u - i0
    val = np.zeros(len(pts))
    grad = np.zeros((len(pts), 3))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n) & (iz >= 0) & (iz < n)
                c = np.zeros(len(pts))
                c[ok] = grid.values[ix[ok], iy[ok], iz[ok]]
                w = [f[:, k] if d else 1.0 - f[:, k] for k, d in enumerate((dx, dy, dz))]
                sgn = [1.0 if d else -1.0 for d in (dx, dy, dz)]
                val += w[0] * w[1] * w[2] * c
                grad[:, 0] += sgn[0] * w[1] * w[2] * c
                grad[:, 1] += w[0] * sgn[1] * w[2] * c
                grad[:, 2] += w[0] * w[1] * sgn[2] * c
    return val, grad / grid.cell_size


def sample_world(grid: SdfGrid, pose: RigidPose, world_pts) -> np.ndarray:
    """phi of the posed instance at world points, in world units."""
    local = pose.inverse_points(np.asarray(world_pts, dtype=np.float64).reshape(-1, 3))
    return pose.scale * sample_trilinear(grid, local)


@dataclass
class PenetrationReport:
    total: float
    per_vertex: list

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("penetration total must be >= 0")


def penetration(grid_i: SdfGrid, mesh_j: TriMesh, pose_i: RigidPose | None = None,
                box_i: Aabb | None = None) -> PenetrationReport:
    """Sum of instance i's phi over the (world-space) vertices of mesh j.

    ``grid_i`` lives in instance i's local frame; ``pose_i`` maps it to the
    world (identity when omitted). With ``box_i`` (the world box of mesh i)
    the pair is skipped outright when the boxes are disjoint, which removes
    the sub-cell smear of the interpolant just outside the surface.
    """
    if box_i is not None and not aabb_overlap(box_i, aabb_of_points(mesh_j.vertices)):
        return PenetrationReport(0.0, [])
    if pose_i is None:
        vals = sample_trilinear(grid_i, mesh_j.vertices)
    else:
        vals = sample_world(grid_i, pose_i, mesh_j.vertices)
    nz = np.flatnonzero(vals > 0)
    return PenetrationReport(float(vals[nz].sum()), [(int(k), float(vals[k])) for k in nz])


def oracle_penetration(mesh_i_world: TriMesh, mesh_j_world: TriMesh) -> float:
    """Exact counterpart of ``penetration``: sum of max(-SDF_i, 0) over j's vertices."""
    return float(clamped_phi(mesh_i_world, mesh_j_world.vertices).sum())


GRID_MAGIC = "HOILAYOUT-SDF 1"


def save_grid(grid: SdfGrid, path) -> None:
    """Text dump: magic line, origin, cell size, resolution, then one value per
    line in C order of ``values[i, j, k]`` (k fastest), ``%.17g`` formatted."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(GRID_MAGIC + "\n")
        fh.write("origin %.17g %.17g %.17g\n" % tuple(grid.origin))
        fh.write("cell_size %.17g\n" % grid.cell_size)
        fh.write("resolution %d\n" % grid.resolution)
        for v in grid.values.ravel(order="C"):
            fh.write("%.17g\n" % v)


def load_grid(path) -> SdfGrid:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if lines[0] != GRID_MAGIC:
        raise ValueError(f"{path}: not an SDF grid dump")
    origin = np.array([float(x) for x in lines[1].split()[1:4]])
    cell = float(lines[2].split()[1])
    n = int(lines[3].split()[1])
    vals = np.array([float(x) for x in lines[4:4 + n ** 3]]).reshape(n, n, n)
    return SdfGrid(origin, cell, n, vals)
