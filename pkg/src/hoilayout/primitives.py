"""Watertight test/proxy meshes: voxel solids, boxes, icospheres, ellipsoids."""
from __future__ import annotations

import numpy as np

from .geometry import TriMesh

# (axis, direction) -> quad corner offsets in CCW order seen from outside
_FACE_QUADS = {
    (0, -1): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (1, -1): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (1, 1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (2, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    (2, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
}


def voxel_mesh(occupancy, cell=1.0, origin=(0.0, 0.0, 0.0)) -> TriMesh:
    """Boundary surface of a set of filled voxels, welded on the integer lattice.

    Voxels that touch only along an edge or corner give a non-manifold surface;
    callers are expected to avoid such patterns.
    """
    occ = np.asarray(occupancy, dtype=bool)
    padded = np.pad(occ, 1)
    corners = []
    for (axis, direction), quad in _FACE_QUADS.items():
        neighbour = np.roll(padded, -direction, axis=axis)[1:-1, 1:-1, 1:-1]
        exposed = occ & ~neighbour
        for idx in np.argwhere(exposed):
            corners.append([idx + np.array(q) for q in quad])
    corners = np.asarray(corners, dtype=np.int64)  # (Q, 4, 3)
    flat = corners.reshape(-1, 3)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    q = inverse.reshape(-1, 4)
    faces = np.concatenate([q[:, [0, 1, 2]], q[:, [0, 2, 3]]])
    verts = np.asarray(origin, dtype=np.float64) + uniq * float(cell)
    return TriMesh(verts, faces)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), subdivisions=1) -> TriMesh:
    """Axis-aligned box; ``subdivisions`` quads per edge give interior face vertices."""
    n = int(subdivisions)
    unit = voxel_mesh(np.ones((n, n, n), dtype=bool), cell=1.0 / n, origin=(-0.5, -0.5, -0.5))
    v = unit.vertices * np.asarray(size, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    return TriMesh(v, unit.faces)


def unit_cube(subdivisions=1) -> TriMesh:
    return box((1.0, 1.0, 1.0), subdivisions=subdivisions)


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(int(subdivisions)):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, np.asarray(faces))


def ellipsoid(radii=(0.25, 0.85, 0.15), subdivisions=2, center=(0.0, 0.0, 0.0)) -> TriMesh:
    sphere = icosphere(subdivisions)
    return TriMesh(sphere.vertices * np.asarray(radii) + np.asarray(center, dtype=np.float64), sphere.faces)


def l_shape(cell=0.5, subdivisions=2) -> TriMesh:
    """Extruded L: three voxel-columns, centred on its vertex mean."""
    n = int(subdivisions)
    occ = np.zeros((2 * n, 2 * n, n), dtype=bool)
    occ[:n, :, :] = True
    occ[:, :n, :] = True
    m = voxel_mesh(occ, cell=cell / n)
    return TriMesh(m.vertices - m.vertices.mean(axis=0), m.faces)


def human_proxy(height=1.7, width=0.5, depth=0.3, subdivisions=2) -> TriMesh:
    """Ellipsoidal stand-in for a posed body mesh, y axis pointing down."""
    return ellipsoid((width / 2.0, height / 2.0, depth / 2.0), subdivisions)
