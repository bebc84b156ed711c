"""Numba inner loops for voxelization and rasterization.

Everything here is scalar-loop code over plain float64/int64 arrays; the
public wrappers live in ``sdf`` and ``raster``.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _closest_sq_dist(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # Ericson, Real-Time Collision Detection, 5.1.5
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx, qy, qz = bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = ax + abx * v + acx * w
    qy = ay + aby * v + acy * w
    qz = az + abz * v + acz * w
    return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2


@njit(cache=True)
def unsigned_distance(points, tris):
    """Min distance from each point (P,3) to the triangles (F,3,3)."""
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        for t in range(tris.shape[0]):
            d = _closest_sq_dist(px, py, pz,
                                 tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
                                 tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
                                 tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
            if d < best:
                best = d
        out[i] = math.sqrt(best)
    return out


@njit(cache=True)
def column_parity(xs, ys, zs, tris, eps):
    """Inside flags for the lattice xs x ys x zs by casting +z rays per column.

    Returns (inside[nx, ny, nz], degenerate[nx, ny]); a column is degenerate
    when its line grazes an edge/vertex or lies in a vertical triangle, and
    its flags must then be recomputed another way.
    """
    nx, ny, nz = xs.shape[0], ys.shape[0], zs.shape[0]
    inside = np.zeros((nx, ny, nz), dtype=np.bool_)
    degenerate = np.zeros((nx, ny), dtype=np.bool_)
    nt = tris.shape[0]
    hits = np.empty(nt)
    for i in range(nx):
        X = xs[i]
        for j in range(ny):
            Y = ys[j]
            nh = 0
            bad = False
            for t in range(nt):
                x0, y0 = tris[t, 0, 0], tris[t, 0, 1]
                x1, y1 = tris[t, 1, 0], tris[t, 1, 1]
                x2, y2 = tris[t, 2, 0], tris[t, 2, 1]
                if X < min(x0, x1, x2) - eps or X > max(x0, x1, x2) + eps:
                    continue
                if Y < min(y0, y1, y2) - eps or Y > max(y0, y1, y2) + eps:
                    continue
                area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
                w0 = (x1 - X) * (y2 - Y) - (x2 - X) * (y1 - Y)
                w1 = (x2 - X) * (y0 - Y) - (x0 - X) * (y2 - Y)
                w2 = (x0 - X) * (y1 - Y) - (x1 - X) * (y0 - Y)
                scale = abs(area) + 1e-300
                if abs(area) < eps * eps:
                    # vertical triangle: degenerate only if the line lies in it
                    if max(abs(w0), abs(w1), abs(w2)) < 10.0 * eps:
                        bad = True
                    continue
                b0, b1, b2 = w0 / scale, w1 / scale, w2 / scale
                if area < 0:
                    b0, b1, b2 = -b0, -b1, -b2
                if b0 < -eps or b1 < -eps or b2 < -eps:
                    continue
                if b0 < eps or b1 < eps or b2 < eps:
                    bad = True
                    continue
                z0, z1, z2 = tris[t, 0, 2], tris[t, 1, 2], tris[t, 2, 2]
                hits[nh] = b0 * z0 + b1 * z1 + b2 * z2
                nh += 1
            if bad:
                degenerate[i, j] = True
                continue
            for k in range(nz):
                Z = zs[k]
                c = 0
                for h in range(nh):
                    if hits[h] > Z:
                        c += 1
                inside[i, j, k] = (c % 2) == 1
    return inside, degenerate


@njit(cache=True)
def raster_depth(sx, sy, inv_z, faces, width, height, depth, index, inst_id):
    """Z-buffer triangles into ``depth``/``index`` in place.

    A pixel (r, c) is sampled at its centre (c + 0.5, r + 0.5). Edges use the
    top-left fill rule so shared edges are drawn exactly once. Depth is
    1 / (screen-linear interpolation of 1/z). Replacement needs a strictly
    smaller depth, so drawing instances in ascending id order resolves ties
    to the lower id.
    """
    for t in range(faces.shape[0]):
        a, b, c = faces[t, 0], faces[t, 1], faces[t, 2]
        ax, ay, bx, by, cx, cy = sx[a], sy[a], sx[b], sy[b], sx[c], sy[c]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if area == 0.0:
            continue
        if area < 0.0:
            b, c = c, b
            bx, by, cx, cy = cx, cy, bx, by
            area = -area
        x0 = max(int(math.floor(min(ax, bx, cx) - 0.5)), 0)
        x1 = min(int(math.ceil(max(ax, bx, cx) - 0.5)), width - 1)
        y0 = max(int(math.floor(min(ay, by, cy) - 0.5)), 0)
        y1 = min(int(math.ceil(max(ay, by, cy) - 0.5)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        za, zb, zc = inv_z[a], inv_z[b], inv_z[c]
        # top-left rule on a y-down screen with positive-area winding
        tl0 = (cy - by < 0.0) or (cy == by and cx - bx > 0.0)  # edge b->c
        tl1 = (ay - cy < 0.0) or (ay == cy and ax - cx > 0.0)  # edge c->a
        tl2 = (by - ay < 0.0) or (by == ay and bx - ax > 0.0)  # edge a->b
        for r in range(y0, y1 + 1):
            py = r + 0.5
            for col in range(x0, x1 + 1):
                px = col + 0.5
                w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w0 == 0.0 and not tl0) or (w1 == 0.0 and not tl1) or (w2 == 0.0 and not tl2):
                    continue
                iz = (w0 * za + w1 * zb + w2 * zc) / area
                z = 1.0 / iz
                if z < depth[r, col]:
                    depth[r, col] = z
                    index[r, col] = inst_id
    return depth, index


@njit(cache=True)
def segment_distance_field(seg, width, height, cap):
    """Distance from every pixel centre to the nearest 2D segment (S,4).

    Distances are clipped at ``cap``: each segment only visits the pixels
    of its own bounding box grown by ``cap``.
    """
    best = np.full((height, width), cap * cap)
    for s in range(seg.shape[0]):
        ax, ay, bx, by = seg[s, 0], seg[s, 1], seg[s, 2], seg[s, 3]
        dx, dy = bx - ax, by - ay
        L = dx * dx + dy * dy
        r0 = max(0, int(math.floor(min(ay, by) - cap - 0.5)))
        r1 = min(height, int(math.ceil(max(ay, by) + cap - 0.5)) + 1)
        c0 = max(0, int(math.floor(min(ax, bx) - cap - 0.5)))
        c1 = min(width, int(math.ceil(max(ax, bx) + cap - 0.5)) + 1)
        for r in range(r0, r1):
            py = r + 0.5
            for c in range(c0, c1):
                px = c + 0.5
                if L > 0.0:
                    u = ((px - ax) * dx + (py - ay) * dy) / L
                    if u < 0.0:
                        u = 0.0
                    elif u > 1.0:
                        u = 1.0
                else:
                    u = 0.0
                qx, qy = ax + u * dx - px, ay + u * dy - py
                d = qx * qx + qy * qy
                if d < best[r, c]:
                    best[r, c] = d
    return np.sqrt(best)


@njit(cache=True)
def soft_coverage(dist, index, k, cap):
    """Logistic falloff of the signed outline distance, snapped beyond ``cap``."""
    h, w = dist.shape
    out = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            d = dist[r, c] if index[r, c] > 0 else -dist[r, c]
            if d <= -cap:
                out[r, c] = 0.0
            elif d >= cap:
                out[r, c] = 1.0
            else:
                out[r, c] = 1.0 / (1.0 + math.exp(-k * d))
    return out


@njit(cache=True)
def max_filter_zero(m, rad):
    """Square max filter of half-width ``rad`` with zeros outside the array."""
    h, w = m.shape
    tmp = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            best = 0.0 if (c - rad < 0 or c + rad >= w) else -np.inf
            for cc in range(max(0, c - rad), min(w, c + rad + 1)):
                if m[r, cc] > best:
                    best = m[r, cc]
            tmp[r, c] = best
    out = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            best = 0.0 if (r - rad < 0 or r + rad >= h) else -np.inf
            for rr in range(max(0, r - rad), min(h, r + rad + 1)):
                if tmp[rr, c] > best:
                    best = tmp[rr, c]
            out[r, c] = best
    return out
