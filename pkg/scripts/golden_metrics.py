"""Independent evaluation of the four corpus metrics on box-only scenes.

Does not import hoilayout. Every instance must be an axis-aligned box mesh
with identity rotation, which makes everything closed-form:

* phi at voxel centres is the distance to the nearest box face (inside) or 0,
  on the same grid layout the library documents (cube around the padded box,
  padding max(10% of the diagonal, one cell), zero outer layer);
* depth per pixel comes from ray/box slab intersection through the pixel
  centre (c + 0.5, r + 0.5).

Writes per-scene values and corpus means as JSON.
"""
from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

DELTA = 0.5
N_GRID = 64


def read_obj(path):
    verts = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts and parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
    return np.array(verts)


def grid_for_box(lo, hi, n=N_GRID):
    ext = hi - lo
    pad = max(0.1 * float(np.linalg.norm(ext)), float(ext.max()) / (n - 2))
    side = float(ext.max()) + 2 * pad
    cell = side / n
    origin = (lo + hi) / 2 - side / 2
    axes = [origin[k] + (np.arange(n) + 0.5) * cell for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    P = np.stack([X, Y, Z], axis=-1)
    d = np.minimum(P - lo, hi - P).min(axis=-1)
    phi = np.where(d > 0, d, 0.0)
    phi[[0, -1], :, :] = 0
    phi[:, [0, -1], :] = 0
    phi[:, :, [0, -1]] = 0
    return origin, cell, phi


def trilinear(origin, cell, phi, pts):
    n = phi.shape[0]
    out = np.zeros(len(pts))
    for m, p in enumerate(pts):
        u = (p - origin) / cell - 0.5
        base = np.floor(u).astype(int)
        f = u - base
        acc = 0.0
        for corner in range(8):
            off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
            idx = base + off
            if np.any(idx < 0) or np.any(idx >= n):
                continue
            w = np.prod(np.where(off == 1, f, 1 - f))
            acc += w * phi[tuple(idx)]
        out[m] = acc
    return out


class Inst:
    def __init__(self, entry, kind, root):
        self.id = int(entry["id"])
        self.kind = kind
        mesh = entry["mesh"] if kind == "human" else entry["exemplars"][entry.get("exemplar_index", 0)]
        self.local = read_obj(root / mesh)
        pose = entry["pose"]
        assert not any(pose.get("rotation", [0, 0, 0])), "boxes must be unrotated"
        self.t = np.array(pose["translation"], dtype=float)
        self.s = float(pose.get("scale", 1.0))
        self.lo, self.hi = self.local.min(axis=0), self.local.max(axis=0)
        self.world = self.s * (self.local + self.t)
        self.wlo, self.whi = self.world.min(axis=0), self.world.max(axis=0)
        self.grid = grid_for_box(self.lo, self.hi)


def overlap(a, b):
    return not (np.any(a.wlo > b.whi) or np.any(b.wlo > a.whi))


def eq4(i, j):
    """Directed term: i's phi summed over j's vertices, attenuated by |T_i - T_j|."""
    if not overlap(i, j):
        return 0.0
    local = j.world / i.s - i.t
    p = float(i.s * trilinear(*i.grid, local).sum())
    if p <= 0:
        return 0.0
    dist = float(np.linalg.norm(i.t - j.t))
    return p / math.exp(dist if dist > 0 else DELTA)


def ray_depth(inst, cam, shape):
    h, w = shape
    c, r = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dx, dy = (c - cam["cx"]) / cam["focal"], (r - cam["cy"]) / cam["focal"]
    tmin = np.full(shape, -np.inf)
    tmax = np.full(shape, np.inf)
    for k, d in enumerate((dx, dy, np.ones(shape))):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1, t2 = inst.wlo[k] / d, inst.whi[k] / d
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        zero = d == 0
        inside = (inst.wlo[k] <= 0) & (0 <= inst.whi[k])
        lo = np.where(zero, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(zero, np.where(inside, np.inf, -np.inf), hi)
        tmin, tmax = np.maximum(tmin, lo), np.minimum(tmax, hi)
    hit = (tmin <= tmax) & (tmin > 0)
    return np.where(hit, tmin, np.inf)  # ray z-component is 1, so t is depth


def scene_values(path):
    path = Path(path)
    doc = json.loads(path.read_text())
    root = path.parent
    insts = [Inst(e, "human", root) for e in doc.get("humans", [])] + \
            [Inst(e, "object", root) for e in doc.get("objects", [])]
    humans = [i for i in insts if i.kind == "human"]
    objects = [i for i in insts if i.kind == "object"]
    e_h_col = math.fsum(eq4(a, b) for a in humans for b in humans if a is not b)
    e_ho_col = math.fsum(eq4(h, o) + eq4(o, h) for o in objects for h in humans)

    gt = np.asarray(Image.open(root / doc["gt_index"]).convert("L"), dtype=np.int64)
    cam = doc["camera"]
    ids = sorted(i.id for i in insts)
    layers = {i.id: ray_depth(i, cam, gt.shape) for i in insts}
    stack = np.stack([layers[k] for k in ids])
    front = np.argmin(stack, axis=0)
    dbar = np.min(stack, axis=0)
    ybar = np.where(np.isfinite(dbar), np.array(ids)[front], 0)
    y = np.where(np.isin(gt, ids), gt, 0)
    human_ids = [i.id for i in humans]

    h_terms, all_terms = [], []
    for r, c in zip(*np.nonzero((y > 0) & (ybar > 0) & (y != ybar))):
        dy = layers[int(y[r, c])][r, c]
        if not np.isfinite(dy):
            continue
        term = float(np.logaddexp(0.0, dy - dbar[r, c]))
        all_terms.append(term)
        if y[r, c] in human_ids and ybar[r, c] in human_ids:
            h_terms.append(term)
    return {"E_H_col": e_h_col, "E_HO_col": e_ho_col,
            "E_H_depth": math.fsum(h_terms), "E_HO_depth": math.fsum(all_terms)}


def main():
    here = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenes", nargs="*", default=sorted(str(p) for p in (here / "corpus").glob("*/scene.json")))
    ap.add_argument("--out", default=str(here / "golden_metrics.json"))
    args = ap.parse_args()
    rows = {Path(s).parent.name: scene_values(s) for s in args.scenes}
    keys = ("E_H_col", "E_HO_col", "E_H_depth", "E_HO_depth")
    means = {k: math.fsum(r[k] for r in rows.values()) / len(rows) for k in keys}
    doc = {"T": len(rows), "scenes": rows, "means": means}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()
