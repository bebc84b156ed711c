"""Synthetic scene bundles with known ground truth.

Every generator writes a self-contained directory::

    scene.json          scene document (initial poses)
    gt.json             {"kind", "seed", "params", "poses": {id: pose}, ...}
    meshes/*.obj        instance meshes and exemplars
    masks/*.png         object masks, detections
    gt_index.png        ground-truth instance map rendered from the GT poses
    image.png           grey-level stand-in for the photo
    oracle/<hash>/      deoccluded detections for the file oracle (occlusion kinds)

Output depends only on ``(kind, params, seed)``.
"""
from __future__ import annotations

import inspect
import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, PreconditionError
from .formats import write_index_png, write_mask_png, write_gray_png
from .geometry import (Camera, RigidPose, TriMesh, apply_pose, axis_angle_to_matrix, bbox_iou_2d,
                       mask_box, matrix_to_axis_angle)
from .occlusion import subset_hash
from .primitives import box, human_proxy, l_shape
from .raster import render_scene, render_silhouette
from .scene import SCHEMA_VERSION, write_obj
from .sdf import oracle_penetration

KINDS = ("two-humans-overlap", "depth-swap", "occluded-cube", "render-recover", "exemplar", "joint")


class _Bundle:
    def __init__(self, out_dir, kind, seed, params, camera: Camera):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.kind, self.seed, self.params, self.camera = kind, seed, params, camera
        self.meshes = {}
        self.doc = {"schema_version": SCHEMA_VERSION, "camera": camera.to_dict(), "humans": [], "objects": []}
        self.gt = {"kind": kind, "seed": seed, "params": params, "poses": {}}

    def mesh(self, name, mesh: TriMesh) -> str:
        rel = f"meshes/{name}.obj"
        if name not in self.meshes:
            (self.dir / "meshes").mkdir(exist_ok=True)
            write_obj(self.dir / rel, mesh)
            self.meshes[name] = mesh
        return rel

    def mask(self, name, mask, sub="masks") -> str:
        (self.dir / sub).mkdir(parents=True, exist_ok=True)
        rel = f"{sub}/{name}.png"
        write_mask_png(self.dir / rel, mask)
        return rel

    def human(self, hid, mesh_name, mesh, pose, gt_pose, regions=None):
        entry = {"id": hid, "category": "person", "mesh": self.mesh(mesh_name, mesh), "pose": pose.to_dict()}
        if regions:
            entry["regions"] = regions
        self.doc["humans"].append(entry)
        self.gt["poses"][str(hid)] = gt_pose.to_dict()

    def obj(self, oid, category, exemplars, gt_pose, mask=None, pose=None, exemplar_index=0, eta=None):
        entry = {"id": oid, "category": category, "exemplars": [self.mesh(n, m) for n, m in exemplars],
                 "exemplar_index": exemplar_index}
        if pose is not None:
            entry["pose"] = pose.to_dict()
        if mask is not None:
            entry["mask"] = self.mask(f"object_{oid}", mask)
        if eta is not None:
            entry["eta"] = self.mask(f"eta_{oid}", eta)
        self.doc["objects"].append(entry)
        self.gt["poses"][str(oid)] = gt_pose.to_dict()

    def detection(self, did, category, mask, rigid=True):
        b = mask_box(mask)
        self.doc.setdefault("detections", []).append(
            {"id": did, "category": category, "box": b.as_list(), "mask": self.mask(f"det_{did}", mask),
             "rigid": rigid})

    def gt_render(self, posed: dict):
        """Write gt_index.png and image.png from ``{id: world mesh}``."""
        r = render_scene(sorted(posed.items()), self.camera)
        write_index_png(self.dir / "gt_index.png", r.index)
        shade = np.where(r.index > 0, 60 + (r.index * 47) % 190, 0)
        write_gray_png(self.dir / "image.png", shade)
        self.doc["gt_index"] = "gt_index.png"
        self.doc["image"] = "image.png"
        return r

    def oracle(self, removed, detections):
        sub = f"oracle/{subset_hash(removed)}"
        entries = []
        for k, (category, mask, rigid) in enumerate(detections):
            rel = self.mask(f"det{k}", mask, sub)
            entries.append({"category": category, "box": mask_box(mask).as_list(),
                            "mask": rel.rsplit("/", 1)[1], "rigid": rigid})
        (self.dir / sub / "detections.json").write_text(json.dumps({"detections": entries}, indent=2) + "\n")
        self.doc["oracle_dir"] = "oracle"

    def finish(self) -> Path:
        self.gt["poses"] = dict(sorted(self.gt["poses"].items(), key=lambda kv: int(kv[0])))
        (self.dir / "gt.json").write_text(json.dumps(self.gt, indent=2) + "\n")
        path = self.dir / "scene.json"
        path.write_text(json.dumps(self.doc, indent=2) + "\n")
        return path


def _posed(mesh, pose):
    return apply_pose(mesh, pose)


def _pair_penetration(ma, mb) -> float:
    return oracle_penetration(ma, mb) + oracle_penetration(mb, ma)


def random_rotation(rng, sigma: float) -> np.ndarray:
    return rng.normal(0.0, sigma, 3)


def perturb_pose(rng, gt: RigidPose, angle_deg: float, translation_frac: float) -> RigidPose:
    """Rotate by exactly ``angle_deg`` about a random axis; shift by a fraction of |t|."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = axis_angle_to_matrix(axis * math.radians(angle_deg)) @ gt.matrix
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    t = gt.translation + translation_frac * np.linalg.norm(gt.translation) * d
    return RigidPose(matrix_to_axis_angle(R), t, gt.scale)


# --------------------------------------------------------------------------- generators

def _two_humans(b: _Bundle, rng, overlap=0.3, depth=8.0):
    m = human_proxy()
    width = 0.5
    jitter = rng.uniform(-0.02, 0.02, 2)
    half = (width - overlap) / 2.0
    init = [RigidPose(translation=[-half, jitter[0], depth]), RigidPose(translation=[half, jitter[1], depth + 0.05])]
    sep = (width + 0.1) / 2.0
    gt = [RigidPose(translation=[-sep, jitter[0], depth]), RigidPose(translation=[sep, jitter[1], depth + 0.05])]
    w0 = [_posed(m, p) for p in init]
    w1 = [_posed(m, p) for p in gt]
    b.gt["initial_penetration"] = _pair_penetration(*w0)
    b.gt["gt_penetration"] = _pair_penetration(*w1)
    if not (b.gt["initial_penetration"] > 0 and b.gt["gt_penetration"] == 0):
        raise PreconditionError("two-humans generator self-check failed")
    for k in range(2):
        b.human(k + 1, "human", m, init[k], gt[k])
    b.gt_render({1: w1[0], 2: w1[1]})


def _depth_swap(b: _Bundle, rng, offset=0.15, front=6.0, back=7.0, start=7.6):
    m = human_proxy()
    y = rng.uniform(-0.05, 0.05)
    gt_a = RigidPose(translation=[-offset / 2, y, front])
    gt_b = RigidPose(translation=[offset / 2, y, back])
    # A starts behind B with the same image position as its GT placement
    init_a = RigidPose(translation=gt_a.translation * (start / front))
    b.human(1, "human", m, init_a, gt_a)
    b.human(2, "human", m, gt_b, gt_b)
    gt = b.gt_render({1: _posed(m, gt_a), 2: _posed(m, gt_b)})
    now = render_scene([(1, _posed(m, init_a)), (2, _posed(m, gt_b))], b.camera)
    b.gt["swapped_pixels"] = int(np.count_nonzero((gt.index == 1) & (now.index == 2)))


def _occluded_cube(b: _Bundle, rng, seam=2, size=1.0, depth=5.0, cover=0.6, panel_depth=3.8):
    cube = box((size, size, size), subdivisions=2)
    # a vertical panel in front, appearing ``cover`` cube-widths wide and taller than the cube
    k = panel_depth / depth
    panel = box((cover * size * k, 1.6 * size * k, 0.1), subdivisions=2)
    gt_cube = RigidPose(random_rotation(rng, 0.4), [rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), depth])
    dx = rng.uniform(-0.1, 0.1) * size
    gt_panel = RigidPose(translation=[(gt_cube.translation[0] + dx) * k, gt_cube.translation[1] * k, panel_depth])
    wc, wp = _posed(cube, gt_cube), _posed(panel, gt_panel)
    gt = b.gt_render({2: wc, 3: wp})
    full = render_silhouette(wc, b.camera, 0).astype(np.uint8)
    occ_mask = (gt.index == 3).astype(np.uint8)
    visible = (gt.index == 2)
    # segmenters lose a thin strip of the occluded object along occlusion boundaries
    near_occ = ndimage.binary_dilation(occ_mask > 0, iterations=seam) if seam > 0 else occ_mask > 0
    target = (visible & ~near_occ).astype(np.uint8)
    if not (full.astype(bool) & (occ_mask > 0)).any():
        raise PreconditionError("occluded-cube generator produced no occlusion")
    iou = bbox_iou_2d(mask_box(target), mask_box(occ_mask))
    if iou <= 0.3:
        raise PreconditionError(f"occluded-cube generator: occluder box IOU {iou:.3f} not above 0.3")
    b.gt["box_iou"] = iou
    b.gt["target_pixels"] = int(target.sum())
    b.gt["full_pixels"] = int(full.sum())
    b.obj(2, "cube", [("cube", cube)], gt_cube, mask=target)
    b.obj(3, "panel", [("panel", panel)], gt_panel, mask=occ_mask)
    b.detection(2, "cube", target)
    b.detection(3, "panel", occ_mask)
    b.oracle((3,), [("cube", full, True)])


def _render_recover(b: _Bundle, rng, angle=30.0, shift=0.2, depth=5.0):
    m = l_shape(subdivisions=1)
    gt = RigidPose(random_rotation(rng, 0.6), [rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), depth])
    mask = render_silhouette(_posed(m, gt), b.camera, 0).astype(np.uint8)
    init = perturb_pose(rng, gt, angle, shift)
    b.obj(1, "lshape", [("lshape", m)], gt, mask=mask, pose=init)
    b.gt_render({1: _posed(m, gt)})


def _exemplar(b: _Bundle, rng, depth=5.0):
    ex = [("lshape", l_shape(subdivisions=1)), ("block", box((1.0, 0.5, 0.5), subdivisions=1))]
    k = int(rng.integers(0, 2))
    gt = RigidPose(random_rotation(rng, 0.6), [rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), depth])
    mask = render_silhouette(_posed(ex[k][1], gt), b.camera, 0).astype(np.uint8)
    b.gt["exemplar_index"] = k
    b.obj(1, "thing", ex, gt, mask=mask, exemplar_index=0)
    b.gt_render({1: _posed(ex[k][1], gt)})


def _joint(b: _Bundle, rng, depth=6.0, overlap=0.15, object_overlap=0.1):
    m = human_proxy()
    cube = box((0.5, 0.5, 0.5), subdivisions=3)
    y = rng.uniform(-0.03, 0.03)
    gt_h = [RigidPose(translation=[-0.55, y, depth]), RigidPose(translation=[0.0, y, depth])]
    gt_o = RigidPose(translation=[0.55, 0.35, depth])
    # the object sits at its GT pose; the humans overlap each other and the object
    x2 = 0.3 - 0.25 + object_overlap
    init_h = [RigidPose(translation=[x2 - 0.5 + overlap, y, depth]), RigidPose(translation=[x2, y, depth])]
    w_gt = {1: _posed(m, gt_h[0]), 2: _posed(m, gt_h[1]), 3: _posed(cube, gt_o)}
    w0 = {1: _posed(m, init_h[0]), 2: _posed(m, init_h[1]), 3: _posed(cube, gt_o)}
    b.gt["initial_hh_penetration"] = _pair_penetration(w0[1], w0[2])
    b.gt["initial_ho_penetration"] = _pair_penetration(w0[1], w0[3]) + _pair_penetration(w0[2], w0[3])
    if not (b.gt["initial_hh_penetration"] > 0 and b.gt["initial_ho_penetration"] > 0):
        raise PreconditionError("joint generator self-check failed")
    gt = b.gt_render(w_gt)
    for k in range(2):
        b.human(k + 1, "human", m, init_h[k], gt_h[k])
    omask = (gt.index == 3).astype(np.uint8)
    b.obj(3, "cube", [("cube", cube)], gt_o, mask=omask, pose=gt_o)
    for k in (1, 2):
        b.detection(k, "person", (gt.index == k).astype(np.uint8), rigid=False)
    b.detection(3, "cube", omask)
    # equal weights let the centroid pull win over shallow contacts; collisions get 10x
    b.doc["config"] = {"human_weights": {"collision": 10.0}, "hoi_weights": {"collision": 10.0}}


_GENERATORS = {
    "two-humans-overlap": (_two_humans, (256, 256, 500.0)),
    "depth-swap": (_depth_swap, (160, 160, 300.0)),
    "occluded-cube": (_occluded_cube, (128, 128, 200.0)),
    "render-recover": (_render_recover, (128, 128, 200.0)),
    "exemplar": (_exemplar, (128, 128, 200.0)),
    "joint": (_joint, (128, 128, 150.0)),
}


def gen_synthetic(kind: str, out_dir, seed: int = 0, **params) -> Path:
    """Write a bundle of ``kind`` into ``out_dir`` and return its scene.json path.

    ``params`` override the generator's keyword arguments (``overlap`` for
    two-humans-overlap, ``seam`` for occluded-cube, ...). ``width``,
    ``height`` and ``focal`` override the camera.
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {', '.join(KINDS)}")
    fn, (w, h, f) = _GENERATORS[kind]
    allowed = set(list(inspect.signature(fn).parameters)[2:]) | {"width", "height", "focal"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"bad parameters for {kind}: {', '.join(unknown)} (allowed: {', '.join(sorted(allowed))})")
    w = int(params.pop("width", w))
    h = int(params.pop("height", h))
    f = float(params.pop("focal", f))
    cam = Camera.centered(f, w, h)
    b = _Bundle(out_dir, kind, int(seed), dict(sorted(params.items())), cam)
    rng = np.random.default_rng(int(seed))
    fn(b, rng, **params)
    return b.finish()


def load_gt(bundle_dir) -> dict:
    gt = json.loads((Path(bundle_dir) / "gt.json").read_text())
    gt["poses"] = {int(k): RigidPose.from_dict(v) for k, v in gt["poses"].items()}
    return gt
