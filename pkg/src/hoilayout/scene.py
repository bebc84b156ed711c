"""In-memory scene model, OBJ meshes and the JSON scene document.

A scene document is a JSON file (``schema_version`` 1) whose relative paths
resolve against the document's directory::

    {
      "schema_version": 1,
      "camera": {"focal": 1000, "cx": 256, "cy": 256, "width": 512, "height": 512},
      "humans": [{"id": 1, "mesh": "meshes/h1.obj",
                  "weak_perspective": {"sigma": 200, "tx": 0, "ty": 0},  # or "pose"
                  "regions": {"hands": [12, 13]}}],
      "objects": [{"id": 3, "category": "cube", "exemplars": ["meshes/cube.obj"],
                   "exemplar_index": 0, "pose": {...}, "mask": "masks/obj3.png",
                   "eta": "masks/eta3.png", "regions": {...}}],
      "gt_index": "gt_index.png",
      "image": "image.png",
      "detections": [{"id": 3, "category": "cube", "box": [x0, y0, x1, y1],
                      "mask": "masks/det3.png", "rigid": true}],
      "oracle_dir": "oracle",
      "interaction": {"fine_pairs": [{"human": 1, "object": 3,
                                      "regions": [["hands", "top"]]}]},
      "config": {...RunConfig overrides...}
    }

``camera.focal`` may be omitted and then comes from the run config.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DimensionMismatchError, HoiLayoutError, InvalidMeshError,
                     MissingFileError, PreconditionError, SceneFormatError)
from .formats import read_gray_png, read_index_png, read_mask_png, write_index_png, write_mask_png
from .geometry import (Camera, Rect2, RigidPose, TriMesh, WeakPerspective, aabb_of_points,
                       weak_to_perspective)
from .sdf import SdfGrid, build_sdf_grid

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def read_obj(path) -> TriMesh:
    """Triangles-only OBJ: ``v x y z`` and ``f a b c`` (1-based, ``a/t/n`` ok).

    Other record types are skipped with one warning per file.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError("mesh file not found", path)
    verts, faces, skipped = [], [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise SceneFormatError("vertex needs 3 coordinates", path, lineno)
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError:
                    raise SceneFormatError(f"bad vertex {line!r}", path, lineno) from None
            elif tag == "f":
                if len(rest) != 3:
                    raise SceneFormatError("only triangular faces are supported", path, lineno)
                try:
                    idx = [int(tok.split("/")[0]) for tok in rest]
                except ValueError:
                    raise SceneFormatError(f"bad face {line!r}", path, lineno) from None
                for k in idx:
                    if k < 1:
                        raise SceneFormatError(f"face index {k} is invalid (indices are 1-based)", path, lineno)
                    if k > len(verts) and k > 0:
                        pass  # forward references are checked after the pass
                faces.append([k - 1 for k in idx])
            else:
                skipped.add(tag)
    if skipped:
        log.warning("%s: ignored OBJ records %s", path, ", ".join(sorted(skipped)))
    if not verts:
        raise SceneFormatError("no vertices", path)
    try:
        return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except InvalidMeshError as exc:
        raise SceneFormatError(str(exc), path) from exc


def write_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write("v %r %r %r\n" % (float(v[0]), float(v[1]), float(v[2])))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))


@dataclass
class Detection:
    id: int
    category: str
    box: Rect2
    mask: np.ndarray
    rigid: bool = True


@dataclass(eq=False)
class Instance:
    id: int
    kind: str  # "human" | "object"
    mesh: TriMesh  # local frame
    pose: RigidPose
    category: str = "person"
    regions: dict = field(default_factory=dict)
    exemplars: list = field(default_factory=list)
    exemplar_index: int = 0
    mask: np.ndarray | None = None
    eta: np.ndarray | None = None
    grid: SdfGrid | None = None
    source: dict = field(default_factory=dict)

    @property
    def is_human(self) -> bool:
        return self.kind == "human"

    def world_vertices(self) -> np.ndarray:
        return self.pose.transform_points(self.mesh.vertices)

    def world_mesh(self) -> TriMesh:
        return self.mesh.with_vertices(self.world_vertices())

    def world_centroid(self) -> np.ndarray:
        return self.pose.scale * (self.pose.matrix @ self.mesh.vertices.mean(axis=0) + self.pose.translation)

    def region_indices(self, name: str) -> np.ndarray:
        if name not in self.regions:
            raise ConfigError(f"instance {self.id} has no region {name!r}")
        return self.regions[name]


@dataclass(eq=False)
class Scene:
    camera: Camera
    humans: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    gt_index: np.ndarray | None = None
    detections: list = field(default_factory=list)
    image: np.ndarray | None = None
    oracle_dir: Path | None = None
    fine_pairs: dict = field(default_factory=dict)  # (h, o) -> [(region_h, region_o)]
    config: dict = field(default_factory=dict)
    root: Path | None = None

    @property
    def instances(self) -> list:
        return list(self.humans) + list(self.objects)

    def instance(self, inst_id: int) -> Instance:
        for inst in self.instances:
            if inst.id == inst_id:
                return inst
        raise KeyError(inst_id)

    def poses(self) -> dict:
        return {i.id: i.pose for i in self.instances}

    def with_poses(self, poses: dict) -> "Scene":
        def upd(inst):
            return replace(inst, pose=poses[inst.id]) if inst.id in poses else inst
        return replace(self, humans=[upd(h) for h in self.humans], objects=[upd(o) for o in self.objects])

    def with_instances(self, humans=None, objects=None) -> "Scene":
        return replace(self, humans=list(self.humans if humans is None else humans),
                       objects=list(self.objects if objects is None else objects))


def ensure_grids(scene: Scene, resolution: int = 64, padding: float | None = None) -> Scene:
    """Attach a local-frame SDF grid to every instance lacking one (in place).

    Instances sharing a mesh object share its grid.
    """
    cache = {}
    for inst in scene.instances:
        if inst.grid is not None:
            cache.setdefault(id(inst.mesh), inst.grid)
    for inst in scene.instances:
        if inst.grid is None:
            key = id(inst.mesh)
            if key not in cache:
                cache[key] = build_sdf_grid(inst.mesh, resolution, padding)
            inst.grid = cache[key]
    return scene


def require_grids(instances):
    for inst in instances:
        if inst.grid is None:
            raise PreconditionError(f"instance {inst.id} has no SDF grid (call ensure_grids first)")


def world_box(inst: Instance):
    return aabb_of_points(inst.world_vertices())


# --------------------------------------------------------------------------- documents

def _resolve(root: Path, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else root / p


def _load_mask(root, rel, camera, what):
    path = _resolve(root, rel)
    m = read_mask_png(path)
    if m.shape != camera.shape:
        raise DimensionMismatchError(
            f"{path}: {what} is {m.shape[1]}x{m.shape[0]} but the camera is {camera.width}x{camera.height}")
    return m


def load_scene(path, focal: float | None = None) -> Scene:
    path = Path(path)
    if not path.exists():
        raise MissingFileError("scene document not found", path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
    root = path.parent
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SceneFormatError(f"unsupported schema_version {doc.get('schema_version')!r}", path)
    try:
        cam = dict(doc["camera"])
        if "focal" not in cam:
            if focal is None:
                raise SceneFormatError("camera.focal missing and no configured focal length", path)
            cam["focal"] = focal
        camera = Camera(float(cam["focal"]), float(cam["cx"]), float(cam["cy"]),
                        int(cam["width"]), int(cam["height"]))
    except KeyError as exc:
        raise SceneFormatError(f"camera lacks {exc}", path) from None

    mesh_cache = {}

    def mesh_at(rel):
        p = _resolve(root, rel)
        key = os.path.normpath(str(p))
        if key not in mesh_cache:
            mesh_cache[key] = read_obj(p)
        return mesh_cache[key]

    def regions_of(entry, mesh):
        out = {}
        for name, idx in (entry.get("regions") or {}).items():
            arr = np.asarray(idx, dtype=np.int64)
            if arr.size == 0 or arr.min() < 0 or arr.max() >= mesh.n_vertices:
                raise SceneFormatError(f"region {name!r} of instance {entry.get('id')} is empty or out of range", path)
            out[name] = arr
        return out

    seen = set()

    def claim(i):
        if i in seen:
            raise SceneFormatError(f"duplicate instance id {i}", path)
        if not 0 < i < 256:
            raise SceneFormatError(f"instance id {i} must be in 1..255", path)
        seen.add(i)

    humans = []
    for h in doc.get("humans", []):
        hid = int(h["id"])
        claim(hid)
        mesh = mesh_at(h["mesh"])
        if "pose" in h:
            pose = RigidPose.from_dict(h["pose"])
        elif "weak_perspective" in h:
            wp = h["weak_perspective"]
            t = weak_to_perspective(WeakPerspective(float(wp["sigma"]), float(wp.get("tx", 0)), float(wp.get("ty", 0))),
                                    camera.focal)
            pose = RigidPose(np.zeros(3), t, float(h.get("scale", 1.0)))
        else:
            raise SceneFormatError(f"human {hid} needs 'pose' or 'weak_perspective'", path)
        humans.append(Instance(hid, "human", mesh, pose, h.get("category", "person"),
                               regions_of(h, mesh), source={"mesh": h["mesh"]}))

    objects = []
    for o in doc.get("objects", []):
        oid = int(o["id"])
        claim(oid)
        ex_paths = o.get("exemplars") or []
        if not ex_paths:
            raise SceneFormatError(f"object {oid} has no exemplars", path)
        exemplars = [mesh_at(p) for p in ex_paths]
        k = int(o.get("exemplar_index", 0))
        if not 0 <= k < len(exemplars):
            raise SceneFormatError(f"object {oid} exemplar_index out of range", path)
        pose = RigidPose.from_dict(o["pose"]) if "pose" in o else None
        mask = _load_mask(root, o["mask"], camera, f"mask of object {oid}") if o.get("mask") else None
        eta = _load_mask(root, o["eta"], camera, f"eta of object {oid}") if o.get("eta") else None
        src = {"exemplars": list(ex_paths), "has_pose": pose is not None}
        if o.get("mask"):
            src["mask"] = o["mask"]
        if o.get("eta"):
            src["eta"] = o["eta"]
        inst = Instance(oid, "object", exemplars[k], pose if pose is not None else RigidPose(translation=[0, 0, 1]),
                        o.get("category", "object"), regions_of(o, exemplars[k]), exemplars, k,
                        mask, eta, source=src)
        objects.append(inst)

    gt = None
    if doc.get("gt_index"):
        gt = read_index_png(_resolve(root, doc["gt_index"]))
        if gt.shape != camera.shape:
            raise DimensionMismatchError(f"gt_index is {gt.shape[1]}x{gt.shape[0]}, camera {camera.width}x{camera.height}")

    image = None
    if doc.get("image"):
        image = read_gray_png(_resolve(root, doc["image"]))

    dets = []
    for d in doc.get("detections", []):
        m = _load_mask(root, d["mask"], camera, f"mask of detection {d['id']}")
        dets.append(Detection(int(d["id"]), d.get("category", "object"), Rect2(*map(float, d["box"])), m,
                              bool(d.get("rigid", True))))

    fine = {}
    for fp in (doc.get("interaction") or {}).get("fine_pairs", []):
        fine[(int(fp["human"]), int(fp["object"]))] = [tuple(r) for r in fp["regions"]]

    oracle = doc.get("oracle_dir")
    return Scene(camera, humans, objects, gt, dets, image,
                 _resolve(root, oracle) if oracle else None, fine, dict(doc.get("config") or {}),
                 root=root)


def scene_to_doc(scene: Scene, out_dir: Path) -> dict:
    """Document for ``scene`` written next to ``out_dir``; copies buffers it owns."""
    out_dir = Path(out_dir)

    def rel(p):
        # paths are kept relative to the output document
        src = _resolve(scene.root or out_dir, p)
        return os.path.relpath(src, out_dir).replace(os.sep, "/")

    doc = {"schema_version": SCHEMA_VERSION, "camera": scene.camera.to_dict()}
    doc["humans"] = []
    for h in scene.humans:
        entry = {"id": h.id, "category": h.category, "mesh": rel(h.source["mesh"]), "pose": h.pose.to_dict()}
        if h.regions:
            entry["regions"] = {k: [int(i) for i in v] for k, v in h.regions.items()}
        doc["humans"].append(entry)
    doc["objects"] = []
    masks_dir = out_dir / "masks_out"
    for o in scene.objects:
        entry = {"id": o.id, "category": o.category, "exemplars": [rel(p) for p in o.source["exemplars"]],
                 "exemplar_index": o.exemplar_index, "pose": o.pose.to_dict()}
        for key, arr in (("mask", o.mask), ("eta", o.eta)):
            if arr is None:
                continue
            if key in o.source and not o.source.get(f"{key}_dirty"):
                entry[key] = rel(o.source[key])
            else:
                masks_dir.mkdir(parents=True, exist_ok=True)
                name = f"{key}_{o.id}.png"
                write_mask_png(masks_dir / name, arr)
                entry[key] = f"masks_out/{name}"
        if o.regions:
            entry["regions"] = {k: [int(i) for i in v] for k, v in o.regions.items()}
        doc["objects"].append(entry)
    src = scene.config.get("_paths", {})
    if scene.gt_index is not None:
        if "gt_index" in src:
            doc["gt_index"] = rel(src["gt_index"])
        else:
            write_index_png(out_dir / "gt_index.png", scene.gt_index)
            doc["gt_index"] = "gt_index.png"
    if "image" in src:
        doc["image"] = rel(src["image"])
    if scene.detections:
        doc["detections"] = []
        for d in scene.detections:
            if "detections" in src and d.id in src["detections"]:
                mpath = rel(src["detections"][d.id])
            else:
                masks_dir.mkdir(parents=True, exist_ok=True)
                write_mask_png(masks_dir / f"det_{d.id}.png", d.mask)
                mpath = f"masks_out/det_{d.id}.png"
            doc["detections"].append({"id": d.id, "category": d.category, "box": d.box.as_list(),
                                      "mask": mpath, "rigid": d.rigid})
    if scene.oracle_dir is not None:
        doc["oracle_dir"] = os.path.relpath(scene.oracle_dir, out_dir).replace(os.sep, "/")
    if scene.fine_pairs:
        doc["interaction"] = {"fine_pairs": [
            {"human": h, "object": o, "regions": [list(r) for r in regs]}
            for (h, o), regs in sorted(scene.fine_pairs.items())]}
    cfg = {k: v for k, v in scene.config.items() if not k.startswith("_")}
    if cfg:
        doc["config"] = cfg
    return doc


def save_scene(scene: Scene, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = scene_to_doc(scene, path.parent)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def load_scene_checked(path, focal=None) -> Scene:
    """``load_scene`` plus bookkeeping of source paths so saves stay relative."""
    scene = load_scene(path, focal)
    doc = json.loads(Path(path).read_text())
    paths = {}
    if doc.get("gt_index"):
        paths["gt_index"] = doc["gt_index"]
    if doc.get("image"):
        paths["image"] = doc["image"]
    if doc.get("detections"):
        paths["detections"] = {int(d["id"]): d["mask"] for d in doc["detections"]}
    scene.config["_paths"] = paths
    return scene


__all__ = ["Detection", "Instance", "Scene", "ensure_grids", "require_grids", "load_scene",
           "load_scene_checked", "save_scene", "read_obj", "write_obj", "world_box", "HoiLayoutError"]
