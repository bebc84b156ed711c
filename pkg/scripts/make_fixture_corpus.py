"""Write the three-scene metric fixture corpus under tests/fixtures/corpus.

All instances are axis-aligned boxes (identity rotation) so an independent
checker can evaluate SDFs and depth in closed form.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from hoilayout.formats import write_index_png
from hoilayout.geometry import Camera, RigidPose, apply_pose
from hoilayout.primitives import box
from hoilayout.raster import render_scene
from hoilayout.scene import SCHEMA_VERSION, write_obj

CAMERA = Camera(100.0, 32.0, 32.0, 64, 64)

# name -> (mesh size, subdivisions)
MESHES = {"tall": ((0.5, 1.6, 0.4), 2), "crate": ((0.6, 0.6, 0.6), 2)}

# (id, kind, mesh, pose, gt pose)
SCENES = {
    "scene_a": [
        (1, "human", "tall", ([-0.13, 0.02, 6.0], 1.0), ([-0.45, 0.02, 6.0], 1.0)),
        (2, "human", "tall", ([0.19, -0.03, 5.75], 1.05), ([0.19, -0.03, 5.24], 1.05)),
        (3, "object", "crate", ([0.47, 0.31, 6.6], 0.9), ([0.47, 0.31, 5.4], 0.9)),
    ],
    "scene_b": [
        (1, "human", "tall", ([-0.61, 0.05, 7.0], 1.0), ([-0.61, 0.05, 7.0], 1.0)),
        (2, "human", "tall", ([0.23, 0.01, 7.3], 0.97), ([0.23, 0.01, 7.3], 0.97)),
        (4, "object", "crate", ([-0.07, 0.43, 6.2], 1.1), ([-0.07, 0.43, 7.9], 1.1)),
    ],
    "scene_c": [
        (1, "human", "tall", ([-0.4, 0.0, 6.5], 1.0), ([-0.4, 0.0, 6.5], 1.0)),
        (2, "human", "tall", ([0.42, 0.02, 6.3], 1.02), ([0.42, 0.02, 6.3], 1.02)),
    ],
}


def write_corpus(root: Path) -> list:
    paths = []
    for name, insts in SCENES.items():
        d = root / name
        (d / "meshes").mkdir(parents=True, exist_ok=True)
        meshes = {}
        for key, (size, sub) in MESHES.items():
            meshes[key] = box(size, subdivisions=sub)
            write_obj(d / "meshes" / f"{key}.obj", meshes[key])
        doc = {"schema_version": SCHEMA_VERSION, "camera": CAMERA.to_dict(), "humans": [], "objects": [],
               "gt_index": "gt_index.png"}
        gt_world = []
        for iid, kind, mesh, (t, s), (gt_t, gt_s) in insts:
            pose = RigidPose(translation=t, scale=s)
            entry = {"id": iid, "mesh" if kind == "human" else "exemplars":
                     f"meshes/{mesh}.obj" if kind == "human" else [f"meshes/{mesh}.obj"],
                     "pose": pose.to_dict()}
            doc["humans" if kind == "human" else "objects"].append(entry)
            gt_world.append((iid, apply_pose(meshes[mesh], RigidPose(translation=gt_t, scale=gt_s))))
        write_index_png(d / "gt_index.png", render_scene(gt_world, CAMERA).index)
        (d / "scene.json").write_text(json.dumps(doc, indent=2) + "\n")
        paths.append(d / "scene.json")
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "corpus"))
    args = ap.parse_args()
    for p in write_corpus(Path(args.out)):
        print(p)


if __name__ == "__main__":
    main()
