"""Command-line entry point.

Every command writes ``<out>/scene.json`` plus a loss-trace CSV
(``<out>/trace.csv`` unless ``--trace`` names another file). Failures print
one JSON object to stderr and exit nonzero::

    {"error": "missing-file", "message": "...", "stage": "object", "path": "...", "line": null}

Exit codes: 1 for library errors, 2 for bad command lines, 3 for anything
unexpected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config, read_overrides
from .errors import ConfigError, HoiLayoutError
from .evaluation import evaluate_corpus
from .formats import depth_to_png, write_depth, write_gray_png, write_index_png, write_mask_png
from .losses import PoseCache, render_instances
from .occlusion import make_provider
from .optim import write_trace
from .pipeline import run_human_stage, run_joint_stage, run_object_stage, run_pipeline, scene_config
from .scene import load_scene_checked, save_scene
from .synthetic import KINDS, gen_synthetic

log = logging.getLogger("hoilayout")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(2)


def _emit_error(code, message, **extra):
    doc = {"error": code, "message": message}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


def _common(p, scene_required=True, multi_scene=False):
    if multi_scene:
        p.add_argument("--scene", action="append", required=scene_required, help="scene document (repeatable)")
    else:
        p.add_argument("--scene", required=scene_required, help="scene document (JSON)")
    p.add_argument("--config", help="run configuration overrides (JSON or YAML)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--provider", choices=("oracle", "remote", "none"), default=None)
    p.add_argument("--endpoint", default=None, help="mask provider URL for --provider remote")
    p.add_argument("--trace", default=None, help="loss-trace CSV path (default <out>/trace.csv)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hoilayout", description="Scene layout optimisation for humans and objects.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("optimize-humans", "human collision/depth/interaction stage"),
                           ("fit-objects", "occlusion-aware object pose fitting"),
                           ("optimize-joint", "joint human-object refinement"),
                           ("pipeline", "all three stages in order"),
                           ("render", "write index, depth and silhouette buffers")):
        _common(sub.add_parser(name, help=helptext))
    _common(sub.add_parser("evaluate", help="corpus metrics into report.csv/report.json"), multi_scene=True)
    g = sub.add_parser("gen-synthetic", help="write a synthetic bundle with ground truth")
    _common(g, scene_required=False)
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter (numbers parsed as JSON)")
    return p


def _config(args, scene=None):
    cfg = load_config()
    if scene is not None:
        cfg = scene_config(scene, cfg)
    if args.config:
        cfg = cfg.with_overrides(read_overrides(args.config))
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.provider is not None:
        flags["provider"] = args.provider
    if args.endpoint is not None:
        flags["endpoint"] = args.endpoint
    return cfg.with_overrides(flags)


def _load(args):
    scene = load_scene_checked(args.scene)
    cfg = _config(args, scene)
    np.random.seed(cfg.seed)
    return scene, cfg


def _provider(cfg, scene):
    oracle = scene.oracle_dir if cfg.provider == "oracle" else None
    if cfg.provider == "oracle" and oracle is None:
        return make_provider("none")
    return make_provider(cfg.provider, oracle, cfg.endpoint)


def _finish(args, scene, trace):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out / "scene.json")
    write_trace(Path(args.trace) if args.trace else out / "trace.csv", trace)


def render_buffers(scene, out_dir, soft_width: float = 2.0) -> None:
    """index.png, depth.png, depth.bin, sil_<id>.png and overlay.png for ``scene``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = PoseCache(scene.camera, soft_width)
    if scene.instances:
        rendered, _ = render_instances(scene.instances, cache)
        index, depth = rendered.index, rendered.depth
    else:
        index = np.zeros(scene.camera.shape, dtype=np.int64)
        depth = np.full(scene.camera.shape, np.inf)
    write_index_png(out / "index.png", index)
    write_gray_png(out / "depth.png", depth_to_png(depth))
    write_depth(out / "depth.bin", depth)
    base = scene.image if scene.image is not None else np.zeros(scene.camera.shape, dtype=np.uint8)
    overlay = np.repeat((np.asarray(base, dtype=np.float64) * 0.5)[..., None], 3, axis=2) \
        if np.ndim(base) == 2 else np.asarray(base, dtype=np.float64) * 0.5
    palette = np.array([[230, 60, 60], [60, 200, 60], [60, 110, 230], [230, 200, 40], [200, 60, 220]], float)
    for k, inst in enumerate(scene.instances):
        hard = (index == inst.id) | (cache.silhouette(inst) >= 0.5)
        write_mask_png(out / f"sil_{inst.id}.png", hard)
        vis = index == inst.id
        overlay[vis] = 0.5 * overlay[vis] + 0.5 * palette[k % len(palette)]
    from PIL import Image  # only the overlay needs RGB output
    Image.fromarray(np.clip(np.round(overlay), 0, 255).astype(np.uint8), mode="RGB").save(out / "overlay.png")


def _run(args) -> int:
    cmd = args.command
    if cmd == "gen-synthetic":
        params = {}
        for item in args.param:
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
            try:
                params[key] = json.loads(val)
            except json.JSONDecodeError:
                params[key] = val
        path = gen_synthetic(args.kind, args.out, seed=args.seed if args.seed is not None else 0, **params)
        print(json.dumps({"scene": str(path)}))
        return 0
    if cmd == "evaluate":
        scenes, names = [], []
        for s in args.scene:
            scenes.append(load_scene_checked(s))
            names.append(str(Path(s).parent.name or s))
        cfg = _config(args)
        report = evaluate_corpus(scenes, names, cfg.delta, cfg.grid_resolution, cfg.grid_padding)
        report.write(args.out)
        print(json.dumps(report.to_json(), sort_keys=True))
        return 0

    scene, cfg = _load(args)
    if cmd == "optimize-humans":
        res = run_human_stage(scene, cfg)
    elif cmd == "optimize-joint":
        res = run_joint_stage(scene, cfg)
    elif cmd == "fit-objects":
        res = run_object_stage(scene, cfg, _provider(cfg, scene))
    elif cmd == "pipeline":
        res = run_pipeline(scene, cfg, _provider(cfg, scene))
    elif cmd == "render":
        render_buffers(scene, args.out, cfg.soft_width)
        _finish(args, scene, [{"iteration": 0, "total": 0.0}])
        return 0
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigError(f"unknown command {cmd}")
    _finish(args, res.scene, res.trace)
    summary = {"command": cmd, "out": str(Path(args.out) / "scene.json"),
               "final_loss": res.trace[-1]["total"] if res.trace else 0.0}
    if getattr(res, "candidates", None):
        summary["selected_subsets"] = {str(oid): list(min(c, key=lambda x: x.loss).removed)
                                       for oid, c in sorted(res.candidates.items())}
    print(json.dumps(summary, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except HoiLayoutError as exc:
        _emit_error(exc.code, str(exc), stage=getattr(exc, "stage", None),
                    path=getattr(exc, "path", None), line=getattr(exc, "line", None))
        return 1
    except Exception as exc:  # last resort: still machine-readable
        _emit_error("internal", f"{type(exc).__name__}: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
