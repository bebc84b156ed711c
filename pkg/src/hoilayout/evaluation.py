"""Corpus metrics: mean collision and depth-ordering error over scenes.

``report.csv`` has one row per scene::

    scene,E_H_col,E_HO_col,E_H_depth,E_HO_depth

``report.json`` holds the aggregates::

    {"T": 3, "E_H_col": ..., "E_HO_col": ..., "E_H_depth": ..., "E_HO_depth": ...,
     "scenes": ["a", "b", "c"]}

Aggregates are exact rational means rounded once, so they depend neither on
scene order nor on how many times the corpus is repeated.
"""
from __future__ import annotations

import csv
import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCorpusError, PreconditionError
from .losses import (PoseCache, collision_total_hh, collision_total_ho, depth_order_loss,
                     render_instances, restrict_index)
from .scene import ensure_grids

METRICS = ("E_H_col", "E_HO_col", "E_H_depth", "E_HO_depth")


def _depth_terms(scene, cache):
    if scene.gt_index is None:
        raise PreconditionError("depth metrics need a ground-truth index map")
    if not scene.instances:
        return 0.0, 0.0
    rendered, layers = render_instances(scene.instances, cache)
    gt = restrict_index(scene.gt_index, layers)
    humans = [h.id for h in scene.humans]
    both_human = np.isin(gt, humans) & np.isin(rendered.index, humans)
    return (depth_order_loss(gt, rendered, layers, both_human),
            depth_order_loss(gt, rendered, layers))


def scene_metrics(scene, delta: float = 0.5, grid_resolution: int = 64, grid_padding=None) -> dict:
    ensure_grids(scene, grid_resolution, grid_padding)
    cache = PoseCache(scene.camera)
    h_depth, ho_depth = _depth_terms(scene, cache)
    return {
        "E_H_col": collision_total_hh(scene, delta, cache),
        "E_HO_col": collision_total_ho(scene, delta, cache),
        "E_H_depth": h_depth,
        "E_HO_depth": ho_depth,
    }


@dataclass
class MetricReport:
    rows: list  # dicts with "scene" plus the metric columns
    aggregates: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        return {"T": self.T, **{k: self.aggregates[k] for k in METRICS},
                "scenes": [r["scene"] for r in self.rows]}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene", *METRICS])
            for r in self.rows:
                w.writerow([r["scene"], *(repr(float(r[k])) for k in METRICS)])
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2) + "\n")


def _mean(values) -> float:
    values = [Fraction(float(v)) for v in values]
    return float(sum(values, Fraction(0)) / len(values))


def evaluate_corpus(scenes, names=None, delta: float = 0.5, grid_resolution: int = 64,
                    grid_padding=None) -> MetricReport:
    scenes = list(scenes)
    if not scenes:
        raise EmptyCorpusError("cannot average over an empty corpus")
    names = list(names) if names is not None else [f"scene{k}" for k in range(len(scenes))]
    rows = []
    for name, sc in zip(names, scenes):
        rows.append({"scene": name, **scene_metrics(sc, delta, grid_resolution, grid_padding)})
    agg = {k: _mean(r[k] for r in rows) for k in METRICS}
    return MetricReport(rows, agg)


def _metric(key):
    def fn(scenes, delta: float = 0.5, grid_resolution: int = 64) -> float:
        return evaluate_corpus(scenes, delta=delta, grid_resolution=grid_resolution).aggregates[key]
    fn.__name__ = key.lower()
    fn.__doc__ = f"Corpus mean of the per-scene {key} term."
    return fn


e_h_col = _metric("E_H_col")
e_ho_col = _metric("E_HO_col")
e_h_depth = _metric("E_H_depth")
e_ho_depth = _metric("E_HO_depth")
