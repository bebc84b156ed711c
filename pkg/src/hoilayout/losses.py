"""Objective terms for human-human and human-object layout.

All scene-level terms read instance poses from the scene and go through a
small per-pose cache (``PoseCache``), so a finite-difference sweep that moves
one instance only re-renders that instance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import LossWeights
from .errors import ConfigError, PreconditionError
from .geometry import Aabb, aabb_of_points, aabb_overlap
from .raster import check_same_shape, composite, edge_map, render_depth, render_silhouette
from .sdf import sample_world


# --------------------------------------------------------------------------- pair terms

def collision_pair(p_ij: float, t_i, t_j, delta: float) -> float:
    """P / exp(|T_i - T_j| + delta [T_i == T_j])."""
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta out of range: must be in (0, 1), got {delta}")
    d = float(np.linalg.norm(np.subtract(t_i, t_j, dtype=np.float64)))
    return float(p_ij) * float(np.exp(-(d if d > 0 else delta)))


def softplus(x):
    return np.logaddexp(0.0, x)


# --------------------------------------------------------------------------- cache

def _pose_key(inst):
    p = inst.pose
    return (inst.id, id(inst.mesh), p.rotation.tobytes(), p.translation.tobytes(), p.scale)


class PoseCache:
    """Derived per-instance quantities keyed by (instance, exact pose)."""

    def __init__(self, camera=None, soft_width: float = 2.0, max_entries: int = 256):
        self.camera = camera
        self.soft_width = soft_width
        self.max_entries = max_entries
        self._store: dict = {}

    def _entry(self, inst):
        key = _pose_key(inst)
        e = self._store.get(key)
        if e is None:
            if len(self._store) >= self.max_entries:
                self._store.pop(next(iter(self._store)))
            e = self._store[key] = {}
        return e

    def vertices(self, inst):
        e = self._entry(inst)
        if "v" not in e:
            e["v"] = inst.world_vertices()
        return e["v"]

    def box(self, inst) -> Aabb:
        e = self._entry(inst)
        if "box" not in e:
            e["box"] = aabb_of_points(self.vertices(inst))
        return e["box"]

    def centroid(self, inst):
        return self.vertices(inst).mean(axis=0)

    def depth(self, inst):
        e = self._entry(inst)
        if "depth" not in e:
            e["depth"] = render_depth(inst.mesh.with_vertices(self.vertices(inst)), self.camera, inst.id).depth
        return e["depth"]

    def silhouette(self, inst):
        e = self._entry(inst)
        if "sil" not in e:
            e["sil"] = render_silhouette(inst.mesh.with_vertices(self.vertices(inst)), self.camera, self.soft_width)
        return e["sil"]


def _cache_for(scene, cache):
    return cache if cache is not None else PoseCache(scene.camera)


# --------------------------------------------------------------------------- collision

def penetration_between(a, b, cache: PoseCache) -> float:
    """P_ab: a's phi summed over b's world vertices (0 when boxes are disjoint)."""
    if a.grid is None:
        raise PreconditionError(f"instance {a.id} has no SDF grid")
    if not aabb_overlap(cache.box(a), cache.box(b)):
        return 0.0
    return float(sample_world(a.grid, a.pose, cache.vertices(b)).sum())


def _directed(a, b, delta, cache):
    p = penetration_between(a, b, cache)
    return collision_pair(p, a.pose.translation, b.pose.translation, delta) if p > 0 else 0.0


def collision_total_hh(scene, delta: float = 0.5, cache: PoseCache | None = None) -> float:
    cache = _cache_for(scene, cache)
    hs = scene.humans
    for h in hs:
        if h.grid is None:
            raise PreconditionError(f"instance {h.id} has no SDF grid")
    return float(sum(_directed(a, b, delta, cache) for a in hs for b in hs if a is not b))


def collision_total_ho(scene, delta: float = 0.5, cache: PoseCache | None = None) -> float:
    cache = _cache_for(scene, cache)
    for inst in scene.instances:
        if inst.grid is None:
            raise PreconditionError(f"instance {inst.id} has no SDF grid")
    total = 0.0
    for o in scene.objects:
        for h in scene.humans:
            total += _directed(h, o, delta, cache) + _directed(o, h, delta, cache)
    return float(total)


# --------------------------------------------------------------------------- interaction

@dataclass
class InteractionGraph:
    human_pairs: set = field(default_factory=set)  # (i, j) with i < j
    human_object_pairs: set = field(default_factory=set)  # (h, o)
    fine_pairs: dict = field(default_factory=dict)  # (h, o) -> [(region_h, region_o)]


def build_interaction_graph(scene, padding: float = 0.0, cache: PoseCache | None = None) -> InteractionGraph:
    """Instance-level mu from 3D box overlap at the current poses."""
    cache = _cache_for(scene, cache)

    def box(inst):
        b = cache.box(inst)
        return Aabb(np.subtract(b.lo, padding), np.add(b.hi, padding)) if padding else b

    hs, os_ = scene.humans, scene.objects
    hh = {(min(a.id, b.id), max(a.id, b.id)) for k, a in enumerate(hs) for b in hs[k + 1:]
          if aabb_overlap(box(a), box(b))}
    ho = {(h.id, o.id) for h in hs for o in os_ if aabb_overlap(box(h), box(o))}
    ids = {i.id for i in scene.instances}
    fine = {}
    for (h, o), regs in (scene.fine_pairs or {}).items():
        if h not in ids or o not in ids:
            raise ConfigError(f"fine interaction pair ({h}, {o}) references a missing instance")
        fine[(h, o)] = list(regs)
    return InteractionGraph(hh, ho, fine)


def interaction_hh(scene, graph: InteractionGraph, cache: PoseCache | None = None) -> float:
    cache = _cache_for(scene, cache)
    total = 0.0
    for i, j in sorted(graph.human_pairs):
        total += float(np.linalg.norm(cache.centroid(scene.instance(i)) - cache.centroid(scene.instance(j))))
    return total


def interaction_ho(scene, graph: InteractionGraph, cache: PoseCache | None = None) -> float:
    """Coarse centroid pull plus fine region pulls for regions whose boxes overlap now."""
    cache = _cache_for(scene, cache)
    total = 0.0
    for h, o in sorted(graph.human_object_pairs):
        total += float(np.linalg.norm(cache.centroid(scene.instance(h)) - cache.centroid(scene.instance(o))))
    for (h, o), regs in sorted(graph.fine_pairs.items()):
        hi, oi = scene.instance(h), scene.instance(o)
        vh, vo = cache.vertices(hi), cache.vertices(oi)
        for rh, ro in regs:
            ph, po = vh[hi.region_indices(rh)], vo[oi.region_indices(ro)]
            if aabb_overlap(aabb_of_points(ph), aabb_of_points(po)):
                total += float(np.linalg.norm(ph.mean(axis=0) - po.mean(axis=0)))
    return total


# --------------------------------------------------------------------------- depth ordering

def depth_order_loss(gt_index, rendered, instance_depth: dict, pixels=None) -> float:
    """Softplus of D_y - D_ybar over pixels whose rendered front id disagrees with GT.

    ``instance_depth[id]`` is the depth of that instance rendered alone, which
    supplies D_y where the GT instance is hidden. ``pixels`` optionally
    restricts the disagreement set further.
    """
    gt = np.asarray(gt_index)
    check_same_shape(gt, rendered.index)
    ybar = rendered.index
    sel = (gt > 0) & (ybar > 0) & (gt != ybar)
    if pixels is not None:
        sel &= pixels
    if not sel.any():
        return 0.0
    rows, cols = np.nonzero(sel)
    y = gt[rows, cols]
    d_bar = rendered.depth[rows, cols]
    d_y = np.full(len(rows), np.inf)
    for gid in np.unique(y):
        if gid in instance_depth:
            m = y == gid
            d_y[m] = instance_depth[gid][rows[m], cols[m]]
    ok = np.isfinite(d_y)
    return float(softplus(d_y[ok] - d_bar[ok]).sum())


def render_instances(instances, cache: PoseCache):
    layers = {i.id: cache.depth(i) for i in instances}
    return composite(layers), layers


def restrict_index(gt_index, ids) -> np.ndarray:
    gt = np.asarray(gt_index)
    return np.where(np.isin(gt, list(ids)), gt, 0)


def human_depth_loss(scene, cache: PoseCache | None = None) -> float:
    """Human-only render against the human part of the GT segmentation."""
    if not scene.humans:
        return 0.0
    if scene.gt_index is None:
        raise PreconditionError("depth ordering needs a ground-truth index map")
    cache = _cache_for(scene, cache)
    rendered, layers = render_instances(scene.humans, cache)
    return depth_order_loss(restrict_index(scene.gt_index, layers), rendered, layers)


def object_depth_loss(scene, cache: PoseCache | None = None) -> float:
    """Full render; only disagreements in which an object takes part."""
    if not scene.objects:
        return 0.0
    if scene.gt_index is None:
        raise PreconditionError("depth ordering needs a ground-truth index map")
    cache = _cache_for(scene, cache)
    rendered, layers = render_instances(scene.instances, cache)
    obj = [o.id for o in scene.objects]
    gt = restrict_index(scene.gt_index, layers)
    involved = np.isin(gt, obj) | np.isin(rendered.index, obj)
    return depth_order_loss(gt, rendered, layers, involved)


# --------------------------------------------------------------------------- silhouette

def mask_edge_distance(mask, edge_filter: int = 7) -> np.ndarray | None:
    """Distance (pixels) from every pixel to the nearest edge pixel of ``mask``."""
    e = edge_map(mask, edge_filter) > 0
    if not e.any():
        return None
    return ndimage.distance_transform_edt(~e)


def occ_sil_loss(S, mask, eta=None, with_chamfer: bool = True, symmetric: bool = False,
                 edge_filter: int = 7, target_dt=None, hard_edges: bool = False,
                 reduction: str = "normalized", chamfer_weight: float = 1.0) -> float:
    """Squared error of eta*S against the mask, plus an optional edge chamfer.

    The chamfer weights each pixel of the rendered edge band by its distance
    to the mask's edge band. By default the band is taken on the soft
    silhouette, which keeps the term continuous in the pose; ``hard_edges``
    thresholds eta*S at 0.5 first. ``reduction="normalized"`` divides the
    weighted sum by the band's total weight and multiplies by the number of
    mask edge pixels: the magnitude stays that of a sum over an edge band,
    but shrinking the rendered band (for instance by pushing the render out
    of frame) no longer lowers the term. ``"sum"`` keeps the raw sum.
    ``symmetric`` adds the mask-to-render direction on the thresholded render.
    ``chamfer_weight`` scales the whole chamfer part.
    """
    if reduction not in ("normalized", "sum"):
        raise ConfigError(f"chamfer reduction must be 'normalized' or 'sum', got {reduction!r}")
    S = np.asarray(S, dtype=np.float64)
    M = np.asarray(mask, dtype=np.float64)
    eta = np.ones_like(S) if eta is None else np.asarray(eta, dtype=np.float64)
    check_same_shape(S, M, eta)
    ES = eta * S
    loss = float(np.sum((ES - M) ** 2))
    if not with_chamfer:
        return loss
    dt = mask_edge_distance(M, edge_filter) if target_dt is None else target_dt
    if dt is None:
        return loss
    n_mask_edges = int(np.count_nonzero(dt == 0))
    if hard_edges:
        band = (edge_map(ES >= 0.5, edge_filter) > 0).astype(np.float64)
    else:
        band = edge_map(ES, edge_filter)
    weight = float(band.sum())
    if weight > 0:
        c = float(np.sum(band * dt))
        loss += chamfer_weight * (c / weight * n_mask_edges if reduction == "normalized" else c)
    if symmetric:
        rend_edges = edge_map(ES >= 0.5, edge_filter) > 0
        if rend_edges.any():
            mask_edges = edge_map(M, edge_filter) > 0
            back = ndimage.distance_transform_edt(~rend_edges)[mask_edges]
            loss += chamfer_weight * float(back.sum())
    return loss


def object_silhouette_loss(scene, cache: PoseCache | None = None, with_chamfer: bool = False,
                           edge_filter: int = 7, reduction: str = "normalized") -> float:
    cache = _cache_for(scene, cache)
    total = 0.0
    for o in scene.objects:
        if o.mask is None:
            continue
        total += occ_sil_loss(cache.silhouette(o), o.mask, o.eta, with_chamfer, edge_filter=edge_filter,
                              reduction=reduction)
    return total


# --------------------------------------------------------------------------- compositions

def hhi_terms(scene, graph: InteractionGraph, weights: LossWeights, delta: float = 0.5,
              cache: PoseCache | None = None) -> dict:
    cache = _cache_for(scene, cache)
    t = {
        "h_collision": collision_total_hh(scene, delta, cache) if weights.collision else 0.0,
        "h_depth": human_depth_loss(scene, cache) if weights.depth else 0.0,
        "h_interaction": interaction_hh(scene, graph, cache) if weights.interaction else 0.0,
    }
    t["hhi"] = weights.collision * t["h_collision"] + weights.depth * t["h_depth"] \
        + weights.interaction * t["h_interaction"]
    return t


def hhi_loss(scene, graph, weights: LossWeights, delta: float = 0.5, cache=None) -> float:
    return hhi_terms(scene, graph, weights, delta, cache)["hhi"]


def hoi_terms(scene, graph: InteractionGraph, weights: LossWeights, delta: float = 0.5,
              cache: PoseCache | None = None, edge_filter: int = 7) -> dict:
    cache = _cache_for(scene, cache)
    t = {
        "ho_collision": collision_total_ho(scene, delta, cache) if weights.collision else 0.0,
        "ho_depth": object_depth_loss(scene, cache) if weights.depth else 0.0,
        "ho_interaction": interaction_ho(scene, graph, cache) if weights.interaction else 0.0,
        "occ_sil": object_silhouette_loss(scene, cache, False, edge_filter) if weights.silhouette else 0.0,
    }
    t["hoi"] = weights.collision * t["ho_collision"] + weights.depth * t["ho_depth"] \
        + weights.interaction * t["ho_interaction"] + weights.silhouette * t["occ_sil"]
    return t


def hoi_loss(scene, graph, weights: LossWeights, delta: float = 0.5, cache=None) -> float:
    return hoi_terms(scene, graph, weights, delta, cache)["hoi"]


def joint_terms(scene, graph, human_weights: LossWeights, hoi_weights: LossWeights,
                delta: float = 0.5, cache: PoseCache | None = None, edge_filter: int = 7) -> dict:
    cache = _cache_for(scene, cache)
    t = hhi_terms(scene, graph, human_weights, delta, cache)
    t.update(hoi_terms(scene, graph, hoi_weights, delta, cache, edge_filter))
    t["joint"] = t["hhi"] + t["hoi"]
    return t


def joint_loss(scene, graph, human_weights, hoi_weights, delta: float = 0.5, cache=None) -> float:
    return joint_terms(scene, graph, human_weights, hoi_weights, delta, cache)["joint"]
