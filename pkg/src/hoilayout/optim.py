"""Adam over pose increments, finite-difference gradients, and the three stages.

The parameter vector stores increments relative to each instance's pose at
the start of a stage, so the all-zero vector reproduces the starting poses
bit for bit. Per instance, with ``a``/``k``/``c`` the stage's translation,
rotation and scale units and ``z0`` the starting depth::

    e = exp(a u_tz)
    t = ((t0x + a u_tx z0) e, (t0y + a u_ty z0) e, z0 e)
    R = exp(k u_r) R0
    s = s0 exp(c u_s)

Lateral steps are measured in multiples of the depth and depth steps keep the
image position fixed, so one Adam step moves every instance by a similar
amount on screen regardless of how far away it is.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import LossWeights, RunConfig, StageConfig
from .errors import (BehindCameraError, DimensionMismatchError, DivergenceError, EvaluationError,
                     NoFitError, PreconditionError)
from .geometry import (Camera, RigidPose, TriMesh, aabb_of_mesh, aabb_overlap, axis_angle_to_matrix,
                       mask_box, matrix_to_axis_angle)
from .losses import (InteractionGraph, PoseCache, build_interaction_graph, hhi_terms, joint_terms,
                     mask_edge_distance, occ_sil_loss)
from .raster import render_silhouette
from .scene import Instance, Scene, ensure_grids
from .sdf import sample_trilinear_with_grad

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- parameters

@dataclass(frozen=True)
class ParamSlot:
    inst_id: int
    kind: str  # "translation" | "log_scale" | "rotation"
    start: int
    size: int


class ParamLayout:
    """Maps a flat increment vector onto instance poses."""

    def __init__(self, base_poses: dict, rotating=(), stage: StageConfig | None = None, fixed_scale=()):
        stage = stage or StageConfig()
        self.base = dict(base_poses)
        self.t_unit = stage.translation_unit
        self.r_unit = stage.rotation_unit
        self.s_unit = stage.scale_unit
        self.slots: list[ParamSlot] = []
        pos = 0
        for iid in sorted(self.base):
            if self.base[iid].translation[2] <= 0:
                raise BehindCameraError(f"instance {iid} starts at non-positive depth")
            kinds = [("translation", 3)]
            if iid not in fixed_scale:
                kinds.append(("log_scale", 1))
            if iid in rotating:
                kinds.append(("rotation", 3))
            for kind, size in kinds:
                self.slots.append(ParamSlot(iid, kind, pos, size))
                pos += size
        self.size = pos

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def pack(self, poses: dict | None = None) -> np.ndarray:
        """Increment vector reproducing ``poses`` (the base poses when omitted)."""
        x = self.zeros()
        if poses is None:
            return x
        for sl in self.slots:
            p0, p = self.base[sl.inst_id], poses[sl.inst_id]
            seg = slice(sl.start, sl.start + sl.size)
            if sl.kind == "translation":
                e = p.translation[2] / p0.translation[2]
                uz = math.log(e) / self.t_unit
                z0 = p0.translation[2]
                x[seg] = [(p.translation[0] / e - p0.translation[0]) / (self.t_unit * z0),
                          (p.translation[1] / e - p0.translation[1]) / (self.t_unit * z0), uz]
            elif sl.kind == "log_scale":
                x[seg] = math.log(p.scale / p0.scale) / self.s_unit
            else:
                d = p.matrix @ p0.matrix.T
                x[seg] = matrix_to_axis_angle(d) / self.r_unit
        return x

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise DimensionMismatchError(f"parameter vector has shape {x.shape}, expected ({self.size},)")
        parts: dict = {}
        for sl in self.slots:
            parts.setdefault(sl.inst_id, {})[sl.kind] = x[sl.start:sl.start + sl.size]
        out = {}
        for iid, p0 in self.base.items():
            seg = parts.get(iid, {})
            if all(not np.any(v) for v in seg.values()):
                out[iid] = p0
                continue
            rot, t, s = p0.rotation, p0.translation, p0.scale
            if "translation" in seg:
                ux, uy, uz = seg["translation"]
                z0 = p0.translation[2]
                e = math.exp(self.t_unit * uz)
                t = np.array([(p0.translation[0] + self.t_unit * ux * z0) * e,
                              (p0.translation[1] + self.t_unit * uy * z0) * e, z0 * e])
            if "log_scale" in seg:
                s = p0.scale * math.exp(self.s_unit * seg["log_scale"][0])
            if "rotation" in seg and np.any(seg["rotation"]):
                R = axis_angle_to_matrix(self.r_unit * seg["rotation"]) @ p0.matrix
                rot = matrix_to_axis_angle(R)
            out[iid] = RigidPose(rot, t, s)
        return out

    def matrices(self, x, iid) -> tuple:
        """``(R, t, s)`` of one instance without building a ``RigidPose``."""
        p0 = self.base[iid]
        R, t, s = p0.matrix, p0.translation, p0.scale
        for sl in self.slots:
            if sl.inst_id != iid:
                continue
            u = x[sl.start:sl.start + sl.size]
            if sl.kind == "translation":
                z0 = p0.translation[2]
                e = math.exp(self.t_unit * u[2])
                t = np.array([(t[0] + self.t_unit * u[0] * z0) * e, (t[1] + self.t_unit * u[1] * z0) * e, z0 * e])
            elif sl.kind == "log_scale":
                s = s * math.exp(self.s_unit * u[0])
            elif np.any(u):
                R = axis_angle_to_matrix(self.r_unit * u) @ R
        return R, t, s

    def pose_jacobians(self, x):
        """d(translation)/du (3x3) and d(scale)/du_s per instance (no rotation)."""
        out = {}
        poses = self.unpack(x)
        for iid, p in poses.items():
            a = self.t_unit
            z0 = self.base[iid].translation[2]
            e = p.translation[2] / z0
            J = np.zeros((3, 3))
            J[0, 0] = J[1, 1] = a * z0 * e
            J[:, 2] = a * p.translation
            out[iid] = (J, self.s_unit * p.scale)
        return out


# --------------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, params, grad) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise DimensionMismatchError(f"params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def numerical_gradient(f, params, h: float = 1e-3) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.array(params, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        xi = x[i]
        x[i] = xi + h
        fp = f(x)
        x[i] = xi - h
        fm = f(x)
        x[i] = xi
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"objective is not finite around coordinate {i}", coordinate=i)
        g[i] = (fp - fm) / (2.0 * h)
    return g


@dataclass
class AdamResult:
    x: np.ndarray
    loss: float
    initial_loss: float
    trace: list  # dict rows: iteration, term values, total
    iterations: int


def run_adam(objective, x0, stage: StageConfig, gradient=None, terms=None) -> AdamResult:
    """Minimise ``objective`` from ``x0``; returns the best iterate seen.

    ``terms(x)`` (optional) returns a dict of named loss terms with key
    ``"total"``; it is used for the trace when given.
    """
    grad_fn = gradient or (lambda x: numerical_gradient(objective, x, stage.fd_step))
    state = AdamState(len(x0), lr=stage.lr)
    x = np.array(x0, dtype=np.float64)
    trace = []
    best_x, best_f, f0 = x.copy(), math.inf, None
    for it in range(stage.iterations + 1):
        row = terms(x) if terms else {"total": objective(x)}
        f = row["total"]
        trace.append({"iteration": it, **row})
        if not np.isfinite(f):
            raise DivergenceError(f"loss became non-finite at iteration {it}", trace)
        if f0 is None:
            f0 = f
        if f < best_f:
            best_x, best_f = x.copy(), f
        if it == stage.iterations or len(x) == 0:
            break
        g = grad_fn(x)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"gradient became non-finite at iteration {it}", trace)
        if not g.any() and not state.m.any():
            break  # stationary: Adam would not move
        x = adam_step(state, x, g)
    return AdamResult(best_x, best_f, f0, trace, len(trace) - 1)


def write_trace(path, trace: list) -> None:
    keys = []
    for row in trace:
        for k in row:
            if k not in keys:
                keys.append(k)
    head = ["stage", "iteration"] if "stage" in keys else ["iteration"]
    keys = head + [k for k in keys if k not in ("stage", "iteration", "total")] + ["total"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in trace:
            w.writerow([row.get(k, "") if k in ("iteration", "stage") else repr(float(row.get(k, 0.0)))
                        for k in keys])


# --------------------------------------------------------------------------- human stage

def _human_analytic_gradient(scene: Scene, layout: ParamLayout, x, graph: InteractionGraph,
                             weights: LossWeights, delta: float, cache: PoseCache) -> np.ndarray:
    """Exact gradient of the collision + interaction human objective.

    Valid when the depth weight is zero; humans keep their rotation fixed.
    """
    poses = layout.unpack(x)
    posed = {h.id: _with_pose(h, poses[h.id]) for h in scene.humans}
    dt = {h.id: np.zeros(3) for h in scene.humans}
    ds = {h.id: 0.0 for h in scene.humans}
    if weights.collision:
        for a in posed.values():
            for b in posed.values():
                if a is b or not aabb_overlap(cache.box(a), cache.box(b)):
                    continue
                pa, pb = a.pose, b.pose
                w = cache.vertices(b)
                q = pa.inverse_points(w)
                g, G = sample_trilinear_with_grad(a.grid, q)
                P = pa.scale * g.sum()
                if P <= 0:
                    continue
                Gw = G @ pa.matrix.T  # world-frame gradient rows
                sumG = Gw.sum(axis=0)
                dP_ta = -pa.scale * sumG
                dP_sa = g.sum() - np.einsum("ij,ij->", Gw, w) / pa.scale
                dP_tb = pb.scale * sumG
                dP_sb = np.einsum("ij,ij->", Gw, w) / pb.scale
                diff = pa.translation - pb.translation
                d = float(np.linalg.norm(diff))
                f = math.exp(-(d if d > 0 else delta))
                lam = weights.collision * f
                dt[a.id] += lam * dP_ta
                ds[a.id] += lam * dP_sa
                dt[b.id] += lam * dP_tb
                ds[b.id] += lam * dP_sb
                if d > 0:
                    u = diff / d
                    dt[a.id] += -weights.collision * P * f * u
                    dt[b.id] += weights.collision * P * f * u
    if weights.interaction:
        for i, j in sorted(graph.human_pairs):
            a, b = posed[i], posed[j]
            ca, cb = cache.centroid(a), cache.centroid(b)
            diff = ca - cb
            n = float(np.linalg.norm(diff))
            if n == 0:
                continue
            u = weights.interaction * diff / n
            dt[i] += a.pose.scale * u
            ds[i] += float(u @ ca) / a.pose.scale
            dt[j] -= b.pose.scale * u
            ds[j] -= float(u @ cb) / b.pose.scale
    grad = np.zeros(layout.size)
    jac = layout.pose_jacobians(x)
    for sl in layout.slots:
        J, dsdu = jac[sl.inst_id]
        if sl.kind == "translation":
            grad[sl.start:sl.start + 3] = dt[sl.inst_id] @ J
        elif sl.kind == "log_scale":
            grad[sl.start] = ds[sl.inst_id] * dsdu
    return grad


def _with_pose(inst: Instance, pose: RigidPose) -> Instance:
    return replace(inst, pose=pose)


@dataclass
class StageResult:
    scene: Scene
    loss: float
    initial_loss: float
    trace: list
    graph: InteractionGraph | None = None


class HumanObjective:
    """HHI objective as a function of the human increment vector."""

    def __init__(self, scene: Scene, cfg: RunConfig, graph: InteractionGraph | None = None):
        ensure_grids(scene, cfg.grid_resolution, cfg.grid_padding)
        self.scene = scene
        self.cfg = cfg
        self.weights = cfg.human_weights
        self.cache = PoseCache(scene.camera, cfg.soft_width)
        self.graph = graph or build_interaction_graph(scene, cfg.interaction_padding, self.cache)
        self.layout = ParamLayout({h.id: h.pose for h in scene.humans}, stage=cfg.human_stage)

    def scene_at(self, x) -> Scene:
        return self.scene.with_poses(self.layout.unpack(x))

    def terms(self, x) -> dict:
        t = hhi_terms(self.scene_at(x), self.graph, self.weights, self.cfg.delta, self.cache)
        t["total"] = t.pop("hhi")
        return t

    def __call__(self, x) -> float:
        return self.terms(x)["total"]

    @property
    def has_analytic_gradient(self) -> bool:
        return self.weights.depth == 0

    def analytic_gradient(self, x) -> np.ndarray:
        return _human_analytic_gradient(self.scene, self.layout, x, self.graph, self.weights,
                                        self.cfg.delta, self.cache)


def optimize_humans(scene: Scene, cfg: RunConfig, graph: InteractionGraph | None = None,
                    analytic: bool = True) -> StageResult:
    if len(scene.humans) == 0:
        return StageResult(scene, 0.0, 0.0, [{"iteration": 0, "total": 0.0}])
    obj = HumanObjective(scene, cfg, graph)
    grad = obj.analytic_gradient if analytic and obj.has_analytic_gradient else None
    res = run_adam(obj, obj.layout.zeros(), cfg.human_stage, gradient=grad, terms=obj.terms)
    return StageResult(obj.scene_at(res.x), res.loss, res.initial_loss, res.trace, obj.graph)


# --------------------------------------------------------------------------- object fitting

def _rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def initial_object_pose(mesh: TriMesh, mask, camera: Camera) -> RigidPose:
    """Place the exemplar so its projected size and centre roughly match the mask."""
    rows, cols = np.nonzero(np.asarray(mask) > 0)
    box = mask_box(mask)
    size_px = math.hypot(box.x_max - box.x_min, box.y_max - box.y_min)
    ext = float(np.linalg.norm(aabb_of_mesh(mesh).extent))
    z = camera.focal * ext / max(size_px, 1.0)
    u, v = cols.mean() + 0.5, rows.mean() + 0.5
    c = mesh.vertices.mean(axis=0)
    t = np.array([(u - camera.cx) * z / camera.focal, (v - camera.cy) * z / camera.focal, z]) - c
    return RigidPose(np.zeros(3), t, 1.0)


@dataclass
class ObjectFit:
    pose: RigidPose
    exemplar_index: int
    loss: float
    restart: int
    trace: list
    losses: dict = field(default_factory=dict)  # (exemplar, restart) -> final loss


class SilhouetteObjective:
    """Occlusion-aware silhouette loss of one exemplar as a function of its increments."""

    def __init__(self, mesh: TriMesh, mask, eta, camera: Camera, cfg: RunConfig, base: RigidPose,
                 stage: StageConfig | None = None, with_chamfer: bool = True, target_dt=None):
        self.mesh, self.mask, self.eta, self.camera, self.cfg = mesh, mask, eta, camera, cfg
        self.stage = stage or cfg.object_stage
        # the scale cancels in the projection, so it has no silhouette gradient
        self.layout = ParamLayout({0: base}, rotating={0} if self.stage.optimize_rotation else (),
                                  stage=self.stage, fixed_scale={0})
        self.with_chamfer = with_chamfer
        self.dt = mask_edge_distance(mask, cfg.edge_filter) if (with_chamfer and target_dt is None) else target_dt

    def pose(self, x) -> RigidPose:
        return self.layout.unpack(x)[0]

    def __call__(self, x) -> float:
        R, t, sc = self.layout.matrices(x, 0)
        verts = sc * (self.mesh.vertices @ R.T + t)
        if np.any(verts[:, 2] <= 1e-6):
            return math.inf
        S = render_silhouette(self.mesh.with_vertices(verts), self.camera, self.cfg.soft_width)
        return occ_sil_loss(S, self.mask, self.eta, self.with_chamfer, self.cfg.chamfer_symmetric,
                            self.cfg.edge_filter, self.dt, reduction=self.cfg.chamfer_reduction,
                            chamfer_weight=self.cfg.chamfer_weight)


def _safe_objective(f):
    # a restart that drives the mesh behind the camera is treated as infinitely bad
    def wrapped(x):
        try:
            return f(x)
        except BehindCameraError:
            return math.inf
    return wrapped


def fit_object_pose(exemplars, mask, eta, camera: Camera, cfg: RunConfig,
                    init_pose: RigidPose | None = None) -> ObjectFit:
    """Best (pose, exemplar) over exemplars x azimuth restarts by final silhouette loss."""
    exemplars = list(exemplars)
    if not exemplars:
        raise PreconditionError("no exemplar meshes")
    mask = np.asarray(mask)
    if not mask.any():
        raise NoFitError("target mask is empty")
    stage = cfg.object_stage
    dt = mask_edge_distance(mask, cfg.edge_filter)
    best: ObjectFit | None = None
    losses = {}
    for k, mesh in enumerate(exemplars):
        base = init_pose if init_pose is not None else initial_object_pose(mesh, mask, camera)
        for r in range(stage.restarts):
            R = _rot_y(2.0 * math.pi * r / stage.restarts) @ base.matrix
            start = RigidPose(matrix_to_axis_angle(R) if r else base.rotation, base.translation, base.scale)
            obj = SilhouetteObjective(mesh, mask, eta, camera, cfg, start, stage, True, dt)
            f = _safe_objective(obj)
            if not np.isfinite(f(obj.layout.zeros())):
                losses[(k, r)] = math.inf
                continue
            try:
                res = run_adam(f, obj.layout.zeros(), stage)
            except (DivergenceError, EvaluationError) as exc:
                log.warning("exemplar %d restart %d abandoned: %s", k, r, exc)
                losses[(k, r)] = math.inf
                continue
            losses[(k, r)] = res.loss
            if best is None or res.loss < best.loss:
                best = ObjectFit(obj.pose(res.x), k, res.loss, r, res.trace)
    if best is None:
        raise NoFitError("every exemplar/restart combination failed")
    best.losses = losses
    return best


# --------------------------------------------------------------------------- joint stage

class JointObjective:
    def __init__(self, scene: Scene, cfg: RunConfig, graph: InteractionGraph | None = None):
        ensure_grids(scene, cfg.grid_resolution, cfg.grid_padding)
        self.scene, self.cfg = scene, cfg
        self.cache = PoseCache(scene.camera, cfg.soft_width)
        self.graph = graph or build_interaction_graph(scene, cfg.interaction_padding, self.cache)
        rotating = {o.id for o in scene.objects} if cfg.joint_stage.optimize_rotation else ()
        self.layout = ParamLayout(scene.poses(), rotating, cfg.joint_stage)

    def scene_at(self, x) -> Scene:
        return self.scene.with_poses(self.layout.unpack(x))

    def terms(self, x) -> dict:
        try:
            t = joint_terms(self.scene_at(x), self.graph, self.cfg.human_weights, self.cfg.hoi_weights,
                            self.cfg.delta, self.cache, self.cfg.edge_filter)
        except BehindCameraError:
            return {"total": math.inf}
        t["total"] = t.pop("joint")
        return t

    def __call__(self, x) -> float:
        return self.terms(x)["total"]


def optimize_joint(scene: Scene, cfg: RunConfig, graph: InteractionGraph | None = None) -> StageResult:
    if not scene.instances:
        return StageResult(scene, 0.0, 0.0, [{"iteration": 0, "total": 0.0}])
    obj = JointObjective(scene, cfg, graph)
    res = run_adam(obj, obj.layout.zeros(), cfg.joint_stage, terms=obj.terms)
    return StageResult(obj.scene_at(res.x), res.loss, res.initial_loss, res.trace, obj.graph)
