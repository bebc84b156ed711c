"""Stage drivers: human layout, per-object occlusion-aware fitting, joint refinement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .config import RunConfig
from .errors import HoiLayoutError
from .occlusion import MaskProvider, NullProvider, deoccluded_fit
from .optim import fit_object_pose, optimize_humans, optimize_joint
from .scene import Scene

log = logging.getLogger(__name__)

STAGES = ("human", "object", "joint")


def scene_config(scene: Scene, cfg: RunConfig) -> RunConfig:
    """Apply the scene document's own ``config`` block underneath ``cfg``'s explicit values."""
    own = {k: v for k, v in scene.config.items() if not k.startswith("_")}
    return cfg.with_overrides(own) if own else cfg


@dataclass
class PipelineResult:
    scene: Scene
    trace: list = field(default_factory=list)
    candidates: dict = field(default_factory=dict)  # object id -> [FitCandidate]


def _tag(trace, stage):
    return [{"stage": stage, **row} for row in trace]


def _stage(name):
    """Attach the stage name to library errors raised inside."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, exc, tb):
            if isinstance(exc, HoiLayoutError) and getattr(exc, "stage", None) is None:
                exc.stage = name
            return False
    return _Ctx()


def run_human_stage(scene: Scene, cfg: RunConfig) -> PipelineResult:
    with _stage("human"):
        res = optimize_humans(scene, cfg)
    return PipelineResult(res.scene, _tag(res.trace, "human"))


def run_joint_stage(scene: Scene, cfg: RunConfig) -> PipelineResult:
    with _stage("joint"):
        res = optimize_joint(scene, cfg)
    return PipelineResult(res.scene, _tag(res.trace, "joint"))


def run_object_stage(scene: Scene, cfg: RunConfig, provider: MaskProvider | None = None) -> PipelineResult:
    """Fit every object that has a rigid detection (same id) or a mask of its own.

    With a detection the fit goes through the removal-subset search;
    otherwise the object's mask and eta are fitted directly.
    """
    provider = provider or NullProvider()
    dets = {d.id: d for d in scene.detections}
    objects, trace, cands = [], [], {}
    with _stage("object"):
        for o in scene.objects:
            init = o.pose if o.source.get("has_pose", True) else None
            det = dets.get(o.id)
            if det is not None and det.rigid:
                best, cands[o.id] = deoccluded_fit(det, scene.detections, provider, o.exemplars, scene.camera,
                                                   cfg, scene.image, init)
                fit, mask, eta = best.fit, best.mask, best.eta
            elif o.mask is not None:
                fit = fit_object_pose(o.exemplars, o.mask, o.eta, scene.camera, cfg, init)
                mask, eta = o.mask, o.eta
            else:
                log.warning("object %d has neither a detection nor a mask; pose left unchanged", o.id)
                objects.append(o)
                continue
            k = fit.exemplar_index
            src = dict(o.source, has_pose=True)
            src["mask_dirty"] = mask is not o.mask
            src["eta_dirty"] = eta is not o.eta
            mesh = o.exemplars[k]
            objects.append(replace(o, mesh=mesh, exemplar_index=k, pose=fit.pose, mask=mask, eta=eta,
                                   grid=o.grid if mesh is o.mesh else None, source=src))
            trace += [{"stage": f"object:{o.id}", **row} for row in fit.trace]
    return PipelineResult(scene.with_instances(objects=objects), trace, cands)


def run_pipeline(scene: Scene, cfg: RunConfig, provider: MaskProvider | None = None) -> PipelineResult:
    """Human stage, then object fitting, then the joint stage, in that fixed order."""
    h = run_human_stage(scene, cfg)
    o = run_object_stage(h.scene, cfg, provider)
    j = run_joint_stage(o.scene, cfg)
    return PipelineResult(j.scene, h.trace + o.trace + j.trace, o.candidates)
