"""Occluder search, removal subsets, deoccluded masks and candidate selection.

Mask providers return the detections found after the masked occluders have
been painted out of the image:

* ``FileOracleProvider`` reads ``<root>/<subset-hash>/detections.json``::

      {"detections": [{"category": "cube", "box": [x0, y0, x1, y1],
                       "mask": "det0.png", "rigid": true}, ...]}

  with mask paths relative to that directory. ``subset_hash`` names the
  directory.
* ``RemoteProvider`` POSTs ``{"image": <b64 png>, "occluder_mask": <b64 png>}``
  to an HTTP endpoint and expects ``{"detections": [{"category", "box",
  "mask": <b64 png>, "rigid"}]}``. ``HOILAYOUT_PROVIDER_TIMEOUT`` (seconds,
  default 30) and ``HOILAYOUT_PROVIDER_RETRIES`` (default 2) tune it.
* ``NullProvider`` refuses every request, so only the no-removal candidate
  survives.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from .errors import (DimensionMismatchError, HoiLayoutError, NoMatchError, PipelineError,
                     ProviderError)
from .formats import b64_to_mask, image_to_b64, mask_to_b64, read_mask_png
from .geometry import Rect2, bbox_iou_2d
from .optim import fit_object_pose
from .scene import Detection

log = logging.getLogger(__name__)


def find_occluders(target: Detection, detections, threshold: float = 0.3) -> list:
    return [d for d in detections
            if d is not target and d.id != target.id and bbox_iou_2d(target.box, d.box) > threshold]


def enumerate_subsets(occluders, cap: int = 16) -> list:
    """Removal subsets as tuples of detection ids, smallest first.

    All 2^M subsets when that fits under ``cap``; otherwise the first
    ``cap`` in size order with the full set forced in as the last entry.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    ids = [d.id if isinstance(d, Detection) else int(d) for d in occluders]
    out = []
    for size in range(len(ids) + 1):
        for combo in itertools.combinations(ids, size):
            out.append(tuple(combo))
            if len(out) == cap:
                break
        if len(out) == cap:
            break
    full = tuple(ids)
    if full not in out:
        if cap == 1:
            return [()]  # the no-removal baseline always comes first
        out[-1] = full
    return out


def combine_masks(masks, shape=None) -> np.ndarray:
    masks = [np.asarray(m) for m in masks]
    if not masks:
        if shape is None:
            raise ValueError("combining no masks needs an explicit shape")
        return np.zeros(shape, dtype=np.uint8)
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"mask shapes differ: {sorted(shapes)}")
    out = np.zeros(masks[0].shape, dtype=bool)
    for m in masks:
        out |= m > 0
    return out.astype(np.uint8)


def rematch_object(original_box: Rect2, detections) -> int:
    """Index of the detection whose box best overlaps ``original_box`` (first on ties)."""
    if not detections:
        raise NoMatchError("no detections to match against")
    ious = [bbox_iou_2d(original_box, d.box) for d in detections]
    k = int(np.argmax(ious))
    if ious[k] <= 0.0:
        raise NoMatchError("no detection overlaps the target box")
    return k


def build_eta(target_mask, other_masks) -> np.ndarray:
    """0 where only other instances' masks cover a pixel, 1 elsewhere."""
    target = np.asarray(target_mask) > 0
    others = combine_masks(other_masks, target.shape) > 0
    return (~(others & ~target)).astype(np.uint8)


def subset_hash(ids) -> str:
    key = ",".join(str(int(i)) for i in sorted(ids))
    return hashlib.sha1(key.encode("ascii")).hexdigest()[:16]


# --------------------------------------------------------------------------- providers

def _parse_detections(payload, shape, load_mask) -> list:
    try:
        items = payload["detections"]
    except (KeyError, TypeError):
        raise ProviderError("response lacks a 'detections' list") from None
    out = []
    for k, d in enumerate(items):
        try:
            m = load_mask(d["mask"])
            box = Rect2(*map(float, d["box"]))
        except HoiLayoutError:
            raise
        except Exception as exc:  # malformed entry from an external source
            raise ProviderError(f"detection {k} is malformed: {exc}") from exc
        if m.shape != tuple(shape):
            raise ProviderError(f"detection {k} mask is {m.shape}, expected {tuple(shape)}")
        out.append(Detection(int(d.get("id", k + 1)), str(d.get("category", "object")), box, m,
                             bool(d.get("rigid", True))))
    return out


class MaskProvider:
    def detect(self, image, occluder_mask, removed_ids) -> list:
        raise NotImplementedError


class NullProvider(MaskProvider):
    def detect(self, image, occluder_mask, removed_ids) -> list:
        raise ProviderError("no mask provider configured")


class FileOracleProvider(MaskProvider):
    def __init__(self, root):
        self.root = Path(root)

    def detect(self, image, occluder_mask, removed_ids) -> list:
        d = self.root / subset_hash(removed_ids)
        path = d / "detections.json"
        if not path.exists():
            raise ProviderError(f"oracle has no entry for removed ids {sorted(removed_ids)} ({path})")
        payload = json.loads(path.read_text())
        return _parse_detections(payload, np.shape(occluder_mask), lambda rel: read_mask_png(d / rel))


class RemoteProvider(MaskProvider):
    def __init__(self, endpoint: str, timeout: float | None = None, retries: int | None = None,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.timeout = float(os.environ.get("HOILAYOUT_PROVIDER_TIMEOUT", 30.0)) if timeout is None else timeout
        self.retries = int(os.environ.get("HOILAYOUT_PROVIDER_RETRIES", 2)) if retries is None else retries
        self.client = client

    def detect(self, image, occluder_mask, removed_ids) -> list:
        if image is None:
            raise ProviderError("the remote provider needs the scene image")
        body = {"image": image_to_b64(image), "occluder_mask": mask_to_b64(occluder_mask)}
        last = None
        client = self.client or httpx.Client(timeout=self.timeout)
        try:
            for attempt in range(self.retries + 1):
                try:
                    r = client.post(self.endpoint, json=body)
                    r.raise_for_status()
                    payload = r.json()
                    break
                except (httpx.HTTPError, ValueError) as exc:
                    last = exc
                    log.warning("provider attempt %d failed: %s", attempt + 1, exc)
            else:
                raise ProviderError(f"remote provider failed after {self.retries + 1} attempts: {last}")
        finally:
            if self.client is None:
                client.close()
        return _parse_detections(payload, np.shape(occluder_mask), b64_to_mask)


def make_provider(kind: str, oracle_dir=None, endpoint: str | None = None) -> MaskProvider:
    if kind == "oracle":
        if oracle_dir is None:
            raise ProviderError("the oracle provider needs the scene's oracle_dir")
        return FileOracleProvider(oracle_dir)
    if kind == "remote":
        if not endpoint:
            raise ProviderError("the remote provider needs --endpoint")
        return RemoteProvider(endpoint)
    return NullProvider()


# --------------------------------------------------------------------------- candidates

@dataclass
class FitCandidate:
    removed: tuple
    matched_index: int  # index into the detections the mask came from (-1: original)
    fit: object  # optim.ObjectFit
    mask: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)

    @property
    def loss(self) -> float:
        return self.fit.loss

    @property
    def pose(self):
        return self.fit.pose


def deoccluded_fit(target: Detection, detections, provider: MaskProvider, exemplars, camera, cfg,
                   image=None, init_pose=None):
    """Fit ``target`` once per removal subset; returns ``(best, candidates)``."""
    occluders = find_occluders(target, detections, cfg.iou_threshold)
    subsets = enumerate_subsets(occluders, cfg.subset_cap)
    by_id = {d.id: d for d in detections}
    candidates = []
    for removed in subsets:
        try:
            if not removed:
                mask, k = target.mask, -1
                others = [d.mask for d in detections if d is not target and d.id != target.id]
            else:
                occ = combine_masks([by_id[i].mask for i in removed])
                new = provider.detect(image, occ, removed)
                k = rematch_object(target.box, new)
                mask = new[k].mask
                others = [d.mask for j, d in enumerate(new) if j != k]
            eta = build_eta(mask, others)
            fit = fit_object_pose(exemplars, mask, eta, camera, cfg, init_pose)
        except (ProviderError, NoMatchError) as exc:
            log.warning("removal subset %s skipped: %s", list(removed), exc)
            continue
        except HoiLayoutError as exc:
            log.warning("removal subset %s failed to fit: %s", list(removed), exc)
            continue
        candidates.append(FitCandidate(tuple(removed), k, fit, mask, eta))
    if not candidates:
        raise PipelineError(f"no candidate fit for object {target.id}")
    best = min(candidates, key=lambda c: c.loss)  # first minimum: smallest subset wins ties
    return best, candidates
