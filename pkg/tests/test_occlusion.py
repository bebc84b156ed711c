import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hoilayout.config import load_config
from hoilayout.errors import DimensionMismatchError, NoMatchError, PipelineError, ProviderError
from hoilayout.formats import b64_to_mask, mask_to_b64, write_mask_png
from hoilayout.geometry import Camera, Rect2, RigidPose, apply_pose
from hoilayout.occlusion import (FileOracleProvider, MaskProvider, NullProvider, RemoteProvider, build_eta,
                                 combine_masks, deoccluded_fit, enumerate_subsets, find_occluders, make_provider,
                                 rematch_object, subset_hash)
from hoilayout.primitives import unit_cube
from hoilayout.raster import render_silhouette
from hoilayout.scene import Detection

SHAPE = (10, 10)


def det(i, box, mask=None, rigid=True):
    return Detection(i, "thing", Rect2(*box), np.zeros(SHAPE, np.uint8) if mask is None else mask, rigid)


def _box_with_iou(iou):
    # [0,0,10,10] against [0,0,w,10] with w <= 10 has IOU w / 10
    return (0, 0, 10 * iou, 10)


@pytest.mark.parametrize("iou,hit", [(0.4, True), (0.2, False), (0.3, False)])
def test_find_occluders_threshold(iou, hit):
    target = det(1, (0, 0, 10, 10))
    other = det(2, _box_with_iou(iou))
    assert (find_occluders(target, [target, other], 0.3) == [other]) is hit


def test_enumerate_subsets_examples():
    assert enumerate_subsets([1, 2]) == [(), (1,), (2,), (1, 2)]
    assert enumerate_subsets([]) == [()]
    capped = enumerate_subsets([1, 2, 3, 4, 5], cap=10)
    assert len(capped) == 10 and () in capped and (1, 2, 3, 4, 5) in capped


@given(st.integers(0, 6), st.integers(1, 80))
def test_enumerate_subsets_properties(m, cap):
    subs = enumerate_subsets(list(range(1, m + 1)), cap)
    assert len(set(subs)) == len(subs)
    assert subs[0] == ()
    if 2 ** m <= cap:
        assert len(subs) == 2 ** m
    else:
        assert len(subs) == cap
        if cap > 1:
            assert tuple(range(1, m + 1)) in subs
    assert [len(s) for s in subs[:-1]] == sorted(len(s) for s in subs[:-1])


masks = arrays(np.uint8, (6, 6), elements=st.integers(0, 1))


@given(masks, masks, masks)
def test_combine_masks_is_a_union_algebra(a, b, c):
    u = combine_masks
    assert np.array_equal(u([u([a, b]), c]), u([a, u([b, c])]))
    assert np.array_equal(u([a, b]), u([b, a]))
    assert np.array_equal(u([a, a]), a)


def test_combine_masks_examples():
    assert not combine_masks([], SHAPE).any()
    a = np.zeros(SHAPE, np.uint8)
    b = a.copy()
    a[0, :3] = 1
    b[5, :4] = 1
    assert combine_masks([a, b]).sum() == 7
    with pytest.raises(DimensionMismatchError):
        combine_masks([a, np.zeros((3, 3))])


def test_rematch_examples():
    orig = Rect2(0, 0, 10, 10)
    assert rematch_object(orig, [det(1, (20, 20, 30, 30)), det(2, (0, 0, 10, 10))]) == 1
    cands = [det(k, _box_with_iou(v)) for k, v in enumerate((0.2, 0.9, 0.5))]
    assert rematch_object(orig, cands) == 1
    assert rematch_object(orig, [det(1, (0, 0, 5, 10)), det(2, (5, 0, 10, 10))]) == 0  # tie -> first
    with pytest.raises(NoMatchError):
        rematch_object(orig, [det(1, (20, 20, 30, 30))])


@given(masks, st.lists(masks, max_size=3))
def test_eta_definition(target, others):
    eta = build_eta(target, others)
    covered_by_others = combine_masks(others, target.shape) > 0 if others else np.zeros(target.shape, bool)
    assert (eta[target > 0] == 1).all()
    assert (eta[~covered_by_others] == 1).all()
    assert np.array_equal(eta == 0, covered_by_others & (target == 0))


def test_subset_hash_is_order_free():
    assert subset_hash([3, 1]) == subset_hash((1, 3)) == subset_hash([1, 3])
    assert len(subset_hash([2])) == 16 and subset_hash([2]) != subset_hash([])


def test_file_oracle_layout(tmp_path):
    d = tmp_path / subset_hash([4, 2])
    d.mkdir()
    m = np.zeros(SHAPE, np.uint8)
    m[2:5, 2:5] = 1
    write_mask_png(d / "a.png", m)
    (d / "detections.json").write_text(json.dumps(
        {"detections": [{"category": "cube", "box": [2, 2, 5, 5], "mask": "a.png", "rigid": True}]}))
    out = FileOracleProvider(tmp_path).detect(None, np.zeros(SHAPE), (2, 4))
    assert len(out) == 1 and np.array_equal(out[0].mask, m) and out[0].box == Rect2(2, 2, 5, 5)
    with pytest.raises(ProviderError):
        FileOracleProvider(tmp_path).detect(None, np.zeros(SHAPE), (2,))
    with pytest.raises(ProviderError):
        FileOracleProvider(tmp_path).detect(None, np.zeros((4, 4)), (2, 4))  # wrong mask size


def _remote_payload(mask):
    return {"detections": [{"category": "cube", "box": [1, 1, 4, 4], "mask": mask_to_b64(mask), "rigid": True}]}


def test_remote_provider_protocol_and_retry(monkeypatch):
    m = np.zeros(SHAPE, np.uint8)
    m[1:4, 1:4] = 1
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        if len(seen) == 1:
            return httpx.Response(503)
        return httpx.Response(200, json=_remote_payload(m))
    client = httpx.Client(transport=httpx.MockTransport(handler))
    monkeypatch.setenv("HOILAYOUT_PROVIDER_RETRIES", "1")
    monkeypatch.setenv("HOILAYOUT_PROVIDER_TIMEOUT", "4.5")
    p = RemoteProvider("http://provider.test/detect", client=client)
    assert p.retries == 1 and p.timeout == 4.5
    occ = np.zeros(SHAPE, np.uint8)
    occ[5:, 5:] = 1
    out = p.detect(np.full(SHAPE, 128, np.uint8), occ, (2,))
    assert len(seen) == 2
    assert set(seen[0]) == {"image", "occluder_mask"}
    assert np.array_equal(b64_to_mask(seen[0]["occluder_mask"]), occ)
    assert np.array_equal(out[0].mask, m)


def test_remote_provider_gives_up():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    p = RemoteProvider("http://provider.test/detect", retries=2, client=client)
    with pytest.raises(ProviderError, match="3 attempts"):
        p.detect(np.zeros(SHAPE, np.uint8), np.zeros(SHAPE), (1,))
    bad = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"nope": 1})))
    with pytest.raises(ProviderError):
        RemoteProvider("http://x", retries=0, client=bad).detect(np.zeros(SHAPE, np.uint8), np.zeros(SHAPE), (1,))


def test_make_provider():
    assert isinstance(make_provider("none"), NullProvider)
    with pytest.raises(ProviderError):
        make_provider("oracle")
    with pytest.raises(ProviderError):
        make_provider("remote")


# small fitting problems: one restart, few iterations
CAM = Camera(120.0, 24.0, 24.0, 48, 48)
FAST = load_config(overrides={"object_stage": {"iterations": 15, "restarts": 1}})


def _target():
    cube = unit_cube()
    pose = RigidPose([0.2, 0.5, 0.1], [0.0, 0.0, 5.0])
    full = (render_silhouette(apply_pose(cube, pose), CAM, 0) > 0).astype(np.uint8)
    occ = np.zeros_like(full)
    occ[:, 24:] = 1
    return cube, pose, full, occ


class _Counting(MaskProvider):
    def __init__(self, inner):
        self.inner, self.calls = inner, []

    def detect(self, image, occluder_mask, removed_ids):
        self.calls.append(tuple(removed_ids))
        return self.inner(occluder_mask, removed_ids)


def test_no_occluders_means_one_baseline_candidate():
    cube, pose, full, _ = _target()
    target = Detection(2, "cube", Rect2(0, 0, 48, 48), full)
    prov = _Counting(lambda *_: [])
    best, cands = deoccluded_fit(target, [target], prov, [cube], CAM, FAST, init_pose=pose)
    assert [c.removed for c in cands] == [()] and prov.calls == []
    assert best is cands[0] and best.matched_index == -1


def test_failing_provider_still_returns_baseline():
    cube, pose, full, occ = _target()
    visible = full * (1 - occ)
    target = Detection(2, "cube", Rect2(10, 10, 38, 38), visible)
    occluder = Detection(3, "panel", Rect2(20, 0, 48, 48), occ)
    best, cands = deoccluded_fit(target, [target, occluder], NullProvider(), [cube], CAM, FAST, init_pose=pose)
    assert [c.removed for c in cands] == [()] and best.removed == ()


def test_selection_is_the_minimum_over_candidates():
    cube, pose, full, occ = _target()
    visible = full * (1 - occ)
    target = Detection(2, "cube", Rect2(10, 10, 38, 38), visible)
    occluder = Detection(3, "panel", Rect2(20, 0, 48, 48), occ)
    prov = _Counting(lambda m, ids: [Detection(1, "cube", Rect2(10, 10, 38, 38), full)])
    best, cands = deoccluded_fit(target, [target, occluder], prov, [cube], CAM, FAST, init_pose=pose)
    assert prov.calls == [(3,)]
    assert best.loss == min(c.loss for c in cands)
    removed = {c.removed: c for c in cands}
    assert set(removed) == {(), (3,)}
    assert np.array_equal(removed[(3,)].mask, full) and removed[(3,)].matched_index == 0
    assert (cands[0].eta[occ > 0] == 0).all()  # baseline forgives the occluder


def test_all_candidates_failing_is_a_pipeline_error():
    cube, pose, full, occ = _target()
    target = Detection(2, "cube", Rect2(10, 10, 38, 38), np.zeros_like(full))
    with pytest.raises(PipelineError):
        deoccluded_fit(target, [target], NullProvider(), [cube], CAM, FAST, init_pose=pose)
