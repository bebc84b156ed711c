import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_scene
from hoilayout.config import LossWeights
from hoilayout.errors import ConfigError, DimensionMismatchError, PreconditionError
from hoilayout.geometry import Camera, RigidPose, aabb_of_points, aabb_overlap, apply_pose
from hoilayout.losses import (InteractionGraph, PoseCache, build_interaction_graph, collision_pair,
                              collision_total_hh, collision_total_ho, depth_order_loss, hhi_loss, hhi_terms,
                              hoi_loss, interaction_hh, interaction_ho, joint_loss, occ_sil_loss,
                              penetration_between)
from hoilayout.primitives import box, unit_cube
from hoilayout.raster import DepthIndexMap, render_silhouette
from hoilayout.sdf import oracle_penetration

CAM = Camera(100.0, 32.0, 32.0, 64, 64)
ZERO = LossWeights(0, 0, 0, 0)


def test_collision_pair_examples():
    assert collision_pair(0.0, [0, 0, 0], [1, 2, 3], 0.5) == 0.0
    assert collision_pair(1.0, [1, 1, 1], [1, 1, 1], 0.5) == pytest.approx(0.60653, abs=1e-5)
    assert collision_pair(2.0, [0, 0, 0], [0, 1, 0], 0.5) == pytest.approx(0.73576, abs=1e-5)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigError):
            collision_pair(1.0, [0, 0, 0], [0, 0, 0], bad)


@given(st.floats(0.01, 10), st.floats(1e-3, 5), st.floats(1e-3, 5), st.floats(0.1, 0.9))
def test_collision_pair_decreasing_in_distance(p, d1, d2, delta):
    lo, hi = sorted((d1, d2))
    a = collision_pair(p, [0, 0, 0], [lo, 0, 0], delta)
    b = collision_pair(p, [0, 0, 0], [hi, 0, 0], delta)
    assert 0 <= b <= a
    if hi - lo > 1e-9:
        assert b < a


def test_collision_hh_examples():
    single = make_scene(CAM, [(unit_cube(), RigidPose(translation=[0, 0, 6]))])
    assert collision_total_hh(single) == 0.0
    apart = make_scene(CAM, [(unit_cube(), RigidPose(translation=[-2, 0, 6])),
                             (unit_cube(), RigidPose(translation=[2, 0, 6]))])
    assert collision_total_hh(apart) == 0.0
    cube = unit_cube(3)
    same = make_scene(CAM, [(cube, RigidPose(translation=[0, 0, 6])), (cube, RigidPose(translation=[0, 0, 6]))])
    a, b = same.humans
    cache = PoseCache(CAM)
    p_ab, p_ba = penetration_between(a, b, cache), penetration_between(b, a, cache)
    assert p_ab == p_ba
    world = a.world_mesh()
    # surface vertices: the oracle gives 0, the grid at most the interpolation smear
    assert abs(p_ab - oracle_penetration(world, world)) <= cube.n_vertices * a.grid.cell_diagonal
    assert collision_total_hh(same) == pytest.approx(2 * p_ab * math.exp(-0.5))
    assert hhi_loss(same, InteractionGraph(), LossWeights(1, 0, 0)) == collision_total_hh(same)


def test_missing_grid_is_a_precondition_error():
    s = make_scene(CAM, [(unit_cube(), RigidPose(translation=[0, 0, 6]))] * 2, grid_n=0)
    with pytest.raises(PreconditionError):
        collision_total_hh(s)


def _wedge_scene(grid_n=64):
    # a unit cube turned 45 degrees about z pokes two vertices 0.25 into a 2x2x2 box
    c = 1.0 + math.sqrt(0.5) - 0.25
    return make_scene(CAM, [(box((2, 2, 2)), RigidPose(translation=[0, 0, 6]))],
                      [(unit_cube(), RigidPose(rotation=[0, 0, math.pi / 4], translation=[c, 0, 6]))], grid_n)


def test_collision_ho_one_direction():
    s = _wedge_scene()
    h, o = s.humans[0], s.objects[0]
    hw, ow = h.world_mesh(), o.world_mesh()
    p_ho = oracle_penetration(hw, ow)
    assert p_ho == pytest.approx(0.5)
    assert oracle_penetration(ow, hw) == 0.0
    d = np.linalg.norm(h.pose.translation - o.pose.translation)
    tol = 2 * h.grid.cell_diagonal * math.exp(-d)
    assert collision_total_ho(s) == pytest.approx(p_ho * math.exp(-d), abs=tol)
    assert collision_total_ho(make_scene(CAM, [(unit_cube(), RigidPose(translation=[0, 0, 6]))])) == 0.0


def test_interaction_hh_examples():
    s = make_scene(CAM, [(unit_cube(), RigidPose(translation=[0, 0, 5])),
                         (unit_cube(), RigidPose(translation=[3, 4, 5]))], grid_n=0)
    assert interaction_hh(s, InteractionGraph()) == 0.0
    assert interaction_hh(s, InteractionGraph({(1, 2)})) == pytest.approx(5.0)


def _region_scene():
    h = box((4, 2, 2))
    o = box((2, 2, 2))

    def at(mesh, pts):
        return [int(np.flatnonzero(np.all(np.isclose(mesh.vertices, p), axis=1))[0]) for p in pts]
    s = make_scene(CAM, [(h, RigidPose(translation=[0, 0, 6]))], [(o, RigidPose(translation=[1, 0, 6]))], grid_n=0)
    s.humans[0].regions = {"hand": np.array(at(h, [(-2, -1, -1), (2, -1, -1)]))}
    s.objects[0].regions = {"top": np.array(at(o, [(1, -1, -1)]))}
    return s


def test_interaction_ho_fine_region():
    s = _region_scene()
    g = build_interaction_graph(s)
    assert g.human_object_pairs == {(1, 2)}
    assert interaction_ho(s, g) == pytest.approx(1.0)  # coarse only
    s.fine_pairs = {(1, 2): [("hand", "top")]}
    g = build_interaction_graph(s)
    ph = s.humans[0].world_vertices()[s.humans[0].regions["hand"]]
    po = s.objects[0].world_vertices()[s.objects[0].regions["top"]]
    assert aabb_overlap(aabb_of_points(ph), aabb_of_points(po))
    assert interaction_ho(s, g) == pytest.approx(1.0 + 2.0)
    assert interaction_ho(s, InteractionGraph()) == 0.0
    s.fine_pairs = {(1, 2): [("hand", "nope")]}
    with pytest.raises(ConfigError):
        interaction_ho(s, build_interaction_graph(s))


def _one_pixel(gt_id, front_id, d_front, d_gt):
    gt = np.array([[gt_id]])
    r = DepthIndexMap(np.array([[d_front]]), np.array([[front_id]]))
    return depth_order_loss(gt, r, {front_id: np.array([[d_front]]), gt_id: np.array([[d_gt]])})


def test_depth_order_examples():
    gt = np.array([[1, 2], [0, 2]])
    r = DepthIndexMap(np.array([[3.0, 4.0], [np.inf, 4.0]]), gt.copy())
    assert depth_order_loss(gt, r, {}) == 0.0
    assert _one_pixel(1, 2, 5.0, 5.0) == pytest.approx(math.log(2))
    assert _one_pixel(1, 2, 5.0, 6.0) == pytest.approx(1.3133, abs=1e-4)
    with pytest.raises(DimensionMismatchError):
        depth_order_loss(np.zeros((3, 3), int), r, {})


@given(st.floats(4.0, 9.0), st.floats(0.01, 3.0))
def test_depth_loss_decreases_as_gt_instance_moves_forward(d_gt, step):
    assert _one_pixel(1, 2, 5.0, d_gt - step) < _one_pixel(1, 2, 5.0, d_gt)


def test_occ_sil_examples():
    m = np.zeros((20, 20))
    m[5:12, 6:14] = 1
    assert occ_sil_loss(m, m, np.ones_like(m), with_chamfer=True) == 0.0
    assert occ_sil_loss(np.zeros_like(m), m, None, with_chamfer=True) == m.sum()
    S = m.copy()
    S[12:15, 6:14] = 1  # spill where the mask is 0 ...
    eta = np.ones_like(m)
    eta[12:15, :] = 0  # ... but another instance covers it
    assert occ_sil_loss(S, m, eta, with_chamfer=False) == 0.0
    assert occ_sil_loss(S, m, None, with_chamfer=False) == 24.0
    with pytest.raises(DimensionMismatchError):
        occ_sil_loss(m, m[:10], None)


@given(st.integers(0, 2 ** 32 - 1))
def test_occ_sil_l2_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    S, M, E = rng.random((8, 8)), (rng.random((8, 8)) > 0.5) * 1.0, (rng.random((8, 8)) > 0.2) * 1.0
    perm = rng.permutation(64)
    a = occ_sil_loss(S, M, E, with_chamfer=False)
    b = occ_sil_loss(*(x.ravel()[perm].reshape(8, 8) for x in (S, M, E)), with_chamfer=False)
    assert a == pytest.approx(b, rel=1e-12)


def test_chamfer_zero_on_identical_edges_and_positive_when_shifted():
    m = np.zeros((40, 40))
    m[10:25, 10:25] = 1
    for red in ("normalized", "sum"):
        assert occ_sil_loss(m, m, None, True, reduction=red) == 0.0
        assert occ_sil_loss(m, m, None, True, hard_edges=True, symmetric=True, reduction=red) == 0.0
    shifted = np.roll(m, 6, axis=1)
    l2 = occ_sil_loss(shifted, m, None, False)
    assert occ_sil_loss(shifted, m, None, True) > l2


def _ordered_scene():
    s = make_scene(CAM, [(unit_cube(), RigidPose(translation=[-1.2, 0, 6])),
                         (unit_cube(), RigidPose(translation=[1.2, 0, 6]))],
                   [(unit_cube(), RigidPose(translation=[0, 1.5, 7]))])
    cache = PoseCache(CAM)
    from hoilayout.losses import render_instances
    s.gt_index = render_instances(s.instances, cache)[0].index
    o = s.objects[0]
    o.mask = (render_silhouette(o.world_mesh(), CAM, 0) > 0).astype(np.uint8)
    return s


def test_compositions_vanish_on_a_consistent_scene():
    s = _ordered_scene()
    g = build_interaction_graph(s)
    assert g.human_pairs == set() and g.human_object_pairs == set()
    one = LossWeights(1, 1, 1, 1)
    assert hhi_loss(s, g, one) == 0.0
    assert hhi_loss(s, g, ZERO) == 0.0 and hoi_loss(s, g, ZERO) == 0.0
    terms = hhi_terms(s, g, one)
    assert terms["h_depth"] == 0.0
    # silhouette is soft, so the perfectly posed object only leaves boundary residue
    hard = LossWeights(1, 1, 1, 0)
    assert hoi_loss(s, g, hard) == 0.0
    assert joint_loss(s, g, one, hard) == 0.0
    no_obj = s.with_instances(objects=[])
    assert hoi_loss(no_obj, g, one) == 0.0
    assert joint_loss(no_obj, g, one, one) == hhi_loss(no_obj, g, one)


def test_joint_loss_with_single_human_is_hoi():
    s = _wedge_scene(32)
    s.gt_index = np.zeros(CAM.shape, dtype=np.int64)
    g = build_interaction_graph(s)
    one = LossWeights(1, 1, 1, 1)
    assert joint_loss(s, g, one, one) == pytest.approx(hoi_loss(s, g, one))


@given(st.tuples(*[st.floats(0, 3)] * 4))
def test_losses_linear_in_weights(w):
    s = _LINEAR_SCENE
    g = build_interaction_graph(s)
    basis = [LossWeights(*np.eye(4)[k]) for k in range(4)]
    for fn in (hhi_loss, hoi_loss):
        total = fn(s, g, LossWeights(*w))
        parts = sum(wk * fn(s, g, b) for wk, b in zip(w, basis))
        assert total == pytest.approx(parts, rel=1e-9, abs=1e-12)
        assert total >= 0 and np.isfinite(total)


def _linear_scene():
    s = _wedge_scene(24)
    s = s.with_instances(humans=s.humans + [])
    gt = np.zeros(CAM.shape, dtype=np.int64)
    gt[28:36, 30:50] = 2
    gt[30:34, 20:40] = 1
    s.gt_index = gt
    o = s.objects[0]
    o.mask = np.zeros(CAM.shape, dtype=np.uint8)
    o.mask[25:40, 40:55] = 1
    return s


_LINEAR_SCENE = _linear_scene()


@given(st.tuples(*[st.floats(-0.05, 0.05)] * 3))
def test_isolated_instance_translation_keeps_terms_zero(dt):
    s = make_scene(CAM, [(unit_cube(), RigidPose(translation=[-1.5, 0, 6])),
                         (unit_cube(), RigidPose(translation=[1.5, 0, 6]))], grid_n=16)
    moved = s.with_poses({2: RigidPose(translation=np.add([1.5, 0, 6], dt))})
    g = build_interaction_graph(moved)
    assert collision_total_hh(moved) == 0.0
    assert interaction_hh(moved, g) == 0.0
