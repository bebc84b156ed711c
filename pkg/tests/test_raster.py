import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import quad
from hoilayout.errors import BehindCameraError, ConfigError
from hoilayout.geometry import Camera, RigidPose, apply_pose
from hoilayout.primitives import icosphere, l_shape, unit_cube
from hoilayout.raster import (composite, edge_map, project, render_depth, render_scene,
                              render_silhouette, signed_outline_distance, soft_falloff)

poses = st.builds(lambda r, x, y, z, s: RigidPose(r, (x, y, z), s),
                  st.tuples(*[st.floats(-3, 3)] * 3), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6),
                  st.floats(3, 8), st.floats(0.5, 1.5))


def test_project_examples(cam100):
    assert project(cam100, (0, 0, 10)) == (50, 50, 10)
    assert project(cam100, (1, 0, 10)) == (60, 50, 10)
    assert project(cam100, (1, 0, 20)) == (55, 50, 20)
    with pytest.raises(BehindCameraError):
        project(cam100, (0, 0, 0))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 50))
def test_project_scale_consistent(x, y, z):
    cam = Camera(100.0, 50.0, 50.0, 100, 100)
    u1, v1, _ = project(cam, (x, y, z))
    u2, v2, _ = project(cam, (x, y, 2 * z))
    assert (u2 - 50) == pytest.approx((u1 - 50) / 2, abs=1e-9)
    assert (v2 - 50) == pytest.approx((v1 - 50) / 2, abs=1e-9)


def test_render_scene_examples(cam100):
    full = render_scene([(1, quad(5.0))], cam100)
    assert (full.index == 1).all() and (full.depth == 5.0).all()
    a = quad(5.0, -1, 1, -1, 1)
    b = quad(10.0, 0, 4, 0, 4)
    r = render_scene([(2, b), (1, a)], cam100)
    overlap = (r.index > 0) & (np.arange(100)[None, :] > 52) & (np.arange(100)[:, None] > 52)
    assert (r.index[55:65, 55:65] == 1).all() and (r.depth[55:65, 55:65] == 5.0).all()
    assert (r.index[75:85, 75:85] == 2).all() and (r.depth[75:85, 75:85] == 10.0).all()
    assert overlap.any()
    assert (r.index[:30, :30] == 0).all() and np.isinf(r.depth[:30, :30]).all()
    assert ((r.index > 0) == np.isfinite(r.depth)).all()


def test_render_scene_rejects_bad_ids(cam100):
    with pytest.raises(ConfigError):
        render_scene([(1, quad(5)), (1, quad(6))], cam100)
    with pytest.raises(ConfigError):
        render_scene([(0, quad(5))], cam100)
    with pytest.raises(ConfigError):
        render_scene([], cam100)


def test_equal_depth_tie_goes_to_lower_id(cam100):
    r = render_scene([(4, quad(5.0)), (2, quad(5.0))], cam100)
    assert (r.index == 2).all()
    c = composite({3: np.full((2, 2), 5.0), 1: np.full((2, 2), 5.0), 2: np.full((2, 2), np.inf)})
    assert (c.index == 1).all()


def test_silhouette_examples(cam100):
    cube = apply_pose(unit_cube(), RigidPose(translation=(0, 0, 10)))
    hard = render_silhouette(cube, cam100, 0)
    # front face spans u in [45, 55] at z = 9.5, i.e. about 10.5 px
    assert hard[50, 50] == 1 and hard[10, 10] == 0
    soft = render_silhouette(cube, cam100, 2)
    assert ((soft >= 0) & (soft <= 1)).all()
    assert (soft[48:53, 48:53] > 0.9).all()
    away = apply_pose(unit_cube(), RigidPose(translation=(30, 0, 10)))
    assert not render_silhouette(away, cam100, 2).any()
    with pytest.raises(BehindCameraError):
        render_silhouette(apply_pose(unit_cube(), RigidPose(translation=(0, 0, -5))), cam100, 2)


def test_soft_boundary_pixel_is_half(cam100):
    # right edge at u = 50 + 100 * 2.05 / 10 = 70.5, the centre of column 70
    sil = render_silhouette(quad(10.0, -100, 2.05, -100, 100), cam100, 2)
    assert sil[50, 70] == pytest.approx(0.5, abs=0.1)
    assert soft_falloff(0.0, 2.0) == 0.5
    assert soft_falloff(2.0, 2.0) == pytest.approx(0.95)


@given(poses)
def test_single_mesh_index_matches_hard_silhouette(pose):
    cam = Camera(120.0, 40.0, 40.0, 80, 80)
    m = apply_pose(l_shape(subdivisions=1), pose)
    r = render_depth(m, cam, 1)
    assert np.array_equal(r.index > 0, render_silhouette(m, cam, 0) == 1)
    cov, _ = signed_outline_distance(m, cam)
    assert np.array_equal(cov, r.index > 0)
    z = m.vertices[:, 2]
    d = r.depth[r.index > 0]
    assert (d >= z.min() - 1e-6).all() and (d <= z.max() + 1e-6).all()


@given(poses)
def test_render_is_deterministic(pose):
    cam = Camera(120.0, 40.0, 40.0, 80, 80)
    m = apply_pose(icosphere(1), pose)
    a = render_scene([(1, m), (2, apply_pose(m, RigidPose(translation=(0.3, 0, 0.5))))], cam)
    b = render_scene([(1, m), (2, apply_pose(m, RigidPose(translation=(0.3, 0, 0.5))))], cam)
    assert a.depth.tobytes() == b.depth.tobytes() and a.index.tobytes() == b.index.tobytes()
    s1, s2 = render_silhouette(m, cam, 2), render_silhouette(m, cam, 2)
    assert s1.tobytes() == s2.tobytes()


def test_edge_map_examples():
    z = np.zeros((15, 15))
    assert not edge_map(z, 7).any()
    one = z.copy()
    one[7, 7] = 1
    e = edge_map(one, 7)
    assert e.sum() == 48 and e[7, 7] == 0
    assert not edge_map(np.ones((9, 9)), 7).any()
    for bad in (4, 1):
        with pytest.raises(ConfigError):
            edge_map(one, bad)


@given(st.lists(st.booleans(), min_size=144, max_size=144), st.sampled_from([3, 5, 7]))
def test_edges_lie_outside_the_mask(bits, k):
    m = np.array(bits, dtype=float).reshape(12, 12)
    e = edge_map(m, k)
    assert not (e * m).any()
    assert set(np.unique(e)) <= {0.0, 1.0}
