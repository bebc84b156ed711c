import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hoilayout.errors import EmptyGeometryError, InvalidCameraError, InvalidMeshError
from hoilayout.geometry import (Aabb, Camera, Rect2, RigidPose, TriMesh, WeakPerspective, aabb_of_mesh,
                                aabb_of_points, aabb_overlap, apply_pose, axis_angle_to_matrix,
                                bbox_iou_2d, centroid, compose_poses, geodesic_angle, mask_box,
                                matrix_to_axis_angle, weak_to_perspective)
from hoilayout.primitives import box, icosphere, unit_cube

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
small_rot = st.tuples(*[st.floats(-3, 3)] * 3).map(np.array)
scales = st.floats(0.1, 5.0)


def test_identity_pose_leaves_mesh_unchanged():
    m = unit_cube()
    out = apply_pose(m, RigidPose())
    assert np.array_equal(out.vertices, m.vertices)
    assert np.array_equal(out.faces, m.faces)


def test_scaled_translated_cube_corners():
    out = apply_pose(unit_cube(), RigidPose(translation=[0, 0, 5], scale=2.0))
    b = aabb_of_mesh(out)
    assert b.lo == (-1.0, -1.0, 9.0)
    assert b.hi == (1.0, 1.0, 11.0)


def test_quarter_turn_about_z():
    m = TriMesh(np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), np.array([[0, 1, 2]]))
    out = apply_pose(m, RigidPose(rotation=[0, 0, math.pi / 2]))
    assert np.allclose(out.vertices[0], [0, 1, 0], atol=1e-9)


@pytest.mark.parametrize("wp,f,expected", [
    (WeakPerspective(1.0), 5.0, (0, 0, 5)),
    (WeakPerspective(0.5, 1.0, -2.0), 5.0, (1, -2, 10)),
    (WeakPerspective(2.0), 1.0, (0, 0, 0.5)),
])
def test_weak_to_perspective(wp, f, expected):
    assert np.allclose(weak_to_perspective(wp, f), expected)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_weak_to_perspective_rejects_nonpositive_scale(sigma):
    with pytest.raises(InvalidCameraError):
        weak_to_perspective(WeakPerspective(sigma), 5.0)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_depth_decreases_with_camera_scale(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert weak_to_perspective(WeakPerspective(hi), 7.0)[2] < weak_to_perspective(WeakPerspective(lo), 7.0)[2]


def test_aabb_examples():
    b = aabb_of_mesh(unit_cube())
    assert b.lo == (-0.5,) * 3 and b.hi == (0.5,) * 3
    b = aabb_of_mesh(unit_cube(), 0.1)
    assert np.allclose(b.lo, -0.6) and np.allclose(b.hi, 0.6)
    tri = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    b = aabb_of_mesh(tri)
    assert b.lo == (0, 0, 0) and b.hi == (1, 1, 0)


def test_empty_geometry():
    with pytest.raises(EmptyGeometryError):
        aabb_of_points(np.zeros((0, 3)))
    with pytest.raises(EmptyGeometryError):
        centroid(np.zeros((0, 3)))


def _cube(lo, hi):
    return Aabb((lo,) * 3, (hi,) * 3)


def test_aabb_overlap_examples():
    assert not aabb_overlap(_cube(0, 1), _cube(2, 3))
    assert aabb_overlap(_cube(0, 1), _cube(1, 2))  # touching counts
    assert aabb_overlap(_cube(0, 2), _cube(1, 3))


@given(vec3, vec3, vec3, vec3)
def test_aabb_overlap_symmetric(a, b, c, d):
    x = Aabb(np.minimum(a, b), np.maximum(a, b))
    y = Aabb(np.minimum(c, d), np.maximum(c, d))
    assert aabb_overlap(x, y) == aabb_overlap(y, x)


def test_centroid_examples():
    assert np.allclose(centroid(unit_cube()), 0)
    assert np.allclose(centroid(apply_pose(unit_cube(), RigidPose(translation=[3, 0, 0]))), [3, 0, 0])
    pts = np.array([[0, 0, 0], [2, 4, 6]] * 4, dtype=float)
    assert np.allclose(centroid(pts), [1, 2, 3])


def test_iou_examples():
    a = Rect2(0, 0, 2, 2)
    assert bbox_iou_2d(a, a) == 1.0
    assert bbox_iou_2d(a, Rect2(5, 5, 6, 6)) == 0.0
    assert bbox_iou_2d(a, Rect2(1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert bbox_iou_2d(Rect2(1, 1, 1, 1), Rect2(1, 1, 1, 1)) == 0.0


rects = st.tuples(*[st.floats(0, 50)] * 4).map(
    lambda t: Rect2(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3])))


@given(rects, rects)
def test_iou_bounded_and_symmetric(a, b):
    v = bbox_iou_2d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == bbox_iou_2d(b, a)
    if v == 1.0:
        assert np.allclose(dataclasses.astuple(a), dataclasses.astuple(b), atol=1e-9)


def test_rodrigues_examples():
    assert np.array_equal(axis_angle_to_matrix([0, 0, 0]), np.eye(3))
    assert np.allclose(axis_angle_to_matrix([0, 0, math.pi]) @ [1, 0, 0], [-1, 0, 0], atol=1e-9)


@given(st.tuples(*[st.floats(-1, 1)] * 3), st.floats(0, 2 * math.pi))
def test_rotation_is_orthonormal(axis, angle):
    a = np.array(axis)
    if np.linalg.norm(a) < 1e-3:
        return
    R = axis_angle_to_matrix(a / np.linalg.norm(a) * angle)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


@given(small_rot)
def test_axis_angle_round_trip(w):
    R = axis_angle_to_matrix(w)
    assert geodesic_angle(R, axis_angle_to_matrix(matrix_to_axis_angle(R))) < 1e-6


@given(small_rot, vec3, scales, small_rot, vec3, scales)
def test_composed_pose_matches_sequential(r1, t1, s1, r2, t2, s2):
    m = icosphere(1)
    inner, outer = RigidPose(r1, t1, s1), RigidPose(r2, t2, s2)
    seq = apply_pose(apply_pose(m, inner), outer)
    comp = apply_pose(m, compose_poses(outer, inner))
    assert np.allclose(seq.vertices, comp.vertices, atol=1e-9 * (1 + np.abs(seq.vertices).max()))


def test_pose_canonicalises_large_rotation():
    p = RigidPose(rotation=[0, 0, 2.5 * math.pi])
    assert np.linalg.norm(p.rotation) < 2 * math.pi
    assert np.allclose(p.matrix, axis_angle_to_matrix([0, 0, 0.5 * math.pi]))


def test_pose_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        RigidPose(scale=0.0)


def test_pose_dict_round_trip_is_exact():
    p = RigidPose([0.1, -0.2, 0.3], [1 / 3, 2 / 7, 5.0], 1.1)
    assert RigidPose.from_dict(p.to_dict()).same_as(p)


@pytest.mark.parametrize("faces", [[[0, 1, 5]], [[0, 0, 1]], []])
def test_mesh_invariants(faces):
    with pytest.raises(InvalidMeshError):
        TriMesh(np.zeros((3, 3)), np.array(faces, dtype=int).reshape(-1, 3))


def test_camera_validation():
    with pytest.raises(InvalidCameraError):
        Camera(0.0, 1, 1, 4, 4)
    with pytest.raises(InvalidCameraError):
        Camera(10.0, 4, 1, 4, 4)


def test_mask_box_is_pixel_edge_rect():
    m = np.zeros((10, 10))
    m[2:5, 3:7] = 1
    assert mask_box(m) == Rect2(3, 2, 7, 5)
    assert mask_box(np.zeros((3, 3))) is None


def test_box_watertight():
    assert box((1, 2, 3), subdivisions=3).is_watertight
