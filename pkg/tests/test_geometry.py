import math

import numpy as np
import pytest

from raypose import (Correspondence, DistributedCamera, InvalidInputError,
                     Quaternion, Ray, SimilarityTransform,
                     alignment_from_pose, apply_similarity,
                     compose_similarity, invert_similarity,
                     merge_distributed_cameras, pose_from_alignment,
                     quat_to_rotation, reprojection_residual)


def random_transform(rng):
    q = Quaternion.from_array(rng.normal(size=4))
    return SimilarityTransform(q, rng.normal(size=3), float(rng.uniform(0.2, 5.0)))


def test_quaternion_normalized_and_sign_canonical():
    q = Quaternion(-2.0, 0.0, 4.0, 0.0)
    assert np.isclose(np.linalg.norm(q.array), 1.0)
    assert q.w > 0  # leading nonzero component made positive
    q2 = Quaternion(0.0, -3.0, 1.0, 0.0)
    assert q2.x > 0


def test_quaternion_matrix_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = Quaternion.from_array(rng.normal(size=4))
        R = q.rotation_matrix()
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0)
        q2 = Quaternion.from_rotation_matrix(R)
        assert np.allclose(q.array, q2.array, atol=1e-12)


def test_quat_to_rotation_even_in_sign():
    a = np.array([0.3, -0.5, 0.2, 0.7])
    assert np.allclose(quat_to_rotation(a), quat_to_rotation(-a))


def test_quaternion_product_matches_matrix_product():
    rng = np.random.default_rng(1)
    q1 = Quaternion.from_array(rng.normal(size=4))
    q2 = Quaternion.from_array(rng.normal(size=4))
    assert np.allclose((q1 * q2).rotation_matrix(),
                       q1.rotation_matrix() @ q2.rotation_matrix(), atol=1e-12)


def test_similarity_group_laws():
    rng = np.random.default_rng(2)
    p = rng.normal(size=3)
    for _ in range(20):
        T1 = random_transform(rng)
        T2 = random_transform(rng)
        lhs = apply_similarity(T2, apply_similarity(T1, p))
        rhs = apply_similarity(compose_similarity(T2, T1), p)
        assert np.allclose(lhs, rhs, atol=1e-10)
        inv = invert_similarity(T1)
        assert np.allclose(apply_similarity(inv, apply_similarity(T1, p)), p, atol=1e-10)


def test_similarity_rejects_nonpositive_scale():
    with pytest.raises(InvalidInputError):
        SimilarityTransform(Quaternion.identity(), np.zeros(3), 0.0)
    with pytest.raises(InvalidInputError):
        SimilarityTransform(Quaternion.identity(), np.zeros(3), -1.0)


def test_alignment_pose_involution():
    rng = np.random.default_rng(3)
    for _ in range(20):
        T = random_transform(rng)
        back = pose_from_alignment(alignment_from_pose(T))
        assert np.allclose(back.rotation.array, T.rotation.array, atol=1e-12)
        assert np.allclose(back.translation, T.translation, atol=1e-10)
        assert np.isclose(back.scale, T.scale)


def test_alignment_maps_local_points_to_world():
    # For a pose (R, t, s) with s*c + alpha*d = R X + t, the local point
    # P = c + (alpha/s) d satisfies X = alignment(P).
    rng = np.random.default_rng(4)
    T = random_transform(rng)
    R = T.rotation_matrix()
    X = rng.normal(size=3)
    c = rng.normal(size=3)
    v = R @ X + T.translation - T.scale * c
    P = c + v / T.scale
    align = alignment_from_pose(T)
    assert np.allclose(apply_similarity(align, P), X, atol=1e-10)


def test_ray_normalizes_direction():
    r = Ray(np.zeros(3), np.array([0.0, 0.0, 5.0]))
    assert np.allclose(r.direction, [0, 0, 1])
    with pytest.raises(InvalidInputError):
        Ray(np.zeros(3), np.zeros(3))


def test_correspondence_score_range():
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    Correspondence(ray, np.ones(3), score=0.5)
    with pytest.raises(InvalidInputError):
        Correspondence(ray, np.ones(3), score=1.5)


def test_reprojection_residual_zero_on_exact():
    rng = np.random.default_rng(5)
    T = random_transform(rng)
    R = T.rotation_matrix()
    X = rng.normal(size=3)
    c = rng.normal(size=3)
    v = R @ X + T.translation - T.scale * c
    corr = Correspondence(Ray(c, v), X)
    ang, depth = reprojection_residual(T, corr)
    assert ang < 1e-9
    assert np.isclose(depth, np.linalg.norm(v))


def test_reprojection_residual_degenerate_point():
    T = SimilarityTransform.identity()
    corr = Correspondence(Ray(np.ones(3), np.array([1.0, 0.0, 0.0])), np.ones(3))
    ang, depth = reprojection_residual(T, corr)
    assert ang == math.pi and depth == 0.0


def _tiny_camera(pid_offset=0, cam_id="a"):
    pts = ((pid_offset, np.array([0.0, 0.0, 3.0])),
           (pid_offset + 1, np.array([1.0, 0.0, 3.0])))
    obs = tuple((cam_id, pid, np.array([0.0, 0.0, 1.0])) for pid, _ in pts)
    return DistributedCamera(((cam_id, np.zeros(3), Quaternion.identity()),), pts, obs)


def test_distributed_camera_validation():
    with pytest.raises(InvalidInputError):
        DistributedCamera((("a", np.zeros(3), Quaternion.identity()),
                           ("a", np.ones(3), Quaternion.identity())), (), ())
    with pytest.raises(InvalidInputError):
        DistributedCamera((), (), (("missing", 0, np.array([0.0, 0.0, 1.0])),))


def test_merge_keeps_base_coordinates_for_shared_points():
    base = _tiny_camera(cam_id="a")
    other = _tiny_camera(cam_id="b")  # same point ids, different frame
    T = SimilarityTransform(Quaternion.identity(), np.array([5.0, 0.0, 0.0]), 2.0)
    merged = merge_distributed_cameras(base, other, T)
    assert merged.point_map[0].tolist() == [0.0, 0.0, 3.0]
    assert len(merged.cameras) == 2
    # other's camera center moved by the similarity
    assert np.allclose(merged.camera_map["b"][0], T.apply(np.zeros(3)))


def test_merge_rejects_camera_id_collision():
    base = _tiny_camera(cam_id="a")
    with pytest.raises(InvalidInputError):
        merge_distributed_cameras(base, _tiny_camera(cam_id="a"),
                                  SimilarityTransform.identity())
