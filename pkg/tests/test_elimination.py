import numpy as np
import pytest

from raypose import InvalidInputError, RankDeficiencyError, build_elimination
from raypose.bench import SceneConfig, generate_scene, trial_rng
from raypose.elimination import _stack_A


def _scene(n=6, seed=0, identity=False):
    return generate_scene(SceneConfig(n_correspondences=n,
                                      identity_transform=identity), trial_rng(seed, 0))


def test_closed_matches_dense():
    for seed in range(10):
        corrs, _ = _scene(n=5, seed=seed)
        closed = build_elimination(corrs, method="closed")
        dense = build_elimination(corrs, method="dense")
        assert np.allclose(closed.U, dense.U, atol=1e-8)
        assert np.allclose(closed.S, dense.S, atol=1e-8)
        assert np.allclose(closed.V, dense.V, atol=1e-8)


def test_matrix_shapes():
    corrs, _ = _scene(n=4)
    elim = build_elimination(corrs)
    assert elim.U.shape == (4, 12)
    assert elim.S.shape == (12,)
    assert elim.V.shape == (3, 12)
    assert elim.b.shape == (12,)


def test_exact_recovery_at_true_rotation():
    # With exact correspondences, plugging in the true rotation must
    # return the true scale/translation and positive depths.
    corrs, truth = _scene(n=6, seed=3)
    elim = build_elimination(corrs)
    alpha, s, t = elim.solve_linear(truth.rotation_matrix())
    assert np.isclose(s, truth.scale, atol=1e-9)
    assert np.allclose(t, truth.translation, atol=1e-8)
    assert np.all(alpha > 0)


def test_normal_equations_residual():
    corrs, truth = _scene(n=7, seed=4)
    elim = build_elimination(corrs)
    R = truth.rotation_matrix()
    alpha, s, t = elim.solve_linear(R)
    A = _stack_A(elim.origins, elim.directions, False)
    x = np.concatenate([alpha, [s], t])
    rhs = (elim.points @ R.T).reshape(-1)
    resid = A.T @ (A @ x - rhs)
    assert np.linalg.norm(resid) < 1e-8


def test_requires_four_correspondences():
    corrs, _ = _scene(n=4)
    with pytest.raises(InvalidInputError):
        build_elimination(corrs[:3])


def test_coincident_origins_raise_with_hint():
    from raypose.geometry import Correspondence, Ray
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(6, 3)) + np.array([0, 0, 5.0])
    corrs = [Correspondence(Ray(np.zeros(3), p), p) for p in pts]
    with pytest.raises(RankDeficiencyError) as err:
        build_elimination(corrs)
    assert err.value.fix_scale_hint


def test_fix_scale_mode_handles_single_origin():
    from raypose.geometry import Correspondence, Ray
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(6, 3)) + np.array([0, 0, 5.0])
    corrs = [Correspondence(Ray(np.zeros(3), p), p) for p in pts]
    elim = build_elimination(corrs, fix_scale=True)
    alpha, s, t = elim.solve_linear(np.eye(3))
    assert s == 1.0
    assert np.allclose(t, 0.0, atol=1e-9)
    assert np.allclose(alpha, np.linalg.norm(pts, axis=1), atol=1e-9)


def test_fix_scale_closed_matches_dense():
    corrs, _ = _scene(n=6, seed=7)
    closed = build_elimination(corrs, fix_scale=True, method="closed")
    dense = build_elimination(corrs, fix_scale=True, method="dense")
    assert np.allclose(closed.U, dense.U, atol=1e-8)
    assert np.allclose(closed.V, dense.V, atol=1e-8)


def test_unknown_method_rejected():
    corrs, _ = _scene(n=4)
    with pytest.raises(InvalidInputError):
        build_elimination(corrs, method="magic")
