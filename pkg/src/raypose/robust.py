"""Robust estimation wrappers and the closed-form absolute-orientation baseline.

``ransac_gdls`` runs a hypothesize-and-verify loop with minimal samples
of 4 correspondences, angular inlier scoring, adaptive termination, and
a final non-minimal re-estimate on the inlier set.  With
``use_prosac=True`` minimal samples are drawn from progressively growing
prefixes of the correspondences sorted by match score (Chum-Matas
progressive sampling).

``umeyama_align`` is the closed-form least-squares similarity between two
3D point sets, used as the comparison baseline in the noise experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySolutionError, InvalidInputError, RankDeficiencyError
from .geometry import Correspondence, Quaternion, SimilarityTransform
from .solver import gdls_solve


@dataclass(frozen=True)
class RobustConfig:
    """Knobs of the robust loop.  The defaults are artifact configuration,
    not protocol constants; the 0.5 degree angular threshold corresponds
    to roughly 2 px at an 800 px focal length."""

    angular_inlier_threshold: float = 8.7e-3   # radians
    max_iterations: int = 1000
    confidence: float = 0.99
    min_inliers: int = 10
    sample_size: int = 4
    use_prosac: bool = False

    def __post_init__(self):
        if not self.angular_inlier_threshold > 0:
            raise InvalidInputError("angular_inlier_threshold must be positive")
        if not (0.0 < self.confidence < 1.0):
            raise InvalidInputError("confidence must be in (0, 1)")
        if self.sample_size < 4:
            raise InvalidInputError("sample_size must be at least 4")


@dataclass(frozen=True)
class RobustResult:
    """Outcome of a robust estimation run.

    ``success`` is False when no model reached ``min_inliers``; the
    transform is then None and ``failure_reason`` says why.
    """

    success: bool
    transform: Optional[SimilarityTransform]
    inlier_indices: np.ndarray
    iterations_run: int
    inlier_ratio: float
    mean_angular_error: float = float("nan")
    failure_reason: Optional[str] = None


def angular_residuals(T: SimilarityTransform, origins: np.ndarray,
                      directions: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorized reprojection angles (radians) for correspondence arrays."""
    R = T.rotation_matrix()
    pred = points @ R.T + T.translation - T.scale * origins
    norms = np.linalg.norm(pred, axis=1)
    ok = norms > 1e-12
    cosang = np.full(len(norms), -1.0)
    cosang[ok] = np.sum(pred[ok] * directions[ok], axis=1) / norms[ok]
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def prosac_order(correspondences: Sequence[Correspondence]) -> np.ndarray:
    """Stable descending sort by match score.

    Falls back to the identity permutation when fewer than half of the
    correspondences carry a score (missing scores rank last otherwise).
    """
    n = len(correspondences)
    scored = sum(1 for c in correspondences if c.score is not None)
    if scored < (n + 1) // 2:
        return np.arange(n)
    keys = np.array([c.score if c.score is not None else -1.0 for c in correspondences])
    return np.argsort(-keys, kind="stable")


def _prosac_prefix_schedule(n: int, m: int, max_iterations: int) -> np.ndarray:
    """Prefix size n_t for each iteration t (standard growth function)."""
    t_n = float(max_iterations)
    for i in range(m):
        t_n *= (m - i) / (n - i)
    sizes = np.empty(max_iterations, dtype=int)
    n_star = m
    t_prime = 1.0
    t_full = t_n
    for t in range(max_iterations):
        while t + 1 > t_prime and n_star < n:
            t_next = t_full * (n_star + 1) / (n_star + 1 - m)
            t_prime += math.ceil(t_next - t_full)
            t_full = t_next
            n_star += 1
        sizes[t] = n_star
    return sizes


def ransac_gdls(
    correspondences: Sequence[Correspondence],
    config: RobustConfig = RobustConfig(),
    seed: int = 0,
) -> RobustResult:
    """Robust similarity estimation from ray-point correspondences.

    Deterministic for a fixed (input, seed).  Models are scored by inlier
    count with mean angular error as the tie-break; the final model is
    re-estimated on all inliers with a single non-minimal solve and the
    returned inlier set is re-scored under that final transform.
    """
    n = len(correspondences)
    m = config.sample_size
    if n < m:
        raise InvalidInputError(f"need at least {m} correspondences, got {n}")
    origins = np.array([c.ray.origin for c in correspondences])
    directions = np.array([c.ray.direction for c in correspondences])
    points = np.array([c.point for c in correspondences])
    rng = np.random.default_rng(seed)

    if config.use_prosac:
        order = prosac_order(correspondences)
        prefix = _prosac_prefix_schedule(n, m, config.max_iterations)
    else:
        order = np.arange(n)
        prefix = np.full(config.max_iterations, n, dtype=int)

    best_count = 0
    best_mean = float("inf")
    best_inliers: Optional[np.ndarray] = None
    max_iter = config.max_iterations
    t = 0
    while t < max_iter:
        n_t = prefix[t]
        t += 1
        if config.use_prosac and n_t > m:
            # The n_t-th ranked point plus m-1 draws from the prefix above it.
            idx = rng.choice(n_t - 1, size=m - 1, replace=False)
            sample = order[np.concatenate([idx, [n_t - 1]])]
        else:
            sample = order[rng.choice(n_t, size=m, replace=False)]
        try:
            report = gdls_solve([correspondences[i] for i in sample])
        except (RankDeficiencyError, EmptySolutionError):
            continue
        angles = angular_residuals(report.best.transform, origins, directions, points)
        mask = angles < config.angular_inlier_threshold
        count = int(mask.sum())
        mean_err = float(angles[mask].mean()) if count else float("inf")
        if count > best_count or (count == best_count and mean_err < best_mean):
            best_count = count
            best_mean = mean_err
            best_inliers = np.flatnonzero(mask)
            # Adaptive termination from the inlier ratio.
            w = count / n
            if w > 0:
                p_good = w ** m
                if p_good >= 1.0:
                    needed = 1
                else:
                    needed = math.log(1.0 - config.confidence) / math.log(1.0 - p_good)
                max_iter = min(config.max_iterations, max(t, int(math.ceil(needed))))

    if best_inliers is None or best_count < config.min_inliers:
        return RobustResult(False, None, np.array([], dtype=int), t, 0.0,
                            failure_reason=f"best model had {best_count} inliers "
                                           f"(< min_inliers={config.min_inliers})")

    # Non-minimal re-estimate on all inliers, then re-score.
    try:
        report = gdls_solve([correspondences[i] for i in best_inliers])
        transform = report.best.transform
        angles = angular_residuals(transform, origins, directions, points)
        mask = angles < config.angular_inlier_threshold
        if int(mask.sum()) >= best_count:
            best_inliers = np.flatnonzero(mask)
        else:
            # Refit lost inliers; keep the hypothesis inlier set but
            # re-score it so the returned set is consistent.
            transform = None
    except (RankDeficiencyError, EmptySolutionError):
        transform = None
    if transform is None:
        # Fall back to the best minimal hypothesis, rederiving its set.
        report = gdls_solve([correspondences[i] for i in best_inliers])
        transform = report.best.transform
        angles = angular_residuals(transform, origins, directions, points)
        best_inliers = np.flatnonzero(angles < config.angular_inlier_threshold)
    if len(best_inliers) < config.min_inliers:
        return RobustResult(False, None, np.array([], dtype=int), t, 0.0,
                            failure_reason="inlier set collapsed during refinement")
    mean_err = float(angles[best_inliers].mean()) if len(best_inliers) else float("nan")
    return RobustResult(True, transform, best_inliers, t, len(best_inliers) / n, mean_err)


def umeyama_align(points_a: Sequence, points_b: Sequence) -> SimilarityTransform:
    """Closed-form least-squares similarity with ``b ~ s R a + t``.

    Centroid/SVD solution with the determinant-sign correction on the
    smallest singular direction so the rotation is always proper.
    Raises ``RankDeficiencyError`` for collinear or degenerate inputs.
    """
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise InvalidInputError("point sets must both be (n, 3) with equal n")
    if a.shape[0] < 3:
        raise InvalidInputError("at least 3 point pairs required")
    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    da = a - mu_a
    db = b - mu_b
    cov = db.T @ da / a.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    if D[1] < 1e-12 * max(D[0], 1e-300) or D[0] == 0.0:
        raise RankDeficiencyError("point configuration is collinear or degenerate")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_a = float(np.sum(da * da)) / a.shape[0]
    s = float(np.trace(np.diag(D) @ S)) / var_a
    if s <= 0:
        raise RankDeficiencyError("recovered scale is non-positive")
    t = mu_b - s * (R @ mu_a)
    return SimilarityTransform(Quaternion.from_rotation_matrix(R), t, s)
