"""Synthetic scene generation and the benchmark protocols.

Scenes put ray origins uniformly in the cube [-1,1]^3 and 3D points
uniformly in [-1,1]x[-1,1]x[2,4]; ray directions are exact unit vectors
from origin to point.  Ground-truth similarities are drawn with per-axis
rotations up to +/-30 degrees, translation distance in [0.5, 10], and
scale in [0.1, 10].  Pixel-sigma noise is mapped to ray space through a
nominal focal length (default 800 px) as two independent Gaussian offsets
in the tangent plane of each direction.

Protocols: numerical stability (minimal noise-free trials), a noise sweep
comparing against the closed-form point-alignment baseline, a scalability
sweep over the correspondence count, and a multi-subset "city" generator
for the merge pipeline.  All outputs are deterministic functions of the
seed; CSV rows carry a runtime column that is zeroed by default so the
data files are byte-reproducible (real timings are returned separately).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .geometry import (Correspondence, DistributedCamera, Quaternion, Ray,
                       SimilarityTransform, apply_similarity,
                       invert_similarity, pose_from_alignment, quat_to_rotation)
from .robust import umeyama_align
from .solver import gdls_solve

CSV_HEADER = ("experiment,method,n,noise_px,rot_err_deg_mean,"
              "trans_err_mean,scale_err_rel_mean,runtime_s_mean,seed")


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of one synthetic trial family."""

    n_correspondences: int = 4
    camera_cube_half_extent: float = 1.0
    point_box_xy: float = 1.0
    point_box_z: Tuple[float, float] = (2.0, 4.0)
    noise_px_sigma: float = 0.0
    focal_px: float = 800.0
    rotation_max_deg: float = 30.0
    translation_range: Tuple[float, float] = (0.5, 10.0)
    scale_range: Tuple[float, float] = (0.1, 10.0)
    identity_transform: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_correspondences < 4:
            raise InvalidInputError("n_correspondences must be at least 4")
        if self.noise_px_sigma < 0:
            raise InvalidInputError("noise_px_sigma must be nonnegative")
        if self.focal_px <= 0:
            raise InvalidInputError("focal_px must be positive")


@dataclass(frozen=True)
class TrialResult:
    """Error metrics of one estimate against ground truth."""

    rotation_error_deg: float
    translation_error: float
    relative_scale_error: float
    runtime_seconds: float = 0.0

    def __post_init__(self):
        for v in (self.rotation_error_deg, self.translation_error, self.relative_scale_error):
            if not (math.isfinite(v) and v >= 0.0):
                raise InvalidInputError(f"error metrics must be finite and >= 0, got {v}")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent per-trial stream; reordering trials changes nothing."""
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def random_similarity(rng: np.random.Generator, config: SceneConfig) -> SimilarityTransform:
    angles = np.radians(rng.uniform(-config.rotation_max_deg, config.rotation_max_deg, 3))
    cx, cy, cz = np.cos(angles)
    sx, sy, sz = np.sin(angles)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    R = Rz @ Ry @ Rx
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    t = d * rng.uniform(*config.translation_range)
    s = rng.uniform(*config.scale_range)
    return SimilarityTransform(Quaternion.from_rotation_matrix(R), t, s)


def generate_scene(config: SceneConfig,
                   rng: Optional[np.random.Generator] = None
                   ) -> Tuple[List[Correspondence], SimilarityTransform]:
    """One synthetic trial: exact correspondences plus the ground truth.

    The returned pose ``(R, t, s)`` satisfies ``s*c_i + alpha_i*d_i =
    R*X_i + t`` exactly for every correspondence (before noise).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_correspondences
    h = config.camera_cube_half_extent
    origins = rng.uniform(-h, h, (n, 3))
    pts_local = np.empty((n, 3))
    pts_local[:, 0] = rng.uniform(-config.point_box_xy, config.point_box_xy, n)
    pts_local[:, 1] = rng.uniform(-config.point_box_xy, config.point_box_xy, n)
    pts_local[:, 2] = rng.uniform(*config.point_box_z, n)
    dirs = pts_local - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    if config.identity_transform:
        truth = SimilarityTransform.identity()
        world = pts_local
    else:
        truth = random_similarity(rng, config)
        R = truth.rotation_matrix()
        world = (truth.scale * pts_local - truth.translation) @ R
    corrs = [Correspondence(Ray(origins[i], dirs[i]), world[i]) for i in range(n)]
    return corrs, truth


def add_noise(correspondences: Sequence[Correspondence], sigma_px: float,
              focal_px: float = 800.0, seed: int = 0,
              rng: Optional[np.random.Generator] = None) -> List[Correspondence]:
    """Perturb each direction by N(0, (sigma/focal)^2) offsets along two
    tangent directions, then renormalize.  sigma 0 returns the input."""
    if sigma_px < 0:
        raise InvalidInputError("sigma_px must be nonnegative")
    if sigma_px == 0.0:
        return list(correspondences)
    if rng is None:
        rng = np.random.default_rng(seed)
    sigma = sigma_px / focal_px
    out = []
    for c in correspondences:
        d = c.ray.direction
        # Any fixed vector not parallel to d seeds the tangent basis.
        a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(d, a)
        u /= np.linalg.norm(u)
        v = np.cross(d, u)
        e1, e2 = rng.normal(0.0, sigma, 2)
        out.append(Correspondence(Ray(c.ray.origin, d + e1 * u + e2 * v),
                                  c.point, score=c.score, point_id=c.point_id))
    return out


def pose_errors(estimate: SimilarityTransform, truth: SimilarityTransform,
                runtime: float = 0.0) -> TrialResult:
    """Rotation angle of R_est R_gt^T (degrees), translation distance, and
    relative scale error."""
    return TrialResult(
        estimate.rotation.angle_deg_to(truth.rotation),
        float(np.linalg.norm(estimate.translation - truth.translation)),
        abs(estimate.scale - truth.scale) / truth.scale,
        runtime,
    )


@dataclass(frozen=True)
class StabilitySummary:
    """Histogram summary of noise-free minimal-trial errors."""

    trials: int
    fraction_below_1e12: float
    fraction_below_1e9: float
    fraction_below_1e6: float
    log10_histogram: Dict[int, int]
    mean_runtime_seconds: float


def _trial_error_scalar(result: TrialResult) -> float:
    return max(result.rotation_error_deg, result.translation_error,
               result.relative_scale_error)


def run_stability(trials: int, seed: int = 0) -> StabilitySummary:
    """Noise-free minimal (n=4) identity-pose trials; errors should sit at
    numerical noise.  Reports the fractions below 1e-12/1e-9/1e-6 and a
    log10 histogram of the worst per-trial metric."""
    if trials < 1:
        raise InvalidInputError("trials must be positive")
    errors = np.empty(trials)
    runtimes = np.empty(trials)
    base = SceneConfig(n_correspondences=4, identity_transform=True)
    for i in range(trials):
        rng = trial_rng(seed, i)
        corrs, truth = generate_scene(base, rng)
        report = gdls_solve(corrs)
        errors[i] = _trial_error_scalar(pose_errors(report.best.transform, truth))
        runtimes[i] = report.runtime_seconds
    logs = np.log10(np.maximum(errors, 1e-300))
    bins, counts = np.unique(np.floor(logs).astype(int), return_counts=True)
    return StabilitySummary(
        trials,
        float(np.mean(errors < 1e-12)),
        float(np.mean(errors < 1e-9)),
        float(np.mean(errors < 1e-6)),
        dict(zip(bins.tolist(), counts.tolist())),
        float(runtimes.mean()),
    )


def _triangulate_midpoints(c1: np.ndarray, d1: np.ndarray,
                           c2: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Midpoint of closest approach between ray pairs, row-wise."""
    w0 = c1 - c2
    b = np.sum(d1 * d2, axis=1)
    d = np.sum(d1 * w0, axis=1)
    e = np.sum(d2 * w0, axis=1)
    denom = np.maximum(1.0 - b * b, 1e-12)
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    return 0.5 * (c1 + s[:, None] * d1 + c2 + t[:, None] * d2)


def run_noise_sweep(levels: Sequence[float] = tuple(range(11)),
                    trials_per_level: int = 1000,
                    methods: Sequence[str] = ("gdls", "umeyama"),
                    n_correspondences: int = 6,
                    seed: int = 0) -> Tuple[List[dict], Dict[str, float]]:
    """Mean errors per (noise level, method) on shared scenes.

    Both methods see identical camera/point configurations per trial.
    The point-alignment baseline is only an alignment method, so it is
    fed a local point cloud triangulated from noisy rays (each point
    seen from its own origin plus one extra origin, both rays carrying
    the same pixel noise).  Returns CSV-ready row dicts plus mean
    runtimes keyed by method (kept out of the rows so the data files
    stay byte-reproducible).
    """
    unknown = set(methods) - {"gdls", "umeyama"}
    if unknown:
        raise InvalidInputError(f"unknown methods: {sorted(unknown)}")
    rows = []
    runtimes = {m: [] for m in methods}
    base = SceneConfig(n_correspondences=n_correspondences)
    for level in levels:
        sums = {m: np.zeros(3) for m in methods}
        for i in range(trials_per_level):
            rng = trial_rng(seed, i * 1000 + int(round(level * 10)))
            corrs, truth = generate_scene(base, rng)
            noisy = add_noise(corrs, level, base.focal_px, rng=rng)
            for m in methods:
                if m == "gdls":
                    report = gdls_solve(noisy)
                    est = report.best.transform
                    runtimes[m].append(report.runtime_seconds)
                else:
                    # Rebuild the true local points, view each from a
                    # second noisy ray, and triangulate.
                    Rt = quat_to_rotation(truth.rotation)
                    n = len(corrs)
                    c1 = np.array([c.ray.origin for c in corrs])
                    local_true = np.array([
                        (Rt @ c.point + truth.translation) / truth.scale
                        for c in corrs])
                    c2 = rng.uniform(-base.camera_cube_half_extent,
                                     base.camera_cube_half_extent, (n, 3))
                    d2 = local_true - c2
                    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
                    extra = add_noise(
                        [Correspondence(Ray(c2[i], d2[i]), corrs[i].point)
                         for i in range(n)], level, base.focal_px, rng=rng)
                    z1 = np.array([c.ray.direction for c in noisy])
                    z2 = np.array([c.ray.direction for c in extra])
                    local = _triangulate_midpoints(c1, z1, c2, z2)
                    world = np.array([c.point for c in corrs])
                    align = umeyama_align(local, world)
                    # Convert the local->world alignment into pose fields.
                    est = pose_from_alignment(align)
                r = pose_errors(est, truth)
                sums[m] += (r.rotation_error_deg, r.translation_error,
                            r.relative_scale_error)
        for m in methods:
            mean = sums[m] / trials_per_level
            rows.append(_row("noise", m, n_correspondences, float(level),
                             mean[0], mean[1], mean[2], seed))
    return rows, {m: float(np.mean(v)) if v else 0.0 for m, v in runtimes.items()}


def run_scalability(n_values: Sequence[int] = (4, 10, 50, 100, 500, 1000),
                    trials: int = 1000, sigma_px: float = 0.5,
                    seed: int = 0) -> Tuple[List[dict], Dict[int, float]]:
    """Mean errors and runtimes as the correspondence count grows."""
    rows = []
    runtimes: Dict[int, float] = {}
    for n in n_values:
        base = SceneConfig(n_correspondences=n)
        sums = np.zeros(3)
        rt = 0.0
        for i in range(trials):
            rng = trial_rng(seed, n * 100000 + i)
            corrs, truth = generate_scene(base, rng)
            noisy = add_noise(corrs, sigma_px, base.focal_px, rng=rng)
            report = gdls_solve(noisy)
            r = pose_errors(report.best.transform, truth)
            sums += (r.rotation_error_deg, r.translation_error, r.relative_scale_error)
            rt += report.runtime_seconds
        mean = sums / trials
        runtimes[n] = rt / trials
        rows.append(_row("scalability", "gdls", n, sigma_px,
                         mean[0], mean[1], mean[2], seed))
    return rows, runtimes


def generate_city(n_subsets: int, cameras_per_subset: int,
                  overlap_fraction: float, noise_px: float, seed: int,
                  points_per_subset: int = 60, focal_px: float = 800.0
                  ) -> Tuple[List[DistributedCamera], List[SimilarityTransform]]:
    """Synthetic multi-subset reconstruction with known subset frames.

    One global scene is laid out along the x axis; adjacent subsets share
    ``round(overlap_fraction * points_per_subset)`` points.  Each subset is
    expressed in a private random similarity frame F_k (the returned truth
    transform maps subset-local coordinates to world).  Ray noise follows
    the pixel model at ``focal_px``.
    """
    if not (0.0 < overlap_fraction < 1.0):
        raise InvalidInputError("overlap_fraction must be in (0, 1)")
    n_shared = int(round(overlap_fraction * points_per_subset))
    if n_shared < 4:
        raise InvalidInputError(
            f"overlap_fraction {overlap_fraction} with {points_per_subset} points "
            f"yields {n_shared} shared points (< 4)")
    if n_subsets < 1 or cameras_per_subset < 1:
        raise InvalidInputError("n_subsets and cameras_per_subset must be positive")
    n_own = points_per_subset - n_shared * (2 if n_subsets > 2 else 1)
    if n_subsets > 1 and n_own < 0:
        raise InvalidInputError("overlap_fraction too large for points_per_subset")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    cfg = SceneConfig()   # reuse the transform ranges for the subset frames

    # Global points along the x axis: each subset holds exactly
    # points_per_subset points, n_shared of them shared with each
    # neighbouring subset.
    def sample_points(count, x_offset):
        nonlocal next_pid
        pts = rng.uniform(-1.0, 1.0, (count, 3))
        pts[:, 0] += x_offset
        pts[:, 2] += 3.0
        block = [(next_pid + i, pts[i]) for i in range(count)]
        next_pid += count
        return block

    next_pid = 0
    shared = {}
    blocks = {}
    for k in range(n_subsets - 1):
        shared[k] = sample_points(n_shared, 3.0 * k + 1.5)
    for k in range(n_subsets):
        pts = []
        if k > 0:
            pts += shared[k - 1]
        if k in shared:
            pts += shared[k]
        pts += sample_points(points_per_subset - len(pts), 3.0 * k)
        blocks[k] = pts

    cameras: List[DistributedCamera] = []
    truths: List[SimilarityTransform] = []
    sigma = noise_px / focal_px
    for k in range(n_subsets):
        frame = random_similarity(rng, cfg)        # subset-local -> world
        inv = invert_similarity(frame)
        pts_local = [(pid, apply_similarity(inv, xyz)) for pid, xyz in blocks[k]]
        centers_world = rng.uniform(-1.0, 1.0, (cameras_per_subset, 3))
        centers_world[:, 0] += 3.0 * k
        cams = []
        obs = []
        Rl = inv.rotation_matrix()
        for j in range(cameras_per_subset):
            cid = f"{k}:{j}"
            center_local = apply_similarity(inv, centers_world[j])
            cams.append((cid, center_local, Quaternion.identity()))
            for pid, xyz_local in pts_local:
                d = xyz_local - center_local
                nrm = np.linalg.norm(d)
                if nrm < 1e-9:
                    continue
                d = d / nrm
                if sigma > 0.0:
                    a = (np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9
                         else np.array([0.0, 1.0, 0.0]))
                    u = np.cross(d, a)
                    u /= np.linalg.norm(u)
                    v = np.cross(d, u)
                    e1, e2 = rng.normal(0.0, sigma, 2)
                    d = d + e1 * u + e2 * v
                    d /= np.linalg.norm(d)
                obs.append((cid, pid, d))
        cameras.append(DistributedCamera(tuple(cams), tuple(pts_local), tuple(obs)))
        truths.append(frame)
    return cameras, truths


def _row(experiment: str, method: str, n: int, noise_px: float,
         rot: float, trans: float, scale: float, seed: int,
         runtime: float = 0.0) -> dict:
    return {"experiment": experiment, "method": method, "n": n,
            "noise_px": noise_px, "rot_err_deg_mean": rot,
            "trans_err_mean": trans, "scale_err_rel_mean": scale,
            "runtime_s_mean": runtime, "seed": seed}


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    """Render rows under the fixed header with 17-significant-digit floats."""
    lines = [CSV_HEADER]
    keys = CSV_HEADER.split(",")
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in keys))
    return "\n".join(lines) + "\n"


def stability_rows(summary: StabilitySummary, seed: int) -> List[dict]:
    """CSV rows for a stability run: one row per reporting threshold.

    The threshold exponent is carried in the noise_px column (0 noise is
    implied by the protocol) and the fraction below it in the rotation
    column, keeping the fixed header."""
    out = []
    for exp, frac in ((-12, summary.fraction_below_1e12),
                      (-9, summary.fraction_below_1e9),
                      (-6, summary.fraction_below_1e6)):
        out.append(_row("stability", "gdls", 4, float(exp), frac, 0.0, 0.0, seed))
    return out
