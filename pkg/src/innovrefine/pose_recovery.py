"""From a vector-field state to an object pose: RANSAC voting, then weighted PnP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateField,
    InsufficientPoints,
    InvalidSpec,
    NoConsensus,
    NoConvergence,
    NonPositiveDepth,
)
from .geometry import CameraIntrinsics, ObjectModel, Pose, orthonormalize, rodrigues
from .vectorfield import ZERO_EPS, SegmentationMask, VectorFieldState, check_mask

PARALLEL_EPS = 1e-9
COV_REG = 1e-6
GN_MAX_ITERS = 100


@dataclass(frozen=True)
class VotingConfig:
    hypothesis_count: int = 128
    inlier_dot_threshold: float = 0.99
    min_inlier_fraction: float = 0.05
    rng_seed: int = 0
    # hypotheses trailing the best inlier fraction by more than this get zero
    # weight; any value >= 1 keeps every hypothesis
    score_margin: float = 0.1

    def __post_init__(self):
        if self.hypothesis_count < 1:
            raise InvalidSpec("hypothesis_count must be at least 1")
        if not -1.0 < self.inlier_dot_threshold < 1.0:
            raise InvalidSpec("inlier_dot_threshold must lie in (-1, 1)")
        if not 0.0 <= self.min_inlier_fraction <= 1.0:
            raise InvalidSpec("min_inlier_fraction must lie in [0, 1]")
        if not self.score_margin >= 0.0:
            raise InvalidSpec("score_margin must be non-negative")

    def to_dict(self) -> dict:
        return {"hypothesis_count": self.hypothesis_count,
                "inlier_dot_threshold": self.inlier_dot_threshold,
                "min_inlier_fraction": self.min_inlier_fraction,
                "rng_seed": self.rng_seed,
                "score_margin": self.score_margin}

    @classmethod
    def from_dict(cls, d: dict) -> VotingConfig:
        return cls(int(d.get("hypothesis_count", 128)), float(d.get("inlier_dot_threshold", 0.99)),
                   float(d.get("min_inlier_fraction", 0.05)), int(d.get("rng_seed", 0)),
                   float(d.get("score_margin", 0.1)))


@dataclass(frozen=True)
class KeypointHypothesis:
    position: np.ndarray
    vote_weight: float


@dataclass(frozen=True)
class LocalizedKeypoint:
    mean: np.ndarray
    covariance: np.ndarray
    inlier_fraction: float

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
                "inlier_fraction": self.inlier_fraction}


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _count_votes(hyp, coords, unit, threshold) -> np.ndarray:
    to_h = hyp[:, None, :] - coords[None, :, :]
    dist = np.linalg.norm(to_h, axis=-1)
    dots = np.einsum("hsc,sc->hs", to_h, unit)
    inlier = dots > threshold * dist
    inlier &= dist > 0.0
    return inlier.sum(axis=1).astype(np.float64)


def generate_hypotheses(coords, unit, count, rng, max_rounds: int = 20) -> np.ndarray:
    """Intersections of ``count`` random non-parallel pixel-ray pairs."""
    n = len(coords)
    found = []
    total = 0
    for _ in range(max_rounds):
        a = rng.integers(0, n, size=count)
        b = rng.integers(0, n, size=count)
        den = _cross2(unit[a], unit[b])
        ok = np.abs(den) >= PARALLEL_EPS
        if not ok.any():
            continue
        a, b, den = a[ok], b[ok], den[ok]
        s = _cross2(coords[b] - coords[a], unit[b]) / den
        found.append(coords[a] + s[:, None] * unit[a])
        total += len(a)
        if total >= count:
            break
    if total == 0:
        raise DegenerateField("all sampled ray pairs are parallel")
    return np.concatenate(found)[:count]


def _usable_rays(field, mask, k):
    check_mask(field, mask)
    vec = field.vectors[k][mask.membership]
    coords = field.grid.pixel_coords()[mask.membership]
    norm = np.linalg.norm(vec, axis=-1)
    usable = norm >= ZERO_EPS
    if usable.sum() < 2:
        raise DegenerateField(f"keypoint {k}: fewer than 2 pixels with a usable direction")
    return coords[usable], vec[usable] / norm[usable, None]


def keypoint_hypotheses(field: VectorFieldState, mask: SegmentationMask, k: int,
                        config: VotingConfig = VotingConfig()) -> list[KeypointHypothesis]:
    """The scored hypotheses that vote_keypoint aggregates, for inspection."""
    coords, unit = _usable_rays(field, mask, k)
    hyp = generate_hypotheses(coords, unit, config.hypothesis_count,
                              np.random.default_rng(config.rng_seed + k))
    votes = _count_votes(hyp, coords, unit, config.inlier_dot_threshold)
    return [KeypointHypothesis(h, float(v)) for h, v in zip(hyp, votes)]


def vote_keypoint(field: VectorFieldState, mask: SegmentationMask, k: int,
                  config: VotingConfig = VotingConfig()) -> LocalizedKeypoint:
    """Localize keypoint k by ray-intersection voting.

    Directions are normalized per pixel, so any positive rescaling of the
    field leaves the result unchanged.  Mean and covariance are taken over
    the hypotheses, weighted by their inlier fractions; hypotheses trailing
    the best one by more than ``score_margin`` are dropped first.  The random
    stream is seeded with ``rng_seed + k``.
    """
    coords, unit = _usable_rays(field, mask, k)
    rng = np.random.default_rng(config.rng_seed + k)
    hyp = generate_hypotheses(coords, unit, config.hypothesis_count, rng)
    ratio = _count_votes(hyp, coords, unit, config.inlier_dot_threshold) / len(coords)
    best = float(ratio.max())
    if best < config.min_inlier_fraction or best == 0.0:
        raise NoConsensus(f"keypoint {k}: best inlier fraction {best:.3f}")
    ratio = np.where(ratio >= best - config.score_margin, ratio, 0.0)
    w = ratio / ratio.sum()
    mean = w @ hyp
    d = hyp - mean
    cov = (w[:, None] * d).T @ d
    cov = 0.5 * (cov + cov.T)
    return LocalizedKeypoint(mean, cov, best)


def kabsch(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing ||R src + T - dst||."""
    ms, md = src.mean(0), dst.mean(0)
    H = (src - ms).T @ (dst - md)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, md - R @ ms


def _reproj_sq(R, T, pts3d, uv, K) -> float:
    pc = pts3d @ R.T + T
    if np.any(pc[:, 2] <= 0):
        return np.inf
    proj = np.stack([K.fx * pc[:, 0] / pc[:, 2] + K.cx, K.fy * pc[:, 1] / pc[:, 2] + K.cy], axis=1)
    return float(np.sum((proj - uv) ** 2))


def _betas_from_lifted(x, N) -> np.ndarray:
    # x holds products beta_m * beta_l for m <= l in row-major order
    b0 = np.sqrt(abs(x[0]))
    if b0 == 0.0:
        return np.zeros(N)
    betas = np.zeros(N)
    betas[0] = b0
    for m in range(1, N):
        betas[m] = x[m] / b0
    return betas


def epnp(pts3d, uv, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Linear pose from control-point null-space combinations.

    Tries null-space dimensions 1..3 (1..2 for planar points), refines each
    set of coefficients with a few Gauss-Newton steps on the control-point
    distances and keeps the one with the lowest reprojection error.
    """
    n = len(pts3d)
    c0 = pts3d.mean(0)
    _, S, Vt = np.linalg.svd(pts3d - c0, full_matrices=False)
    planar = S[2] < 1e-8 * S[0]
    nc = 3 if planar else 4
    axes = [c0 + (S[i] / np.sqrt(n)) * Vt[i] for i in range(nc - 1)]
    ctrl = np.array([c0] + axes)
    B = (ctrl[1:] - c0).T
    rest, *_ = np.linalg.lstsq(B, (pts3d - c0).T, rcond=None)
    alphas = np.column_stack([1.0 - rest.sum(0), rest.T])

    fx, fy, cx, cy = intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy
    M = np.zeros((2 * n, 3 * nc))
    for i in range(n):
        for j in range(nc):
            a = alphas[i, j]
            M[2 * i, 3 * j:3 * j + 3] = [a * fx, 0.0, a * (cx - uv[i, 0])]
            M[2 * i + 1, 3 * j:3 * j + 3] = [0.0, a * fy, a * (cy - uv[i, 1])]
    _, _, Vm = np.linalg.svd(M)
    pairs = [(a, b) for a in range(nc) for b in range(a + 1, nc)]
    d2 = np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in pairs])

    best = None
    for N in range(1, 3 if planar else 4):
        V = Vm[-N:][::-1].reshape(N, nc, 3)
        diffs = np.array([V[:, a] - V[:, b] for a, b in pairs])  # (P, N, 3)
        terms = [(m, l) for m in range(N) for l in range(m, N)]
        L = np.array([[(1.0 if m == l else 2.0) * diffs[p, m] @ diffs[p, l] for m, l in terms]
                      for p in range(len(pairs))])
        x, *_ = np.linalg.lstsq(L, d2, rcond=None)
        betas = _betas_from_lifted(x, N)
        for _ in range(10):
            vecs = np.einsum("n,pnc->pc", betas, diffs)
            r = np.sum(vecs ** 2, axis=1) - d2
            J = 2.0 * np.einsum("pc,pnc->pn", vecs, diffs)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            betas = betas + step
        cc = np.einsum("n,nkc->kc", betas, V)
        pc = alphas @ cc
        if pc[:, 2].mean() < 0:
            pc = -pc
        R, T = kabsch(pts3d, pc)
        err = _reproj_sq(R, T, pts3d, uv, intrinsics)
        if best is None or err < best[0]:
            best = (err, R, T)
    return best[1], best[2]


def _whiteners(covs, count) -> np.ndarray:
    if covs is None:
        return np.repeat(np.eye(2)[None], count, axis=0)
    out = []
    for c in covs:
        W = np.linalg.inv(np.asarray(c, dtype=np.float64) + COV_REG * np.eye(2))
        W = 0.5 * (W + W.T)
        out.append(np.linalg.cholesky(W).T)
    return np.array(out)


def _weighted_residuals(R, T, pts3d, uv, Lw, K):
    pc = pts3d @ R.T + T
    z = pc[:, 2]
    if np.any(z <= 0):
        return None, None, pc
    proj = np.stack([K.fx * pc[:, 0] / z + K.cx, K.fy * pc[:, 1] / z + K.cy], axis=1)
    r = proj - uv
    return np.einsum("kij,kj->ki", Lw, r), r, pc


def gauss_newton_pose(R, T, pts3d, uv, intrinsics, covs=None):
    """Minimize sum_k r_k^T (cov_k + lambda I)^-1 r_k over the pose.

    Rotation increments live in the tangent space (left perturbation) and the
    matrix is re-orthonormalized after each step; steps that raise the cost
    are rejected with Levenberg damping.
    """
    K = intrinsics
    Lw = _whiteners(covs, len(pts3d))
    wr, _, pc = _weighted_residuals(R, T, pts3d, uv, Lw, K)
    if wr is None:
        raise NonPositiveDepth("initial pose puts keypoints behind the camera")
    cost = float(np.sum(wr ** 2))
    lam = 1e-6
    for _ in range(GN_MAX_ITERS):
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        dproj = np.zeros((len(z), 2, 3))
        dproj[:, 0, 0] = K.fx / z
        dproj[:, 0, 2] = -K.fx * x / z ** 2
        dproj[:, 1, 1] = K.fy / z
        dproj[:, 1, 2] = -K.fy * y / z ** 2
        rp = pc - T
        dpc_dw = -np.array([[[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]] for v in rp])
        J = np.concatenate([dproj @ dpc_dw, dproj], axis=2)  # (n, 2, 6)
        Jw = np.einsum("kij,kjl->kil", Lw, J).reshape(-1, 6)
        g = Jw.T @ wr.reshape(-1)
        H = Jw.T @ Jw
        improved = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), -g)
            except np.linalg.LinAlgError:
                raise DegenerateConfiguration("singular normal equations") from None
            Rn = orthonormalize(rodrigues(delta[:3]) @ R)
            Tn = T + delta[3:]
            wn, _, pcn = _weighted_residuals(Rn, Tn, pts3d, uv, Lw, K)
            cn = np.inf if wn is None else float(np.sum(wn ** 2))
            if cn < cost:
                small = cost - cn <= 1e-15 * max(cost, 1.0) or np.linalg.norm(delta) < 1e-14
                R, T, wr, pc, cost = Rn, Tn, wn, pcn, cn
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved or small:
            break
    if not np.isfinite(cost):
        raise NoConvergence("Gauss-Newton diverged")
    return R, T, cost


def solve_pnp(keypoints2d, keypoints3d, intrinsics: CameraIntrinsics) -> Pose:
    """Pose from 2D-3D keypoint correspondences.

    ``keypoints2d`` is a list of LocalizedKeypoint (their covariances weight
    the refinement) or a plain (K, 2) array (identity covariances).
    """
    if len(keypoints2d) and isinstance(keypoints2d[0], LocalizedKeypoint):
        uv = np.array([kp.mean for kp in keypoints2d], dtype=np.float64)
        covs = [kp.covariance for kp in keypoints2d]
    else:
        uv = np.asarray(keypoints2d, dtype=np.float64).reshape(-1, 2)
        covs = [np.eye(2)] * len(uv)
    pts3d = np.asarray(keypoints3d, dtype=np.float64)
    if len(uv) < 4 or len(pts3d) < 4:
        raise InsufficientPoints("PnP needs at least 4 correspondences")
    if len(uv) != len(pts3d):
        raise InvalidSpec("2D and 3D keypoint counts differ")
    S = np.linalg.svd(pts3d - pts3d.mean(0), compute_uv=False)
    if S[1] < 1e-9 * max(S[0], 1e-300):
        raise DegenerateConfiguration("3D keypoints are collinear")
    R0, T0 = epnp(pts3d, uv, intrinsics)
    if not (np.all(np.isfinite(R0)) and np.all(np.isfinite(T0))):
        raise DegenerateConfiguration("linear PnP failed")
    R, T, _ = gauss_newton_pose(R0, T0, pts3d, uv, intrinsics, covs)
    return Pose(orthonormalize(R), T)


def pnp_cost(pose: Pose, keypoints2d, keypoints3d, intrinsics, covs=None) -> float:
    uv = np.asarray(keypoints2d, dtype=np.float64)
    Lw = _whiteners(covs, len(uv))
    wr, _, _ = _weighted_residuals(pose.rotation, pose.translation,
                                   np.asarray(keypoints3d, dtype=np.float64), uv, Lw, intrinsics)
    return np.inf if wr is None else float(np.sum(wr ** 2))


def decode_pose(field: VectorFieldState, mask: SegmentationMask, model: ObjectModel,
                intrinsics: CameraIntrinsics, config: VotingConfig = VotingConfig()
                ) -> tuple[Pose, list[LocalizedKeypoint]]:
    if mask.count < 2:
        raise DegenerateField("mask covers fewer than 2 pixels")
    kps = [vote_keypoint(field, mask, k, config) for k in range(field.keypoint_count)]
    return solve_pnp(kps, model.keypoints, intrinsics), kps
