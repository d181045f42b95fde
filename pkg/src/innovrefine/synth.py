"""Synthetic scenes with known pose, and corruption of their vector fields."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidSpec, NonPositiveDepth, SamplingExhausted
from .geometry import (
    CameraIntrinsics,
    ObjectModel,
    Pose,
    load_model,
    project,
    quaternion_to_matrix,
    write_ply,
)
from .vectorfield import (
    PixelGrid,
    SegmentationMask,
    VectorFieldState,
    ground_truth_field,
    read_field,
    write_field,
)

MAX_ATTEMPTS = 1000
CORRUPTION_KINDS = ("none", "angular_noise", "keypoint_shift", "region_scramble")


def box_model(extent=(1.0, 0.7, 0.5), n_points: int = 400, n_keypoints: int = 8,
              seed: int = 0, symmetric: bool = False) -> ObjectModel:
    """Points on the surface of a box with a smaller block glued to one corner.

    The attached block breaks the box's symmetries so ADD is the natural metric.
    """
    rng = np.random.default_rng(seed)
    ex = np.asarray(extent, dtype=np.float64)

    def surface(center, size, count):
        pts = rng.uniform(-0.5, 0.5, size=(count, 3)) * size
        face = rng.integers(0, 3, size=count)
        side = rng.choice([-0.5, 0.5], size=count)
        pts[np.arange(count), face] = side * size[face]
        return pts + center

    main = surface(np.zeros(3), ex, int(n_points * 0.8))
    nub_size = ex * np.array([0.3, 0.4, 0.5])
    nub_center = ex / 2 * np.array([1.0, 1.0, 0.0]) + nub_size / 2 * np.array([1.0, 1.0, 0.0])
    nub = surface(nub_center, nub_size, n_points - len(main))
    pts = np.vstack([main, nub])
    pts -= pts.mean(0)
    return ObjectModel.from_points(pts, n_keypoints, symmetric=symmetric, name="box")


def default_intrinsics(size: int = 32) -> CameraIntrinsics:
    return CameraIntrinsics(1.25 * size, 1.25 * size, (size - 1) / 2.0, (size - 1) / 2.0, size, size)


@dataclass(frozen=True)
class PoseSampler:
    depth_range: tuple[float, float] = (3.0, 5.0)
    center_margin: float = 0.25  # fraction of the image kept free around the projected center

    def sample(self, rng, intrinsics: CameraIntrinsics) -> Pose:
        R = quaternion_to_matrix(rng.normal(size=4))
        z = rng.uniform(*self.depth_range)
        lo_u = self.center_margin * (intrinsics.width - 1)
        lo_v = self.center_margin * (intrinsics.height - 1)
        u = rng.uniform(lo_u, intrinsics.width - 1 - lo_u)
        v = rng.uniform(lo_v, intrinsics.height - 1 - lo_v)
        t = np.array([(u - intrinsics.cx) * z / intrinsics.fx, (v - intrinsics.cy) * z / intrinsics.fy, z])
        return Pose(R, t)

    def to_dict(self) -> dict:
        return {"depth_range": list(self.depth_range), "center_margin": self.center_margin}


@dataclass(frozen=True, eq=False)
class Scene:
    model: ObjectModel
    pose: Pose
    intrinsics: CameraIntrinsics
    grid: PixelGrid
    mask: SegmentationMask
    keypoints2d: np.ndarray
    gt_field: VectorFieldState
    seed: int = 0


def hull_mask(points2d, grid: PixelGrid) -> SegmentationMask:
    """Pixel centers inside the convex hull of the given 2D points."""
    hull = ConvexHull(points2d)
    centers = grid.pixel_coords().reshape(-1, 2)
    eq = hull.equations
    inside = np.all(centers @ eq[:, :2].T + eq[:, 2] <= 1e-9, axis=1)
    return SegmentationMask(grid, inside.reshape(grid.shape))


def _inside(uv, grid: PixelGrid, intrinsics: CameraIntrinsics) -> bool:
    w = min(grid.width, intrinsics.width) - 1
    h = min(grid.height, intrinsics.height) - 1
    return bool(np.all((uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)))


def generate_scene(model: ObjectModel, sampler: PoseSampler, intrinsics: CameraIntrinsics,
                   grid: PixelGrid, rng_seed: int) -> Scene:
    """Sample a pose that keeps every keypoint visible and build the true field.

    Raises SamplingExhausted after 1000 rejected poses.
    """
    rng = np.random.default_rng(rng_seed)
    for _ in range(MAX_ATTEMPTS):
        pose = sampler.sample(rng, intrinsics)
        try:
            kp2d = project(model.keypoints, pose, intrinsics)
            pts2d = project(model.points, pose, intrinsics)
        except NonPositiveDepth:
            continue
        if not _inside(kp2d, grid, intrinsics):
            continue
        try:
            mask = hull_mask(pts2d, grid)
        except QhullError:
            continue
        if mask.count < 2:
            continue
        field = ground_truth_field(kp2d, grid, mask)
        return Scene(model, pose, intrinsics, grid, mask, kp2d, field, rng_seed)
    raise SamplingExhausted(f"no valid pose in {MAX_ATTEMPTS} attempts (seed {rng_seed})")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "none"
    sigma_deg: float = 0.0
    shifts: tuple = ()
    fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise InvalidSpec(f"unknown corruption kind {self.kind!r}")
        if not (np.isfinite(self.sigma_deg) and self.sigma_deg >= 0):
            raise InvalidSpec("sigma_deg must be finite and >= 0")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidSpec("fraction must lie in [0, 1]")
        shifts = tuple(tuple(float(c) for c in s) for s in self.shifts)
        if any(len(s) != 2 or not np.all(np.isfinite(s)) for s in shifts):
            raise InvalidSpec("shifts must be finite 2-vectors")
        object.__setattr__(self, "shifts", shifts)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma_deg": self.sigma_deg,
                "shifts": [list(s) for s in self.shifts], "fraction": self.fraction,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> CorruptionSpec:
        return cls(d.get("kind", "none"), float(d.get("sigma_deg", 0.0)),
                   tuple(tuple(s) for s in d.get("shifts", ())), float(d.get("fraction", 0.0)),
                   int(d.get("seed", 0)))


def corrupt(scene: Scene, spec: CorruptionSpec, seed: int | None = None) -> VectorFieldState:
    """Initial estimate derived from the true field; unmasked pixels stay zero."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    truth = scene.gt_field.vectors
    inside = scene.mask.membership
    if spec.kind == "none":
        return scene.gt_field
    if spec.kind == "angular_noise":
        if spec.sigma_deg == 0.0:
            return scene.gt_field
        theta = np.deg2rad(rng.normal(0.0, spec.sigma_deg, size=truth.shape[:3]))
        c, s = np.cos(theta), np.sin(theta)
        x, y = truth[..., 0], truth[..., 1]
        out = np.stack([c * x - s * y, s * x + c * y], axis=-1)
        return VectorFieldState(np.where(inside[None, :, :, None], out, 0.0))
    if spec.kind == "keypoint_shift":
        K = scene.gt_field.keypoint_count
        shifts = np.zeros((K, 2))
        if spec.shifts:
            if len(spec.shifts) > K:
                raise InvalidSpec(f"{len(spec.shifts)} shifts for {K} keypoints")
            shifts[:len(spec.shifts)] = spec.shifts
        return ground_truth_field(scene.keypoints2d + shifts, scene.grid, scene.mask)
    # region_scramble
    out = np.array(truth)
    rows, cols = np.nonzero(inside)
    n = int(round(spec.fraction * len(rows)))
    if n == 0:
        return scene.gt_field
    pick = rng.choice(len(rows), size=n, replace=False)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=(truth.shape[0], n))
    out[:, rows[pick], cols[pick], 0] = np.cos(ang)
    out[:, rows[pick], cols[pick], 1] = np.sin(ang)
    return VectorFieldState(out)


def save_scene(directory, scene: Scene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / "model.ply", scene.model.points)
    meta = {
        "seed": scene.seed,
        "model": {"name": scene.model.name, "symmetric": scene.model.symmetric,
                  "diameter": scene.model.diameter, "keypoints": scene.model.keypoints.tolist()},
        "pose": scene.pose.to_dict(),
        "intrinsics": scene.intrinsics.to_dict(),
        "grid": {"width": scene.grid.width, "height": scene.grid.height},
        "mask": scene.mask.to_rle(),
        "keypoints2d": scene.keypoints2d.tolist(),
    }
    (d / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    write_field(d / "field.ivf", scene.gt_field, scene.mask)


def load_scene(directory) -> Scene:
    d = Path(directory)
    meta = json.loads((d / "scene.json").read_text())
    m = meta["model"]
    model = load_model(d / "model.ply", keypoints=m["keypoints"], symmetric=bool(m["symmetric"]),
                       name=m.get("name"))
    field, _ = read_field(d / "field.ivf")
    grid = PixelGrid(int(meta["grid"]["width"]), int(meta["grid"]["height"]))
    return Scene(model, Pose.from_dict(meta["pose"]), CameraIntrinsics.from_dict(meta["intrinsics"]),
                 grid, SegmentationMask.from_rle(meta["mask"]), np.array(meta["keypoints2d"]),
                 field, int(meta.get("seed", 0)))
