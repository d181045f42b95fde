"""Rigid transforms, pinhole projection and 3D object models."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientPoints,
    InvalidSpec,
    NonPositiveDepth,
    UnsupportedFormat,
)

ORTHO_TOL = 1e-9
DEPTH_EPS = 1e-12


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix such that hat(w) @ v == cross(w, v)."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (angle = norm)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        return np.eye(3) + hat(rotvec)
    k = hat(rotvec / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle(R) -> float:
    """Geodesic angle (radians) of a rotation matrix."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + T mapping model points into the camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        T = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise InvalidSpec("pose entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidSpec("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return cls(rodrigues(axis * angle), translation)

    def apply(self, points) -> np.ndarray:
        """Transform a single 3-vector or an (n, 3) array."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: Pose) -> Pose:
        """self after other: x -> self(other(x))."""
        R = orthonormalize(self.rotation @ other.rotation)
        return Pose(R, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(d["rotation"], d["translation"])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidSpec("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("image size must be at least 1x1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def project_camera_points(pc, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points, shape (..., 3) -> (..., 2)."""
    pc = np.asarray(pc, dtype=np.float64)
    z = pc[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth("point at or behind the camera plane")
    u = intrinsics.fx * pc[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * pc[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def project(point, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project model point(s) to pixel coordinates (x = column, y = row)."""
    return project_camera_points(pose.apply(point), intrinsics)


def model_diameter(points) -> float:
    """Exact maximum pairwise distance, O(m^2) in blocks."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise InsufficientPoints("diameter needs at least two points")
    best = 0.0
    block = 1024
    for start in range(0, len(pts), block):
        chunk = pts[start:start + block]
        d2 = np.sum((chunk[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def farthest_point_sample(points, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling starting from points[seed_index].

    Each new pick maximizes the minimum distance to those already chosen;
    np.argmax returns the lowest index on ties.
    """
    pts = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise InvalidSpec("k must be at least 1")
    if k > len(pts):
        raise InsufficientPoints(f"cannot pick {k} points from {len(pts)}")
    if not 0 <= seed_index < len(pts):
        raise InvalidSpec(f"seed_index {seed_index} out of range")
    chosen = [seed_index]
    mind = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    for _ in range(k - 1):
        idx = int(np.argmax(mind))
        chosen.append(idx)
        mind = np.minimum(mind, np.sum((pts - pts[idx]) ** 2, axis=1))
    return pts[chosen].copy()


@dataclass(frozen=True)
class ObjectModel:
    points: np.ndarray
    keypoints: np.ndarray
    diameter: float
    symmetric: bool = False
    name: str = field(default="object", compare=False)

    def __post_init__(self):
        pts = _frozen(self.points)
        kps = _frozen(self.keypoints)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
            raise InsufficientPoints("an object model needs at least 4 3D points")
        if kps.ndim != 2 or kps.shape[1] != 3:
            raise DimensionMismatch("keypoints must be an (K, 3) array")
        if not np.all(np.isfinite(kps)):
            raise InvalidSpec("keypoints must be finite")
        if abs(model_diameter(pts) - float(self.diameter)) > 1e-9:
            raise InvalidSpec("diameter does not match the point set")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "diameter", float(self.diameter))

    @classmethod
    def from_points(cls, points, n_keypoints: int = 8, seed_index: int = 0,
                    symmetric: bool = False, name: str = "object") -> ObjectModel:
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, farthest_point_sample(pts, n_keypoints, seed_index),
                   model_diameter(pts), symmetric, name)


def read_ply(path) -> np.ndarray:
    """Vertex positions from an ASCII PLY file.

    Only the vertex element is read; any extra vertex properties and later
    elements (faces) are skipped.
    """
    lines = Path(path).read_text(encoding="ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise UnsupportedFormat(f"{path}: not a PLY file")
    n_vertex = None
    props: list[str] = []
    elements: list[tuple[str, int]] = []
    current = None
    body = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise UnsupportedFormat(f"{path}: only ASCII PLY is supported, got {tok[1]}")
        elif tok[0] == "element":
            current = tok[1]
            elements.append((tok[1], int(tok[2])))
            if current == "vertex":
                n_vertex = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i + 1
            break
    if body is None or n_vertex is None:
        raise UnsupportedFormat(f"{path}: missing header or vertex element")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise UnsupportedFormat(f"{path}: vertex element lacks x/y/z") from None
    skip = 0
    for name, count in elements:
        if name == "vertex":
            break
        skip += count
    rows = lines[body + skip:body + skip + n_vertex]
    if len(rows) != n_vertex:
        raise UnsupportedFormat(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
    data = np.array([[float(r.split()[c]) for c in cols] for r in rows], dtype=np.float64)
    return data.reshape(n_vertex, 3)


def write_ply(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64)
    out = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
           "property float x", "property float y", "property float z", "end_header"]
    out += [" ".join(repr(float(c)) for c in p) for p in pts]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def load_model(path, keypoints=None, n_keypoints: int = 8, symmetric: bool = False,
               name: str | None = None) -> ObjectModel:
    pts = read_ply(path)
    label = name or Path(path).stem
    if keypoints is None:
        return ObjectModel.from_points(pts, n_keypoints, symmetric=symmetric, name=label)
    return ObjectModel(pts, keypoints, model_diameter(pts), symmetric, label)
