"""Per-pixel keypoint direction fields, masks and the state distance."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyMask, InvalidSpec, UnsupportedFormat

ZERO_EPS = 1e-12
IVF_MAGIC = b"IVF1"


@dataclass(frozen=True)
class PixelGrid:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("grid dimensions must be at least 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_coords(self) -> np.ndarray:
        """(M, N, 2) array of pixel centers as (x=column, y=row)."""
        rows, cols = np.mgrid[0:self.height, 0:self.width]
        return np.stack([cols, rows], axis=-1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    grid: PixelGrid
    membership: np.ndarray

    def __post_init__(self):
        m = np.array(self.membership, dtype=bool)
        if m.shape != self.grid.shape:
            raise DimensionMismatch(f"mask shape {m.shape} != grid {self.grid.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "membership", m)

    @property
    def count(self) -> int:
        return int(self.membership.sum())

    def expand(self, shape: tuple[int, ...]) -> np.ndarray:
        """Membership broadcast to a (K, M, N, 2) field shape, cached per shape."""
        cache = self.__dict__.setdefault("_expanded", {})
        if shape not in cache:
            full = np.ascontiguousarray(np.broadcast_to(self.membership[None, :, :, None], shape))
            full.setflags(write=False)
            cache[shape] = full
        return cache[shape]

    @classmethod
    def full(cls, grid: PixelGrid) -> SegmentationMask:
        return cls(grid, np.ones(grid.shape, dtype=bool))

    def __eq__(self, other):
        return (isinstance(other, SegmentationMask) and self.grid == other.grid
                and np.array_equal(self.membership, other.membership))

    def to_rle(self) -> dict:
        """Row-major run lengths, alternating starting with a run of False."""
        flat = self.membership.ravel()
        counts = []
        value = False
        run = 0
        for b in flat:
            if bool(b) == value:
                run += 1
            else:
                counts.append(run)
                value = not value
                run = 1
        counts.append(run)
        return {"height": self.grid.height, "width": self.grid.width, "counts": counts}

    @classmethod
    def from_rle(cls, rle: dict) -> SegmentationMask:
        grid = PixelGrid(int(rle["width"]), int(rle["height"]))
        flat = np.zeros(grid.width * grid.height, dtype=bool)
        pos = 0
        value = False
        for c in rle["counts"]:
            flat[pos:pos + c] = value
            pos += c
            value = not value
        if pos != flat.size:
            raise UnsupportedFormat("mask RLE does not cover the grid")
        return cls(grid, flat.reshape(grid.shape))


class _Field:
    """Shared storage: float64 array of shape (K, M, N, 2), keypoint-major."""

    __slots__ = ("vectors",)

    def __init__(self, vectors):
        v = np.array(vectors, dtype=np.float64)
        if v.ndim != 4 or v.shape[-1] != 2:
            raise DimensionMismatch(f"field must have shape (K, M, N, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidSpec("field entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __reduce__(self):
        return (type(self), (np.array(self.vectors),))

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(self.vectors.shape[2], self.vectors.shape[1])

    @property
    def keypoint_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.vectors.shape

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.vectors, other.vectors)

    def __repr__(self):
        k, m, n, _ = self.vectors.shape
        return f"{type(self).__name__}(K={k}, M={m}, N={n})"


class VectorFieldState(_Field):
    """Per-pixel unit directions toward each keypoint (or a refined estimate thereof)."""

    __slots__ = ()

    @classmethod
    def zeros(cls, grid: PixelGrid, keypoint_count: int) -> VectorFieldState:
        return cls(np.zeros((keypoint_count, grid.height, grid.width, 2)))


def check_compatible(a: _Field, b: _Field) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"field shapes differ: {a.shape} vs {b.shape}")


def check_mask(field: _Field, mask: SegmentationMask) -> None:
    if field.grid != mask.grid:
        raise DimensionMismatch(f"mask grid {mask.grid} != field grid {field.grid}")


def ground_truth_field(keypoints, grid: PixelGrid, mask: SegmentationMask) -> VectorFieldState:
    """Unit vectors from every masked pixel center toward each 2D keypoint."""
    if mask.grid != grid:
        raise DimensionMismatch("mask does not match grid")
    kps = np.asarray(keypoints, dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 2:
        raise DimensionMismatch("keypoints must be an (K, 2) array")
    eta = kps[:, None, None, :] - grid.pixel_coords()[None]
    norm = np.linalg.norm(eta, axis=-1, keepdims=True)
    ok = (norm >= ZERO_EPS) & mask.membership[None, :, :, None]
    out = np.where(ok, eta / np.where(norm >= ZERO_EPS, norm, 1.0), 0.0)
    return VectorFieldState(out)


def state_distance(estimate: _Field, truth: _Field, mask: SegmentationMask, k: int) -> float:
    """Mean squared vector error of keypoint k over the mask."""
    check_compatible(estimate, truth)
    check_mask(estimate, mask)
    s = mask.count
    if s == 0:
        raise EmptyMask("state distance over an empty mask")
    diff = estimate.vectors[k][mask.membership] - truth.vectors[k][mask.membership]
    sq = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
    # sequential left-to-right sum in index order
    return float(np.add.accumulate(sq)[-1]) / s


def state_distances(estimate: _Field, truth: _Field, mask: SegmentationMask) -> list[float]:
    """state_distance for every keypoint at once (same sequential summation order)."""
    check_compatible(estimate, truth)
    check_mask(estimate, mask)
    s = mask.count
    if s == 0:
        raise EmptyMask("state distance over an empty mask")
    diff = np.where(mask.expand(estimate.shape), estimate.vectors - truth.vectors, 0.0)
    sq = (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]).reshape(len(diff), -1)
    # adding the exact zeros outside the mask leaves the running sum unchanged
    return [float(v) / s for v in np.add.accumulate(sq, axis=1)[:, -1]]


def write_field(path, field: _Field, mask: SegmentationMask | None = None) -> None:
    """Binary field file plus a JSON sidecar holding the mask RLE."""
    path = Path(path)
    k, m, n, _ = field.shape
    with open(path, "wb") as f:
        f.write(IVF_MAGIC)
        f.write(struct.pack("<III", m, n, k))
        f.write(np.ascontiguousarray(field.vectors, dtype="<f8").tobytes())
    if mask is not None:
        sidecar = {"mask": mask.to_rle(), "keypoint_count": k}
        path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def read_field(path) -> tuple[VectorFieldState, SegmentationMask | None]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != IVF_MAGIC:
        raise UnsupportedFormat(f"{path}: bad magic {raw[:4]!r}")
    m, n, k = struct.unpack("<III", raw[4:16])
    expected = 16 + 8 * 2 * k * m * n
    if len(raw) != expected:
        raise UnsupportedFormat(f"{path}: size {len(raw)} != expected {expected}")
    vec = np.frombuffer(raw, dtype="<f8", offset=16).reshape(k, m, n, 2)
    sidecar = path.with_suffix(".json")
    mask = None
    if sidecar.exists():
        mask = SegmentationMask.from_rle(json.loads(sidecar.read_text())["mask"])
    return VectorFieldState(vec), mask
