"""Pose error metrics and percentage-correct aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyModel
from .geometry import CameraIntrinsics, ObjectModel, Pose, project

ADD_THRESHOLD = 0.10  # fraction of the model diameter
PROJ_THRESHOLD_PX = 5.0


def _points(model) -> np.ndarray:
    pts = model.points if isinstance(model, ObjectModel) else np.asarray(model, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("metric evaluated on an empty model")
    return pts


def add_metric(truth: Pose, estimate: Pose, model) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _points(model)
    return float(np.mean(np.linalg.norm(truth.apply(pts) - estimate.apply(pts), axis=1)))


def add_s_metric(truth: Pose, estimate: Pose, model) -> float:
    """Mean closest-point distance, for objects with symmetries. Exact O(m^2)."""
    pts = _points(model)
    a = truth.apply(pts)
    b = estimate.apply(pts)
    mins = np.empty(len(a))
    block = 512
    for s in range(0, len(a), block):
        d2 = np.sum((a[s:s + block, None, :] - b[None, :, :]) ** 2, axis=-1)
        mins[s:s + block] = np.sqrt(d2.min(axis=1))
    return float(mins.mean())


def proj2d_metric(truth: Pose, estimate: Pose, model, intrinsics: CameraIntrinsics) -> float:
    pts = _points(model)
    d = project(pts, truth, intrinsics) - project(pts, estimate, intrinsics)
    return float(np.mean(np.linalg.norm(d, axis=1)))


@dataclass(frozen=True)
class PoseErrorReport:
    add: float
    add_s: float
    proj2d: float
    add_correct: bool
    proj_correct: bool

    def to_dict(self) -> dict:
        return asdict(self)


def judge(add: float, add_s: float, proj2d: float, model: ObjectModel) -> PoseErrorReport:
    """Apply the 10%-of-diameter and 5 px thresholds (strictly less-than)."""
    dist = add_s if model.symmetric else add
    return PoseErrorReport(add, add_s, proj2d,
                           bool(dist < ADD_THRESHOLD * model.diameter),
                           bool(proj2d < PROJ_THRESHOLD_PX))


def evaluate(truth: Pose, estimate: Pose, model: ObjectModel,
             intrinsics: CameraIntrinsics) -> PoseErrorReport:
    return judge(add_metric(truth, estimate, model), add_s_metric(truth, estimate, model),
                 proj2d_metric(truth, estimate, model, intrinsics), model)


@dataclass(frozen=True)
class AggregateReport:
    n_scenes: int
    add_pct: float
    proj_pct: float

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate(reports) -> AggregateReport:
    """Percent correct; a None entry (pose could not be decoded) counts as incorrect."""
    reports = list(reports)
    n = len(reports)
    if n == 0:
        return AggregateReport(0, 0.0, 0.0)
    add_ok = sum(1 for r in reports if r is not None and r.add_correct)
    proj_ok = sum(1 for r in reports if r is not None and r.proj_correct)
    return AggregateReport(n, 100.0 * add_ok / n, 100.0 * proj_ok / n)
