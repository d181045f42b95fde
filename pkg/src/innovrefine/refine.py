"""Iterative gradient-descent refinement of a vector-field state."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    InnovRefineError,
    InvalidSpec,
    OracleShapeMismatch,
    StepSizeOutOfRange,
)
from .innovation import InnovationField, InnovationOracle, StepSchedule
from .vectorfield import SegmentationMask, VectorFieldState, check_mask, state_distances

DEFAULT_TOL = 1e-4
METRIC_COLUMNS = ("add", "add_s", "proj2d")


@dataclass(frozen=True)
class RefineConfig:
    schedule: StepSchedule
    max_iterations: int
    convergence_tol: float = DEFAULT_TOL
    record_trace: bool = True
    decode_every: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidSpec("max_iterations must be at least 1")
        if not self.convergence_tol >= 0:
            raise InvalidSpec("convergence_tol must be non-negative")
        if self.decode_every < 0:
            raise InvalidSpec("decode_every must be non-negative")


@dataclass
class TraceRow:
    iteration: int
    rho: float
    grad_norm: float
    sd: list[float] | None = None
    pose: object = None
    metrics: dict | None = None
    decode_error: str | None = None


@dataclass
class RefineTrace:
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration if self.rows else 0

    def to_csv(self, path, keypoint_count: int) -> None:
        header = ["iter", "rho", "grad_norm"] + [f"sd_k{k}" for k in range(keypoint_count)]
        header += list(METRIC_COLUMNS)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in self.rows:
                sd = row.sd if row.sd is not None else [None] * keypoint_count
                met = [row.metrics.get(c) if row.metrics else None for c in METRIC_COLUMNS]
                w.writerow([row.iteration, repr(row.rho), repr(row.grad_norm)]
                           + [_fmt(v) for v in sd] + [_fmt(v) for v in met])


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def sgd_step(state: VectorFieldState, gradient: InnovationField, alpha: float) -> VectorFieldState:
    """One descent step; returns a new state."""
    if not 0.0 < alpha < 1.0:
        raise StepSizeOutOfRange(f"step size {alpha} outside (0, 1)")
    if state.shape != gradient.shape:
        raise DimensionMismatch(f"state {state.shape} vs gradient {gradient.shape}")
    return VectorFieldState(state.vectors - alpha * gradient.vectors)


def interpolation_distance(schedule: StepSchedule, t: int) -> float:
    """Cumulative step length after t iterations.

    Accumulated in decimal from the shortest repr of each step size, so
    alpha=0.01 over 70 steps is exactly 0.7 rather than 0.7000000000000001.
    """
    if t < 0:
        raise InvalidSpec("iteration index must be non-negative")
    if schedule.alpha is not None:
        return float(Decimal(repr(schedule.alpha)) * t)
    total = Decimal(0)
    for u in range(t):
        total += Decimal(repr(schedule(u)))
    return float(total)


def mean_gradient_norm(gradient: InnovationField, mask: SegmentationMask | None) -> float:
    """Mean L2 norm of the per-pixel gradient vectors over the mask and all keypoints."""
    g = gradient.vectors
    norms = np.sqrt(g[..., 0] * g[..., 0] + g[..., 1] * g[..., 1])
    if mask is None:
        return float(norms.mean())
    s = mask.count
    if s == 0:
        return 0.0
    return float((norms * mask.membership).sum()) / (s * len(g))


def refine(
    initial: VectorFieldState,
    oracle: InnovationOracle,
    config: RefineConfig,
    truth: VectorFieldState | None = None,
    mask: SegmentationMask | None = None,
    decode: Callable[[VectorFieldState], tuple[object, dict]] | None = None,
) -> tuple[VectorFieldState, RefineTrace]:
    """Run descent steps until the oracle's gradient vanishes or T steps are spent.

    The oracle is queried at every visited state, including the last, so the
    trace always ends with the gradient norm of the returned state.  ``decode``
    maps a state to ``(pose, metrics)`` and is called on every
    ``decode_every``-th row and on the final row; failures are recorded on the
    row rather than raised.  Without ``record_trace`` only the first and last
    rows are kept.
    """
    if mask is not None:
        check_mask(initial, mask)
    if truth is not None and truth.shape != initial.shape:
        raise DimensionMismatch("truth field shape differs from the initial state")
    if truth is not None and mask is None:
        mask = SegmentationMask.full(initial.grid)

    trace = RefineTrace()
    state = initial
    t = 0
    rho = Decimal(0)
    while True:
        grad = oracle(state, t)
        if not isinstance(grad, InnovationField) or grad.shape != state.shape:
            raise OracleShapeMismatch(f"oracle returned {getattr(grad, 'shape', type(grad))}, "
                                      f"state is {state.shape}")
        gnorm = mean_gradient_norm(grad, mask)
        done = gnorm < config.convergence_tol
        last = done or t == config.max_iterations
        if config.record_trace or last or t == 0:
            row = TraceRow(t, float(rho), gnorm)
            if truth is not None:
                row.sd = state_distances(state, truth, mask)
            if decode is not None and (last or (config.decode_every and t % config.decode_every == 0)):
                _decode_into(row, decode, state)
            trace.rows.append(row)
        if last:
            trace.converged = done
            return state, trace
        alpha = config.schedule(t)
        state = sgd_step(state, grad, alpha)
        rho += Decimal(repr(alpha))
        t += 1


def _decode_into(row: TraceRow, decode, state) -> None:
    try:
        row.pose, row.metrics = decode(state)
    except InnovRefineError as exc:
        row.decode_error = f"{type(exc).__name__}: {exc}"
