"""Innovation (state-gradient) fields, the oracles producing them, and training losses.

An oracle is any callable ``oracle(state, t) -> InnovationField``.  The learned
network that would normally play this role is replaced here by the analytic
gradient against a known ground-truth field, optionally degraded by noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import (
    EmptyMask,
    InvalidNoiseSpec,
    InvalidSpec,
    StepSizeOutOfRange,
)
from .vectorfield import (
    SegmentationMask,
    VectorFieldState,
    _Field,
    check_compatible,
    check_mask,
)


class InnovationField(_Field):
    """Estimated gradient of the per-pixel squared state error, same layout as the state."""

    __slots__ = ()


class InnovationOracle(Protocol):
    def __call__(self, state: VectorFieldState, t: int) -> InnovationField: ...


@dataclass(frozen=True)
class StepSchedule:
    """Constant step size, or a per-iteration table (last entry repeats)."""

    alpha: float | None = None
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if (self.alpha is None) == (not self.table):
            if self.alpha is None:
                raise InvalidSpec("schedule needs a constant alpha or a table")
            raise InvalidSpec("give either a constant alpha or a table, not both")
        values = [self.alpha] if self.alpha is not None else list(self.table)
        object.__setattr__(self, "table", tuple(float(a) for a in self.table))
        for a in values:
            if not 0.0 < float(a) < 1.0:
                raise StepSizeOutOfRange(f"step size {a} outside (0, 1)")

    @classmethod
    def constant(cls, alpha: float) -> StepSchedule:
        return cls(alpha=float(alpha))

    @classmethod
    def tabulated(cls, values) -> StepSchedule:
        return cls(table=tuple(float(v) for v in values))

    @property
    def mode(self) -> str:
        return "constant" if self.alpha is not None else "table"

    def __call__(self, t: int) -> float:
        if self.alpha is not None:
            return self.alpha
        return self.table[min(t, len(self.table) - 1)]

    def to_dict(self) -> dict:
        if self.alpha is not None:
            return {"mode": "constant", "alpha": self.alpha}
        return {"mode": "table", "values": list(self.table)}


def exact_gradient(estimate: _Field, truth: _Field, mask: SegmentationMask) -> InnovationField:
    """estimate - truth inside the mask, zero outside."""
    check_compatible(estimate, truth)
    check_mask(estimate, mask)
    diff = estimate.vectors - truth.vectors
    return InnovationField(np.where(mask.expand(diff.shape), diff, 0.0))


@dataclass(frozen=True)
class ExactOracle:
    truth: VectorFieldState
    mask: SegmentationMask

    def __call__(self, state: VectorFieldState, t: int = 0) -> InnovationField:
        return exact_gradient(state, self.truth, self.mask)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    bias: tuple[float, float] = (0.0, 0.0)
    dropout_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        bias = tuple(float(b) for b in self.bias)
        object.__setattr__(self, "bias", bias)
        if len(bias) != 2 or not all(np.isfinite(bias)):
            raise InvalidNoiseSpec("bias must be a finite 2-vector")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidNoiseSpec("sigma must be finite and >= 0")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise InvalidNoiseSpec("dropout_p must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "bias": list(self.bias), "dropout_p": self.dropout_p,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> NoiseSpec:
        return cls(float(d.get("sigma", 0.0)), tuple(d.get("bias", (0.0, 0.0))),
                   float(d.get("dropout_p", 0.0)), int(d.get("seed", 0)))


@dataclass(frozen=True)
class NoisyOracle:
    """Exact gradient plus Gaussian noise, a constant bias and per-pixel dropout.

    The random stream for call ``t`` is seeded from ``(seed, t)``, so the
    oracle holds no mutable state and repeated calls are reproducible.
    """

    base: ExactOracle
    noise: NoiseSpec
    seed: int = 0

    def __call__(self, state: VectorFieldState, t: int = 0) -> InnovationField:
        g = self.base(state, t).vectors
        n = self.noise
        if n.sigma == 0.0 and n.bias == (0.0, 0.0) and n.dropout_p == 0.0:
            return InnovationField(g)
        rng = np.random.default_rng([self.seed, t])
        out = g + np.asarray(n.bias)
        if n.sigma > 0.0:
            out = out + rng.normal(0.0, n.sigma, size=g.shape)
        if n.dropout_p > 0.0:
            keep = rng.random(g.shape[1:3]) >= n.dropout_p
            out = out * keep[None, :, :, None]
        return InnovationField(np.where(self.base.mask.expand(g.shape), out, 0.0))


def noisy_oracle(base: ExactOracle, noise: NoiseSpec, rng_seed: int | None = None) -> NoisyOracle:
    if not isinstance(noise, NoiseSpec):
        raise InvalidNoiseSpec(f"expected a NoiseSpec, got {type(noise).__name__}")
    return NoisyOracle(base, noise, noise.seed if rng_seed is None else int(rng_seed))


def smooth_l1(x):
    """Huber-style smooth L1 with unit transition, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    return float(out) if out.ndim == 0 else out


def _masked_smooth_l1_sum(diff: np.ndarray, mask: SegmentationMask) -> float:
    if mask.count == 0:
        raise EmptyMask("loss over an empty mask")
    return float(np.sum(smooth_l1(diff[:, mask.membership, :])))


def loss_state(estimate: _Field, reconstruction: _Field, mask: SegmentationMask) -> float:
    """Smooth-L1 between a state and its autoencoder reconstruction, summed over the mask."""
    check_compatible(estimate, reconstruction)
    check_mask(estimate, mask)
    return _masked_smooth_l1_sum(estimate.vectors - reconstruction.vectors, mask)


def loss_innov(predicted: _Field, estimate: _Field, truth: _Field, mask: SegmentationMask) -> float:
    """Smooth-L1 between a predicted gradient and the true one, summed over the mask."""
    check_compatible(predicted, estimate)
    check_compatible(estimate, truth)
    check_mask(estimate, mask)
    return _masked_smooth_l1_sum(predicted.vectors - (estimate.vectors - truth.vectors), mask)


def loss_total(innov: float, state: float, gamma: float = 10.0) -> float:
    if gamma < 0:
        raise InvalidSpec("gamma must be non-negative")
    return innov + gamma * state
