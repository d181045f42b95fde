import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from innovrefine.errors import EmptyMask, InvalidNoiseSpec, StepSizeOutOfRange
from innovrefine.innovation import (
    ExactOracle,
    InnovationField,
    NoiseSpec,
    StepSchedule,
    exact_gradient,
    loss_innov,
    loss_state,
    loss_total,
    noisy_oracle,
    smooth_l1,
)
from innovrefine.vectorfield import PixelGrid, SegmentationMask, VectorFieldState

seeds = st.integers(0, 2 ** 32 - 1)


def _fields(seed, w=4, h=3, k=2, p=0.7):
    rng = np.random.default_rng(seed)
    grid = PixelGrid(w, h)
    m = rng.random((h, w)) < p
    m[0, 0] = True
    mask = SegmentationMask(grid, m)
    return mask, VectorFieldState(rng.normal(size=(k, h, w, 2))), VectorFieldState(rng.normal(size=(k, h, w, 2)))


def _one_pixel():
    return SegmentationMask.full(PixelGrid(1, 1))


def _px(*vecs):
    return VectorFieldState(np.array(vecs, dtype=float).reshape(len(vecs), 1, 1, 2))


def test_gradient_vanishes_at_truth():
    mask, a, _ = _fields(0)
    assert not np.any(exact_gradient(a, a, mask).vectors)


def test_gradient_is_componentwise_difference():
    g = exact_gradient(_px([1, 0]), _px([0, 1]), _one_pixel())
    np.testing.assert_array_equal(g.vectors[0, 0, 0], [1.0, -1.0])


@given(seeds)
def test_gradient_matches_elementwise_loop(seed):
    mask, a, b = _fields(seed)
    g = exact_gradient(a, b, mask).vectors
    for k in range(2):
        for i in range(3):
            for j in range(4):
                for c in range(2):
                    want = a.vectors[k, i, j, c] - b.vectors[k, i, j, c] if mask.membership[i, j] else 0.0
                    assert g[k, i, j, c] == want


@given(seeds)
def test_gradient_antisymmetric(seed):
    mask, a, b = _fields(seed)
    assert np.array_equal(exact_gradient(a, b, mask).vectors, -exact_gradient(b, a, mask).vectors)


def test_degenerate_noise_equals_exact():
    mask, a, b = _fields(3)
    base = ExactOracle(b, mask)
    noisy = noisy_oracle(base, NoiseSpec(0.0, (0.0, 0.0), 0.0, 0))
    assert noisy(a, 0) == base(a, 0)


def test_noisy_oracle_reproducible():
    mask, a, b = _fields(4)
    spec = NoiseSpec(0.1, (0.0, 0.0), 0.0, 5)
    g1 = noisy_oracle(ExactOracle(b, mask), spec)(a, 3)
    g2 = noisy_oracle(ExactOracle(b, mask), spec)(a, 3)
    assert g1 == g2
    assert g1 != noisy_oracle(ExactOracle(b, mask), spec)(a, 4)


def test_noise_magnitude_on_zero_error_state():
    grid = PixelGrid(100, 100)
    mask = SegmentationMask.full(grid)
    x = VectorFieldState.zeros(grid, 1)
    sigma = 0.1
    g = noisy_oracle(ExactOracle(x, mask), NoiseSpec(sigma, (0.0, 0.0), 0.0, 11))(x, 0).vectors[0]
    norms = np.linalg.norm(g, axis=-1).ravel()
    assert norms.size >= 10_000
    # the norm of isotropic 2D Gaussian noise is Rayleigh distributed:
    # root-mean-square sigma*sqrt(2), mean sigma*sqrt(pi/2)
    assert np.sqrt(np.mean(norms ** 2)) == pytest.approx(sigma * np.sqrt(2.0), rel=0.05)
    assert norms.mean() == pytest.approx(sigma * np.sqrt(np.pi / 2.0), rel=0.05)


def test_noise_bias_and_dropout():
    grid = PixelGrid(50, 50)
    mask = SegmentationMask.full(grid)
    x = VectorFieldState.zeros(grid, 1)
    biased = noisy_oracle(ExactOracle(x, mask), NoiseSpec(0.0, (0.2, -0.1), 0.0, 0))(x, 0).vectors
    np.testing.assert_allclose(biased[0].reshape(-1, 2).mean(0), [0.2, -0.1])
    dropped = noisy_oracle(ExactOracle(x, mask), NoiseSpec(0.0, (1.0, 0.0), 0.5, 0))(x, 0).vectors
    frac = np.mean(dropped[0, ..., 0] == 0.0)
    assert 0.45 < frac < 0.55


def test_noisy_output_is_masked():
    mask, a, b = _fields(6, p=0.4)
    g = noisy_oracle(ExactOracle(b, mask), NoiseSpec(0.3, (0.1, 0.1), 0.0, 1))(a, 0).vectors
    assert not np.any(g[:, ~mask.membership])


@pytest.mark.parametrize("kw", [{"sigma": -1.0}, {"dropout_p": 1.5}, {"sigma": float("nan")}])
def test_invalid_noise_spec(kw):
    args = {"sigma": 0.0, "bias": (0.0, 0.0), "dropout_p": 0.0, "seed": 0} | kw
    with pytest.raises(InvalidNoiseSpec):
        NoiseSpec(**args)


@pytest.mark.parametrize("x, want", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_smooth_l1_values(x, want):
    assert smooth_l1(x) == want


def test_smooth_l1_continuous_at_one():
    # second-order one-sided stencils are exact on each (quadratic / linear) branch
    h = 1e-3
    for s in (1.0, -1.0):
        assert abs(smooth_l1(s * (1 - 1e-12)) - smooth_l1(s * (1 + 1e-12))) < 1e-9
        inner = s * (3 * smooth_l1(s) - 4 * smooth_l1(s * (1 - h)) + smooth_l1(s * (1 - 2 * h))) / (2 * h)
        outer = s * (-3 * smooth_l1(s) + 4 * smooth_l1(s * (1 + h)) - smooth_l1(s * (1 + 2 * h))) / (2 * h)
        assert abs(inner - outer) < 1e-9


def test_loss_state_zero_for_identical():
    mask, a, _ = _fields(7)
    assert loss_state(a, a, mask) == 0.0


def test_loss_state_single_pixel():
    assert loss_state(_px([0.5, 0.0]), _px([0.0, 0.0]), _one_pixel()) == 0.125


@given(seeds)
def test_loss_state_matches_scalar_loop(seed):
    mask, a, b = _fields(seed)
    want = 0.0
    for k in range(2):
        for i in range(3):
            for j in range(4):
                if mask.membership[i, j]:
                    for c in range(2):
                        d = abs(a.vectors[k, i, j, c] - b.vectors[k, i, j, c])
                        want += 0.5 * d * d if d < 1 else d - 0.5
    assert loss_state(a, b, mask) == pytest.approx(want, rel=1e-12)


@given(seeds)
def test_loss_state_quadratic_regime(seed):
    mask, a, _ = _fields(seed)
    d = np.random.default_rng(seed).normal(size=a.shape)
    d *= 1e-3 / np.linalg.norm(d, axis=-1, keepdims=True)
    b = VectorFieldState(a.vectors + d)
    quad = 0.5 * float(np.sum((d ** 2)[:, mask.membership]))
    assert abs(loss_state(b, a, mask) - quad) < 1e-8


@given(seeds)
def test_loss_innov_zero_for_exact_prediction(seed):
    mask, a, b = _fields(seed)
    assert loss_innov(exact_gradient(a, b, mask), a, b, mask) == 0.0


def test_loss_innov_zero_gradient_at_truth():
    mask, a, _ = _fields(8)
    zero = InnovationField(np.zeros(a.shape))
    assert loss_innov(zero, a, a, mask) == 0.0


def test_loss_innov_single_pixel():
    pred = InnovationField(np.array([1.0, 0.0]).reshape(1, 1, 1, 2))
    assert loss_innov(pred, _px([0, 0]), _px([0, 0]), _one_pixel()) == 0.5


def test_losses_need_mask():
    grid = PixelGrid(2, 2)
    empty = SegmentationMask(grid, np.zeros((2, 2), bool))
    f = VectorFieldState.zeros(grid, 1)
    with pytest.raises(EmptyMask):
        loss_state(f, f, empty)


def test_loss_total():
    assert loss_total(1.0, 0.2, 10.0) == 3.0
    assert loss_total(1.0, 0.2) == 3.0
    assert loss_total(0.7, 5.0, 0.0) == 0.7
    assert loss_total(0.0, 0.0) == 0.0


def test_step_schedule():
    assert StepSchedule.constant(0.3)(17) == 0.3
    table = StepSchedule.tabulated([0.5, 0.25])
    assert [table(t) for t in range(4)] == [0.5, 0.25, 0.25, 0.25]
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(StepSizeOutOfRange):
            StepSchedule.constant(bad)
    with pytest.raises(StepSizeOutOfRange):
        StepSchedule.tabulated([0.5, 1.2])
