import itertools
import random

import pytest
from hypothesis import given, strategies as st

from streamharness import (
    NoiseModel,
    corrected_loss,
    effective_samples,
    per_token_score,
    sample_budget,
    spearman,
)
from streamharness.errors import InvalidInputError


# -- per-token score -----------------------------------------------------------

def test_per_token_score_definition():
    assert per_token_score(43.0, 63.78) == pytest.approx(43.0 / 63.78)


def test_per_token_score_rejects_nonpositive_tokens():
    with pytest.raises(InvalidInputError):
        per_token_score(50.0, 0.0)


# -- rank correlation ------------------------------------------------------------

def test_spearman_identity_and_reversal():
    assert spearman((1, 2, 3, 4, 5), (1, 2, 3, 4, 5)) == 1.0
    assert spearman((1, 2, 3, 4, 5), (5, 4, 3, 2, 1)) == -1.0


def test_spearman_single_adjacent_swap():
    assert spearman((1, 2, 4, 3, 5), (1, 2, 3, 4, 5)) == pytest.approx(0.9)


def test_spearman_validates_permutations():
    with pytest.raises(InvalidInputError):
        spearman((1, 2, 2), (1, 2, 3))
    with pytest.raises(InvalidInputError):
        spearman((1, 2), (1, 2, 3))
    with pytest.raises(InvalidInputError):
        spearman((1,), (1,))


@given(st.permutations(list(range(1, 8))), st.permutations(list(range(1, 8))))
def test_spearman_symmetry_and_bounds(a, b):
    rho = spearman(a, b)
    assert rho == spearman(b, a)
    assert -1.0 <= rho <= 1.0


@given(st.permutations(list(range(1, 9))))
def test_spearman_self_correlation_is_one(a):
    assert spearman(a, a) == 1.0


# -- noise-corrected loss --------------------------------------------------------

def test_corrected_loss_worked_example():
    noise = NoiseModel(rho_minus=0.1, rho_plus=0.1)
    as_r = corrected_loss(0.8, 0.2, "R", noise)
    as_i = corrected_loss(0.2, 0.8, "I", noise)
    assert as_r == pytest.approx(0.875)
    assert as_i == pytest.approx(0.125)
    # Expectation over the flip process recovers the clean-label loss.
    assert 0.9 * as_r + 0.1 * as_i == pytest.approx(0.8)


def unbiasedness_gap(noise, loss_r, loss_i):
    """Clean truth R: observed label is R w.p. 1-rho_plus, I w.p. rho_plus."""
    expected = (
        (1.0 - noise.rho_plus) * corrected_loss(loss_r, loss_i, "R", noise)
        + noise.rho_plus * corrected_loss(loss_i, loss_r, "I", noise)
    )
    return abs(expected - loss_r)


def test_unbiasedness_identity_on_grid():
    rng = random.Random(11)
    grid = [round(0.05 * k, 2) for k in range(0, 17)]
    for rho_minus, rho_plus in itertools.product(grid, grid):
        if rho_minus + rho_plus > 0.8:
            continue
        noise = NoiseModel(rho_minus=rho_minus, rho_plus=rho_plus)
        for _ in range(20):
            loss_r, loss_i = rng.random(), rng.random()
            assert unbiasedness_gap(noise, loss_r, loss_i) <= 1e-12


@given(
    st.floats(min_value=0.0, max_value=0.45),
    st.floats(min_value=0.0, max_value=0.45),
    st.floats(min_value=0.0, max_value=10.0),
    st.floats(min_value=0.0, max_value=10.0),
)
def test_unbiasedness_identity_property(rho_minus, rho_plus, loss_r, loss_i):
    noise = NoiseModel(rho_minus=rho_minus, rho_plus=rho_plus)
    assert unbiasedness_gap(noise, loss_r, loss_i) <= 1e-9


def test_noise_model_validation():
    with pytest.raises(InvalidInputError):
        NoiseModel(rho_minus=0.6, rho_plus=0.5)
    with pytest.raises(InvalidInputError):
        NoiseModel(rho_minus=-0.1, rho_plus=0.0)


# -- effective samples and budget --------------------------------------------------

def test_effective_samples_examples():
    assert effective_samples(1000, 0.1) == pytest.approx(640.0)
    assert effective_samples(1000, 0.0) == 1000.0


def test_effective_samples_validation():
    with pytest.raises(InvalidInputError):
        effective_samples(10, 0.5)
    with pytest.raises(InvalidInputError):
        effective_samples(-1, 0.1)


def test_sample_budget_increases_with_label_noise():
    grid = [0.01 * k for k in range(0, 50)]
    budgets = [sample_budget(10.0, eps_v, 0.05) for eps_v in grid]
    assert all(b2 > b1 for b1, b2 in zip(budgets, budgets[1:]))


def test_sample_budget_scales_with_inputs():
    base = sample_budget(10.0, 0.1, 0.05)
    assert sample_budget(20.0, 0.1, 0.05) == pytest.approx(2 * base)
    assert sample_budget(10.0, 0.1, 0.05, constant=3.0) == pytest.approx(3 * base)
    assert sample_budget(10.0, 0.1, 0.025) == pytest.approx(4 * base)


def test_sample_budget_validation():
    with pytest.raises(InvalidInputError):
        sample_budget(0.0, 0.1, 0.05)
    with pytest.raises(InvalidInputError):
        sample_budget(10.0, 0.1, 0.0)
