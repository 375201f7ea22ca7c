import math

import numpy as np
import pytest

from conftest import central_difference, composite_loss, relative_error
from lassl.errors import ConfigError, ContractError, InsufficientGroupError
from lassl.numeric.network import backward, init_params
from lassl.ssl import (
    BatchViews,
    SslConfig,
    conditional_batch_indices,
    conditional_infonce,
    infonce,
    similarity,
)


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def batch(v1, v2=None):
    v2 = v1 if v2 is None else v2
    return BatchViews(np.arange(len(v1)), v1, v2)


def reference_infonce(v1, v2, tau):
    # per-anchor softmax written out with plain exponentials
    b = len(v1)
    total = 0.0
    for a in range(b):
        pos = math.exp(v1[a] @ v2[a] / tau)
        neg = sum(math.exp(v1[a] @ v2[i] / tau) for i in range(b) if i != a)
        total += -math.log(pos / (pos + neg))
    return total / b


def test_similarity_values():
    e1, e2 = np.eye(2)
    assert similarity(e1, e1, 0.5) == pytest.approx(7.389056, abs=1e-6)
    assert similarity(e1, e2, 0.5) == 1.0
    assert similarity(e1, -e1, 0.5) == pytest.approx(0.135335, abs=1e-6)
    with pytest.raises(ContractError):
        similarity(e1 * 1.01, e2, 0.5)


@pytest.mark.parametrize("b", [2, 8, 128])
def test_identical_projections_give_log_b(b):
    v = np.tile(unit_rows(np.ones((1, 5))), (b, 1))
    assert abs(infonce(batch(v), 0.5) - math.log(b)) < 1e-9
    assert abs(infonce(batch(v), 0.5, symmetrize=True) - math.log(b)) < 1e-9


def test_two_example_arithmetic():
    v1 = np.eye(2)
    expect = -math.log(math.e**2 / (math.e**2 + 1))
    assert abs(infonce(batch(v1), 0.5) - expect) < 1e-12
    assert expect == pytest.approx(0.126928, abs=1e-6)


def test_matches_reference_and_is_nonnegative(rng):
    for _ in range(20):
        v1 = unit_rows(rng.standard_normal((9, 4)))
        v2 = unit_rows(rng.standard_normal((9, 4)))
        got = infonce(batch(v1, v2), 0.3)
        assert got >= 0
        assert abs(got - reference_infonce(v1, v2, 0.3)) < 1e-12


def test_symmetrize_averages_roles(rng):
    v1 = unit_rows(rng.standard_normal((6, 3)))
    v2 = unit_rows(rng.standard_normal((6, 3)))
    sym = infonce(batch(v1, v2), 0.5, symmetrize=True)
    expect = 0.5 * (reference_infonce(v1, v2, 0.5) + reference_infonce(v2, v1, 0.5))
    assert abs(sym - expect) < 1e-12


def test_negative_permutation_invariance(rng):
    v1 = unit_rows(rng.standard_normal((7, 4)))
    v2 = unit_rows(rng.standard_normal((7, 4)))
    logits = v1 @ v2.T / 0.5
    # anchor 0's loss only sees the multiset of its negatives
    perm = np.r_[0, 1 + rng.permutation(6)]
    row = logits[0]
    loss_a = np.log(np.sum(np.exp(row))) - row[0]
    loss_b = np.log(np.sum(np.exp(row[perm]))) - row[perm][0]
    assert abs(loss_a - loss_b) < 1e-12
    # permuting whole examples permutes anchors, leaving the mean unchanged
    p = rng.permutation(7)
    assert abs(infonce(batch(v1[p], v2[p]), 0.5) - infonce(batch(v1, v2), 0.5)) < 1e-12


def test_monotone_in_positive_cosine(rng):
    for _ in range(20):
        v1 = unit_rows(rng.standard_normal((5, 3)))
        v2 = unit_rows(rng.standard_normal((5, 3)))
        closer = v2.copy()
        closer[0] = unit_rows((v2[0] + v1[0])[None])[0]  # raises cos(v1_0, v2_0)
        # anchor 0's negatives are untouched; only its positive moved
        def anchor0(w2):
            lg = v1[0] @ w2.T / 0.5
            return np.log(np.sum(np.exp(lg))) - lg[0]

        if v1[0] @ closer[0] > v1[0] @ v2[0]:
            assert anchor0(closer) < anchor0(v2)


def test_batch_views_contracts():
    with pytest.raises(ContractError):
        BatchViews(np.arange(2), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ContractError):
        BatchViews(np.arange(3), np.eye(2), np.eye(2))
    with pytest.raises(ContractError):
        infonce(batch(np.eye(2)[:1]), 0.5)


def test_config_validation():
    with pytest.raises(ConfigError):
        SslConfig(temperature=0.0)
    with pytest.raises(ConfigError):
        SslConfig(batch_size=1)


def test_conditional_single_group_reduces_to_infonce(rng):
    v1 = unit_rows(rng.standard_normal((4, 3)))
    v2 = unit_rows(rng.standard_normal((4, 3)))
    got = conditional_infonce({0: batch(v1, v2)}, 0.5, 4, np.random.default_rng(0))
    assert abs(got - infonce(batch(v1, v2), 0.5)) < 1e-12


def test_conditional_identical_group_is_log2():
    v = np.tile([[1.0, 0.0]], (5, 1))
    groups = {0: batch(v), 1: batch(v)}
    got = conditional_infonce(groups, 0.5, 2, np.random.default_rng(1), n_batches=10)
    assert abs(got - math.log(2)) < 1e-12


def test_conditional_insufficient_group():
    with pytest.raises(InsufficientGroupError):
        conditional_infonce({0: batch(np.eye(2)[:1])}, 0.5, 2, np.random.default_rng(0))
    with pytest.raises(InsufficientGroupError):
        conditional_batch_indices(np.array([0, 0, 0, 1]), 2, np.random.default_rng(3))


def test_conditional_batch_indices_share_value(rng):
    values = np.repeat(np.arange(4), 10)
    for _ in range(10):
        idx = conditional_batch_indices(values, 6, rng)
        assert len(set(values[idx])) == 1 and len(set(idx)) == 6


@pytest.mark.parametrize("symmetrize", [False, True])
def test_gradient_through_head_matches_fd(rng, symmetrize):
    params = init_params((5, 7, 4), (4, 6, 3), seed=11)
    x1, x2 = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
    loss = composite_loss(params, x1, x2, record=True, symmetrize=symmetrize)
    grads = backward(loss)
    fd = central_difference(lambda p: composite_loss(p, x1, x2, symmetrize=symmetrize), params)
    assert relative_error(grads, fd) < 1e-5
