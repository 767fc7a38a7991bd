import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfl.losses import BoundedLoss, compute_loss, loss_values

# JSD((0.5, 0.5), e_0) in bits, evaluated with mpmath at 50 digits.
JSD_HALF_HALF = 0.311278124459132863909695792039


def test_zero_one_exact_match_is_zero():
    assert compute_loss(BoundedLoss("zero_one"), [0.0, 1.0, 0.0], 1) == 0.0


def test_zero_one_miss_is_one():
    assert compute_loss(BoundedLoss("zero_one"), [0.7, 0.2, 0.1], 2) == 1.0


def test_jsd_identical_distributions_is_zero():
    assert compute_loss(BoundedLoss("jsd_base2"), [0.0, 0.0, 1.0], 2) == pytest.approx(0.0, abs=1e-15)


def test_jsd_half_half_matches_high_precision_value():
    val = compute_loss(BoundedLoss("jsd_base2"), [0.5, 0.5], 0)
    assert 0 < val < 1
    assert val == pytest.approx(JSD_HALF_HALF, abs=1e-14)


def test_jsd_disjoint_support_is_one():
    assert compute_loss(BoundedLoss("jsd_base2"), [0.0, 1.0], 0) == pytest.approx(1.0, abs=1e-15)


def test_squared_clamped_respects_bound():
    loss = BoundedLoss("squared_clamped", 0.5)
    # (1-0)^2 + (0-1)^2 = 2, clamped to 0.5
    assert compute_loss(loss, [0.0, 1.0], 0) == 0.5
    assert compute_loss(loss, [0.9, 0.1], 0) == pytest.approx(0.02)


@pytest.mark.parametrize(
    "probs,label",
    [([0.6, 0.6], 0), ([-0.1, 1.1], 0), ([0.5, 0.5], 2), ([0.5, 0.5], -1)],
)
def test_malformed_inputs_rejected(probs, label):
    with pytest.raises(ValueError):
        compute_loss(BoundedLoss("jsd_base2"), probs, label)


def test_fixed_bound_for_zero_one_and_jsd():
    with pytest.raises(ValueError):
        BoundedLoss("zero_one", 2.0)
    with pytest.raises(ValueError):
        BoundedLoss("jsd_base2", 0.5)
    with pytest.raises(ValueError):
        BoundedLoss("squared_clamped", 0.0)


def _jsd_reference(p, y):
    e = np.zeros_like(p)
    e[y] = 1.0
    m = 0.5 * (p + e)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(e, m)


@settings(max_examples=200, deadline=None)
@given(
    weights=st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=2, max_size=8).filter(lambda w: sum(w) > 1e-3),
    data=st.data(),
)
def test_losses_lie_in_range_and_jsd_matches_definition(weights, data):
    p = np.asarray(weights) / np.sum(weights)
    y = data.draw(st.integers(0, len(p) - 1))
    for kind, M in (("zero_one", 1.0), ("jsd_base2", 1.0), ("squared_clamped", 1.5)):
        val = compute_loss(BoundedLoss(kind, M), p, y)
        assert 0.0 <= val <= M
    assert compute_loss(BoundedLoss("jsd_base2"), p, y) == pytest.approx(_jsd_reference(p, y), abs=1e-12)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(5), size=40)
    labels = rng.integers(0, 5, size=40)
    for kind in ("zero_one", "jsd_base2", "squared_clamped"):
        loss = BoundedLoss(kind)
        vec = loss_values(loss, probs, labels)
        assert np.allclose(vec, [compute_loss(loss, p, y) for p, y in zip(probs, labels)], rtol=0, atol=1e-15)
