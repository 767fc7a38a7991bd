import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfl.bounds import MomentEstimate, bound_pair, lower_radius_limit, upper_radius_limit
from robustfl.certify import certify
from robustfl.oracle import (
    DiscreteDistribution,
    hellinger_distance,
    random_discrete,
    worst_case_expectation,
    worst_case_search,
)

# sqrt(1 - (sqrt(0.45) + sqrt(0.05))), mpmath at 40 digits.
HELLINGER_REF = 0.3249196962329063261558714

FAST = 20_000


def test_hellinger_examples():
    assert hellinger_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert hellinger_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert hellinger_distance([0.5, 0.5], [0.9, 0.1]) == pytest.approx(HELLINGER_REF, abs=1e-15)
    with pytest.raises(ValueError):
        hellinger_distance([0.5, 0.5], [1.0, 0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_hellinger_symmetric_and_bounded(seed, m):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
    h = hellinger_distance(p, q)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(hellinger_distance(q, p), abs=1e-15)


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution([0.5, 0.6], [0.1, 0.2])
    with pytest.raises(ValueError):
        DiscreteDistribution([0.5, 0.5], [0.1, 1.2])
    with pytest.raises(ValueError):
        DiscreteDistribution(np.full(13, 1 / 13), np.zeros(13))


def test_tiny_radius_returns_reference_expectation():
    p = DiscreteDistribution([0.2, 0.5, 0.3], [0.1, 0.6, 0.9])
    for direction in ("max", "min"):
        assert worst_case_expectation(p, 1e-6, direction, num_candidates=FAST) == pytest.approx(p.mean_sq, abs=1e-4)


def test_near_unconstrained_ball_moves_mass_to_loss_one():
    p = DiscreteDistribution([0.5, 0.5], [0.0, 1.0])
    assert worst_case_expectation(p, 0.99, "max", num_candidates=FAST) > 0.999


def test_radius_out_of_range():
    p = DiscreteDistribution([0.5, 0.5], [0.0, 1.0])
    for r in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            worst_case_expectation(p, r)
    with pytest.raises(ValueError):
        worst_case_expectation(p, 0.3, "sideways")


def test_feasibility_sandwich_and_determinism():
    rng = np.random.default_rng(8)
    for _ in range(10):
        p = random_discrete(rng, max_support=12)
        r = float(rng.uniform(0.05, 0.9))
        hi = worst_case_search(p, r, "max", seed=1, num_candidates=FAST)
        lo = worst_case_search(p, r, "min", seed=1, num_candidates=FAST)
        assert hi.distance <= r + 1e-9 and lo.distance <= r + 1e-9
        assert hellinger_distance(p.probs, hi.q) <= r + 1e-9
        assert lo.value <= p.mean_sq + 1e-12 <= hi.value + 2e-12
        again = worst_case_search(p, r, "max", seed=1, num_candidates=FAST)
        assert again.value == hi.value


def test_monotone_in_radius():
    p = DiscreteDistribution([0.1, 0.2, 0.3, 0.4], [0.9, 0.2, 0.5, 0.1])
    radii = [0.05, 0.1, 0.2, 0.4, 0.6]
    hi = [worst_case_expectation(p, r, "max", num_candidates=FAST) for r in radii]
    lo = [worst_case_expectation(p, r, "min", num_candidates=FAST) for r in radii]
    assert all(b >= a - 1e-9 for a, b in zip(hi, hi[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(lo, lo[1:]))


def test_oracle_finds_two_point_extremum():
    # Two atoms: the max over the cap puts psi on the rim toward the loss-1 atom,
    # which is solvable by hand: q_1 = sin^2(phi + theta), phi = pi/4, cos(theta) = 1 - r^2.
    r = 0.3
    p = DiscreteDistribution([0.5, 0.5], [0.0, 1.0])
    theta = np.arccos(1 - r * r)
    exact = np.sin(np.pi / 4 + theta) ** 2
    assert worst_case_expectation(p, r, "max") == pytest.approx(exact, abs=1e-8)


def test_matching_moment_example_inside_bounds():
    # mean_sq = 0.3, var_sq = 0.02 realized by squared losses 0.3 +/- sqrt(0.02) with equal mass.
    s = np.sqrt(0.02)
    losses = np.sqrt([0.3 - s, 0.3 + s])
    p = DiscreteDistribution([0.5, 0.5], losses)
    m = MomentEstimate(p.mean_sq, p.var_sq, 2, 1.0)
    assert m.mean_sq == pytest.approx(0.3) and m.var_sq == pytest.approx(0.02)
    bp = bound_pair(m, 0.2)
    assert bp.valid
    assert bp.lower - 1e-6 <= worst_case_expectation(p, 0.2, "min") <= worst_case_expectation(p, 0.2, "max") <= bp.upper + 1e-6


def test_random_instances_inside_bounds_at_80_percent_of_limit():
    rng = np.random.default_rng(21)
    for i in range(5):
        p = random_discrete(rng)
        m = MomentEstimate(p.mean_sq, p.var_sq, len(p.probs), 1.0)
        r = 0.8 * min(upper_radius_limit(m), lower_radius_limit(m))
        bp = bound_pair(m, r)
        assert worst_case_expectation(p, r, "max", seed=i) <= bp.upper + 1e-6
        assert worst_case_expectation(p, r, "min", seed=i) >= bp.lower - 1e-6


def test_certify_small_run():
    cases = certify(count=3, seed=4, num_candidates=FAST)
    assert len(cases) == 15
    assert all(c.passed for c in cases)
