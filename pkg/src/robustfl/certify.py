"""Check the closed-form bounds against the brute-force worst-case search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import MomentEstimate, bound_pair, lower_radius_limit, upper_radius_limit
from .oracle import random_discrete, worst_case_search

# Radii are placed at these fractions of the smaller validity limit.
DEFAULT_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)

# Keep radii away from 1, where the ball covers almost the whole simplex.
MAX_RADIUS = 0.95


@dataclass(frozen=True)
class CertificationCase:
    instance: int
    radius: float
    oracle_max: float
    oracle_min: float
    upper: float
    lower: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.lower - self.tol <= self.oracle_min and self.oracle_max <= self.upper + self.tol


def moments_of(p) -> MomentEstimate:
    return MomentEstimate(p.mean_sq, p.var_sq, n=len(p.probs), bound_M=p.bound_M)


def certification_radii(m: MomentEstimate, fractions=DEFAULT_FRACTIONS) -> list[float]:
    limit = min(upper_radius_limit(m), lower_radius_limit(m), MAX_RADIUS)
    return [f * limit for f in fractions if f * limit > 0]


def certify(
    count: int = 100,
    seed: int = 0,
    fractions=DEFAULT_FRACTIONS,
    max_support: int = 8,
    num_candidates: int = 100_000,
    tol: float = 1e-6,
) -> list[CertificationCase]:
    """Draw ``count`` random discrete laws and compare oracle extremes with the bounds."""
    rng = np.random.default_rng([seed, 0xCE27])
    cases = []
    for i in range(count):
        p = random_discrete(rng, max_support=max_support)
        m = moments_of(p)
        for j, r in enumerate(certification_radii(m, fractions)):
            bp = bound_pair(m, r)
            hi = worst_case_search(p, r, "max", seed=seed * 7919 + 31 * i + j, num_candidates=num_candidates)
            lo = worst_case_search(p, r, "min", seed=seed * 7919 + 31 * i + j, num_candidates=num_candidates)
            cases.append(CertificationCase(i, r, hi.value, lo.value, bp.upper, bp.lower, tol))
    return cases
