"""Second-moment generalization bounds over a Hellinger ball.

For a loss bounded by ``M`` and a reference distribution ``P`` the squared
loss ``L**2`` lives in ``[0, M**2]``.  Given its mean ``E`` and variance ``V``
under ``P``, every ``Q`` with Hellinger distance ``H(P, Q) <= eps`` satisfies

    E_Q[L**2] <= E + 2 lam(eps) sqrt(V) + s(eps) (M**2 - E - V / (M**2 - E))
    E_Q[L**2] >= E - 2 lam(eps) sqrt(V) - s(eps) (E - V / E)

with ``s(eps) = eps**2 (2 - eps**2)`` and
``lam(eps) = sqrt(s(eps) (1 - eps**2)**2)``, as long as ``eps`` is below the
matching radius limit.  The gap between the two bounds summed over a radius
grid is the client's total disagreement ``eta``; aggregation weights are
proportional to ``1 / eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PLUG_IN = "plug_in"
HIGH_PROBABILITY = "high_probability"

ETA_FLOOR = 1e-9

# Slack when validating inputs that come out of floating point pipelines.
_RANGE_TOL = 1e-12


@dataclass(frozen=True)
class MomentEstimate:
    """Mean and variance of the squared loss, plus what they were computed from."""

    mean_sq: float
    var_sq: float
    n: int
    bound_M: float
    mode: str = PLUG_IN
    confidence_delta: float = 1.0

    def __post_init__(self):
        m2 = self.bound_M**2
        if self.n < 1:
            raise ValueError(f"sample count must be positive, got {self.n}")
        if self.bound_M < 0:
            raise ValueError(f"bound_M must be nonnegative, got {self.bound_M}")
        if not (-_RANGE_TOL <= self.mean_sq <= m2 + _RANGE_TOL):
            raise ValueError(f"mean_sq={self.mean_sq} outside [0, M^2={m2}]")
        if self.var_sq < -_RANGE_TOL:
            raise ValueError(f"var_sq must be nonnegative, got {self.var_sq}")
        if self.mode == PLUG_IN and self.var_sq > m2 * m2 / 4 + _RANGE_TOL:
            raise ValueError(f"var_sq={self.var_sq} exceeds M^4/4 for a [0, M^2] variable")
        if self.mode not in (PLUG_IN, HIGH_PROBABILITY):
            raise ValueError(f"unknown moment mode {self.mode!r}")
        if not 0 < self.confidence_delta <= 1:
            raise ValueError(f"confidence_delta must lie in (0, 1], got {self.confidence_delta}")
        # Absorb round-off so downstream formulas see values inside the box.
        object.__setattr__(self, "mean_sq", min(max(float(self.mean_sq), 0.0), m2))
        object.__setattr__(self, "var_sq", max(float(self.var_sq), 0.0))


@dataclass(frozen=True)
class RadiusGrid:
    epsilon_max: float = 0.5
    num_points: int = 10

    def __post_init__(self):
        if not 0 < self.epsilon_max < 1:
            raise ValueError(f"epsilon_max must lie in (0, 1), got {self.epsilon_max}")
        if self.num_points < 1:
            raise ValueError(f"num_points must be positive, got {self.num_points}")

    @property
    def spacing(self) -> float:
        return self.epsilon_max / self.num_points

    @property
    def points(self) -> list[float]:
        return [i * self.spacing for i in range(1, self.num_points + 1)]


@dataclass(frozen=True)
class BoundPair:
    radius: float
    upper: float
    lower: float
    upper_valid: bool
    lower_valid: bool

    @property
    def valid(self) -> bool:
        return self.upper_valid and self.lower_valid

    @property
    def width(self) -> float:
        return abs(self.upper - self.lower)


@dataclass
class DisagreementProfile:
    client_id: object
    per_point: list[tuple[float, float]] = field(default_factory=list)
    eta: float = ETA_FLOOR
    pairs: list[BoundPair] = field(default_factory=list)

    @property
    def all_invalid(self) -> bool:
        return not self.per_point


@dataclass(frozen=True)
class AggregationWeights:
    weights: tuple[float, ...]

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def _as_sample(squared_losses, bound_M: float) -> np.ndarray:
    x = np.asarray(squared_losses, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one squared loss")
    m2 = bound_M**2
    if not np.all(np.isfinite(x)) or x.min() < -_RANGE_TOL or x.max() > m2 + _RANGE_TOL:
        raise ValueError(f"squared losses must lie in [0, M^2={m2}]")
    return x


def empirical_moments(squared_losses, bound_M: float) -> MomentEstimate:
    """Plug-in mean and population variance (divide by n) of squared losses."""
    x = _as_sample(squared_losses, bound_M)
    mean = float(np.mean(x))
    var = float(np.mean((x - mean) ** 2))
    return MomentEstimate(mean, var, int(x.size), float(bound_M))


def _check_delta(confidence_delta: float) -> None:
    if not 0 < confidence_delta <= 1:
        raise ValueError(f"confidence_delta must lie in (0, 1], got {confidence_delta}")


def hoeffding_mean_upper(squared_losses, bound_M: float, confidence_delta: float) -> float:
    """Upper confidence limit on E[L**2], clamped at M**2."""
    _check_delta(confidence_delta)
    x = _as_sample(squared_losses, bound_M)
    slack = bound_M * math.sqrt(math.log(1.0 / confidence_delta) / (2 * x.size))
    return min(float(np.mean(x)) + slack, bound_M**2)


def unbiased_variance(squared_losses) -> float:
    """Pairwise-difference variance estimator, computed in its single-pass form."""
    x = np.asarray(squared_losses, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("the unbiased variance needs at least two samples")
    mean = float(np.mean(x))
    return float(np.sum((x - mean) ** 2)) / (n - 1)


def empirical_bernstein_std_upper(squared_losses, bound_M: float, confidence_delta: float) -> float:
    """Upper confidence limit on sqrt(V[L**2]) (Maurer-Pontil form)."""
    _check_delta(confidence_delta)
    x = _as_sample(squared_losses, bound_M)
    if x.size < 2:
        raise ValueError("empirical Bernstein bound needs n >= 2")
    slack = bound_M**2 * math.sqrt(2 * math.log(1.0 / confidence_delta) / (x.size - 1))
    return math.sqrt(unbiased_variance(x)) + slack


def high_probability_moments(squared_losses, bound_M: float, confidence_delta: float = 0.05) -> MomentEstimate:
    """Moments replaced by their upper confidence limits.

    The variance limit can exceed ``M**4 / 4``; it is kept as is because the
    bounds only get wider (more conservative) with it.
    """
    x = _as_sample(squared_losses, bound_M)
    mean_up = hoeffding_mean_upper(x, bound_M, confidence_delta)
    std_up = empirical_bernstein_std_upper(x, bound_M, confidence_delta) if x.size >= 2 else bound_M**2
    return MomentEstimate(mean_up, std_up**2, int(x.size), float(bound_M), HIGH_PROBABILITY, confidence_delta)


def estimate_moments(squared_losses, bound_M: float, mode: str = PLUG_IN, confidence_delta: float = 0.05) -> MomentEstimate:
    if mode == PLUG_IN:
        return empirical_moments(squared_losses, bound_M)
    if mode == HIGH_PROBABILITY:
        return high_probability_moments(squared_losses, bound_M, confidence_delta)
    raise ValueError(f"unknown moment mode {mode!r}")


def _check_radius(radius: float) -> None:
    if not 0 <= radius < 1:
        raise ValueError(f"radius must lie in [0, 1), got {radius}")


def lambda_epsilon(radius: float) -> float:
    _check_radius(radius)
    e2 = radius * radius
    return math.sqrt(e2 * (2 - e2) * (1 - e2) ** 2)


def _radius_limit(numerator: float, var_sq: float) -> float:
    # eps^2 <= 1 - (1 + (numerator / sqrt(V))^2)^(-1/2)
    if numerator <= 0:
        return 0.0
    if var_sq <= 0:
        return 1.0
    ratio_sq = numerator * numerator / var_sq
    if not math.isfinite(ratio_sq):
        return 1.0
    # 1 - (1 + r)^(-1/2) without cancellation for small r.
    r = ratio_sq
    eps_sq = r / (math.sqrt(1 + r) * (math.sqrt(1 + r) + 1))
    return math.sqrt(eps_sq)


def upper_radius_limit(m: MomentEstimate) -> float:
    return _radius_limit(m.bound_M**2 - m.mean_sq, m.var_sq)


def lower_radius_limit(m: MomentEstimate) -> float:
    return _radius_limit(m.mean_sq, m.var_sq)


def bound_pair(m: MomentEstimate, radius: float) -> BoundPair:
    _check_radius(radius)
    e2 = radius * radius
    shift = e2 * (2 - e2)
    spread = 2 * lambda_epsilon(radius) * math.sqrt(m.var_sq)
    headroom = m.bound_M**2 - m.mean_sq
    # V / headroom and V / mean are defined as 0 where the denominator vanishes
    # (variance is then necessarily 0 as well).
    up_ratio = m.var_sq / headroom if headroom > 0 else 0.0
    low_ratio = m.var_sq / m.mean_sq if m.mean_sq > 0 else 0.0
    upper = m.mean_sq + spread + shift * (headroom - up_ratio)
    lower = m.mean_sq - spread - shift * (m.mean_sq - low_ratio)
    return BoundPair(
        radius=radius,
        upper=upper,
        lower=max(0.0, lower),
        upper_valid=radius <= upper_radius_limit(m),
        lower_valid=radius <= lower_radius_limit(m),
    )


def certified_pair(m: MomentEstimate, radius: float) -> BoundPair:
    """Like :func:`bound_pair`, but past a validity limit the trivial bound is used.

    Beyond its limit the upper formula is replaced by ``M**2`` and the lower one
    by ``0``.  Both formulas reach exactly those values at their limits, so the
    result is continuous in the radius and always certified.
    """
    bp = bound_pair(m, radius)
    upper = bp.upper if bp.upper_valid else m.bound_M**2
    lower = bp.lower if bp.lower_valid else 0.0
    return BoundPair(radius, upper, lower, True, True)


INVALID_POLICIES = ("drop", "trivial")


def disagreement_profile(
    m: MomentEstimate,
    grid: RadiusGrid,
    client_id=None,
    eta_floor: float = ETA_FLOOR,
    invalid: str = "drop",
) -> DisagreementProfile:
    """Bound widths summed over the grid.

    ``invalid="drop"`` skips radii outside either validity limit;
    ``invalid="trivial"`` keeps them with the trivial bound on the invalid side
    (see :func:`certified_pair`).
    """
    if invalid not in INVALID_POLICIES:
        raise ValueError(f"unknown invalid-radius policy {invalid!r}; expected one of {INVALID_POLICIES}")
    pairs = [bound_pair(m, r) for r in grid.points]
    if invalid == "drop":
        per_point = [(bp.radius, bp.width) for bp in pairs if bp.valid]
    else:
        per_point = [(r, certified_pair(m, r).width) for r in grid.points]
    total = math.fsum(sigma for _, sigma in per_point)
    return DisagreementProfile(client_id, per_point, max(total, eta_floor), pairs)


def robust_weights(etas) -> AggregationWeights:
    """Weights proportional to 1 / eta, normalized to sum to one."""
    etas = np.asarray(etas, dtype=float).ravel()
    if etas.size == 0:
        raise ValueError("need at least one eta")
    if not np.all(np.isfinite(etas)) or np.any(etas <= 0):
        raise ValueError("every eta must be a positive finite number")
    # Rescale by the minimum first so tiny etas do not overflow 1 / eta.
    inv = etas.min() / etas
    w = inv / math.fsum(inv)
    return AggregationWeights(tuple(float(v) for v in w))
