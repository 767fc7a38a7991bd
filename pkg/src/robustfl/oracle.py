"""Brute-force worst case of E_Q[l**2] over a Hellinger ball of discrete Q.

This module deliberately knows nothing about the closed-form bounds; it only
searches.  Search happens in square-root coordinates: ``psi = sqrt(q)`` lives
on the unit sphere and the ball ``H(p, q) <= r`` is the spherical cap
``<sqrt(p), psi> >= 1 - r**2``.  Every reported value comes from a candidate
that passed an explicit Hellinger feasibility check, so results are inner
approximations of the true extremum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SUPPORT = 12


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray
    loss_values: np.ndarray
    bound_M: float = 1.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).ravel()
        losses = np.asarray(self.loss_values, dtype=float).ravel()
        if probs.shape != losses.shape:
            raise ValueError(f"probs ({probs.size}) and loss_values ({losses.size}) differ in length")
        if not 1 <= probs.size <= MAX_SUPPORT:
            raise ValueError(f"support size must be in [1, {MAX_SUPPORT}], got {probs.size}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")
        if np.any(losses < 0) or np.any(losses > self.bound_M):
            raise ValueError(f"loss values must lie in [0, {self.bound_M}]")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "loss_values", losses)

    @property
    def mean_sq(self) -> float:
        return float(np.dot(self.probs, self.loss_values**2))

    @property
    def var_sq(self) -> float:
        sq = self.loss_values**2
        return float(np.dot(self.probs, (sq - self.mean_sq) ** 2))


@dataclass(frozen=True)
class OracleResult:
    value: float
    q: np.ndarray
    distance: float


def hellinger_distance(p, q) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    bc = float(np.sum(np.sqrt(p * q)))
    return float(np.sqrt(max(0.0, 1.0 - bc)))


def _hellinger_rows(sqrt_p: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    bc = np.sqrt(q_rows) @ sqrt_p
    return np.sqrt(np.maximum(0.0, 1.0 - bc))


def _cap_candidates(sqrt_p: np.ndarray, radius: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points in the Hellinger cap, stratified by angle from sqrt(p)."""
    m = sqrt_p.size
    cos_max = 1.0 - radius * radius
    theta_max = np.arccos(np.clip(cos_max, -1.0, 1.0))
    # Stratify the angle: 200 strata across [0, theta_max], biased to the rim
    # where extrema live.
    strata = 200
    u = (rng.integers(0, strata, size=count) + rng.random(count)) / strata
    theta = theta_max * np.sqrt(u)
    d = rng.standard_normal((count, m))
    # Sparse directions reach vertices and faces of the simplex.
    mask = rng.random((count, m)) < rng.uniform(0.2, 1.0, size=(count, 1))
    d = np.where(mask, d, 0.0)
    d -= np.outer(d @ sqrt_p, sqrt_p)
    norms = np.linalg.norm(d, axis=1)
    ok = norms > 1e-12
    d[ok] /= norms[ok, None]
    d[~ok] = 0.0
    psi = np.cos(theta)[:, None] * sqrt_p[None, :] + np.sin(theta)[:, None] * d
    # |psi| is at least as close to sqrt(p) as psi, since sqrt(p) >= 0.
    q = psi * psi
    return q / q.sum(axis=1, keepdims=True)


def _simplex_candidates(m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    # Dirichlet draws at several concentrations spread over the whole simplex.
    alphas = rng.choice([0.05, 0.2, 1.0, 5.0, 50.0], size=count)
    g = rng.gamma(alphas[:, None], 1.0, size=(count, m))
    g += 1e-300
    return g / g.sum(axis=1, keepdims=True)


def _refine(psi: np.ndarray, sqrt_p: np.ndarray, sq_loss: np.ndarray, cos_min: float, sign: float, tol: float) -> np.ndarray:
    """Pairwise rotations on the sphere, accepted only if feasible and improving."""
    m = psi.size
    if m < 2:
        return psi
    ii, jj = np.triu_indices(m, 1)
    step = 0.1
    best = sign * float(np.dot(psi * psi, sq_loss))
    while step > 1e-10:
        improved = False
        for t in (step, -step):
            c, s = np.cos(t), np.sin(t)
            new_i = c * psi[ii] - s * psi[jj]
            new_j = s * psi[ii] + c * psi[jj]
            delta = (new_i**2 - psi[ii] ** 2) * sq_loss[ii] + (new_j**2 - psi[jj] ** 2) * sq_loss[jj]
            overlap = np.abs(psi) @ sqrt_p
            new_overlap = (
                overlap
                - np.abs(psi[ii]) * sqrt_p[ii]
                - np.abs(psi[jj]) * sqrt_p[jj]
                + np.abs(new_i) * sqrt_p[ii]
                + np.abs(new_j) * sqrt_p[jj]
            )
            gain = sign * delta
            gain[new_overlap < cos_min] = -np.inf
            k = int(np.argmax(gain))
            if gain[k] > tol:
                psi = psi.copy()
                psi[ii[k]], psi[jj[k]] = new_i[k], new_j[k]
                best += float(gain[k])
                improved = True
                break
        if not improved:
            step *= 0.5
    return psi


def worst_case_search(
    p: DiscreteDistribution,
    radius: float,
    direction: str = "max",
    seed: int = 0,
    num_candidates: int = 100_000,
    tol: float = 1e-9,
) -> OracleResult:
    if not 0 < radius < 1:
        raise ValueError(f"radius must lie in (0, 1), got {radius}")
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    sign = 1.0 if direction == "max" else -1.0
    rng = np.random.default_rng(seed)
    sqrt_p = np.sqrt(p.probs)
    sq_loss = p.loss_values**2
    m = sqrt_p.size

    n_cap = (3 * num_candidates) // 4
    cands = np.vstack(
        [
            p.probs[None, :],
            _cap_candidates(sqrt_p, radius, n_cap, rng),
            _simplex_candidates(m, num_candidates - n_cap, rng),
        ]
    )
    feasible = _hellinger_rows(sqrt_p, cands) <= radius
    cands = cands[feasible]
    scores = sign * (cands @ sq_loss)
    # Refine the few best distinct starts.
    order = np.argsort(-scores)[:8]
    cos_min = 1.0 - radius * radius
    best_q = cands[order[0]]
    best_val = scores[order[0]]
    for k in order:
        psi = _refine(np.sqrt(cands[k]), sqrt_p, sq_loss, cos_min, sign, tol)
        q = psi * psi
        q = q / q.sum()
        if hellinger_distance(p.probs, q) > radius:
            continue
        val = sign * float(np.dot(q, sq_loss))
        if val > best_val:
            best_val, best_q = val, q
    return OracleResult(sign * best_val, best_q, hellinger_distance(p.probs, best_q))


def worst_case_expectation(
    p: DiscreteDistribution, radius: float, direction: str = "max", seed: int = 0, num_candidates: int = 100_000
) -> float:
    """Extremal E_Q[l**2] over the ball ``H(p, Q) <= radius`` (inner approximation)."""
    return worst_case_search(p, radius, direction, seed, num_candidates).value


def random_discrete(rng: np.random.Generator, max_support: int = 8, bound_M: float = 1.0) -> DiscreteDistribution:
    m = int(rng.integers(2, max_support + 1))
    probs = rng.dirichlet(np.ones(m))
    probs = probs / probs.sum()
    losses = rng.uniform(0.0, bound_M, size=m)
    return DiscreteDistribution(probs, losses, bound_M)
