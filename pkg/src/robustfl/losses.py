"""Bounded evaluation losses used for moment estimation.

Training uses cross-entropy (see :mod:`robustfl.models`); the losses here are
only evaluated on a trained model to feed the generalization bounds, so each
one is bounded by a known constant ``bound_M``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("zero_one", "jsd_base2", "squared_clamped")

_PROB_ATOL = 1e-9


@dataclass(frozen=True)
class BoundedLoss:
    kind: str = "zero_one"
    bound_M: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind in ("zero_one", "jsd_base2") and self.bound_M != 1.0:
            raise ValueError(f"{self.kind} loss has bound_M fixed at 1, got {self.bound_M}")
        if not self.bound_M > 0:
            raise ValueError(f"bound_M must be positive, got {self.bound_M}")

    @classmethod
    def make(cls, kind: str, bound_M: float | None = None) -> "BoundedLoss":
        if kind == "squared_clamped":
            return cls(kind, 1.0 if bound_M is None else float(bound_M))
        return cls(kind, 1.0)


def _check_distributions(probs: np.ndarray, labels: np.ndarray) -> None:
    if probs.ndim != 2:
        raise ValueError(f"expected a 2-d probability matrix, got shape {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {probs.shape[0]} rows")
    if np.any(probs < 0):
        raise ValueError("predicted distribution has a negative entry")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > _PROB_ATOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"predicted distribution does not sum to 1 (off by {worst:.3g})")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("true label out of range")


def _jsd_onehot_base2(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # JSD(p, e_y) = 1/2 KL(p || m) + 1/2 KL(e_y || m), m = (p + e_y) / 2.
    rows = np.arange(probs.shape[0])
    p_y = probs[rows, labels]
    m_y = 0.5 * (p_y + 1.0)
    kl_onehot = -np.log2(m_y)
    # Off-label coordinates: m_c = p_c / 2, so p_c log2(p_c / m_c) = p_c.
    off_mass = 1.0 - p_y
    on_term = np.where(p_y > 0, p_y * np.log2(np.where(p_y > 0, p_y, 1.0) / m_y), 0.0)
    kl_pred = on_term + off_mass
    jsd = 0.5 * kl_pred + 0.5 * kl_onehot
    return np.clip(jsd, 0.0, 1.0)


def loss_values(loss: BoundedLoss, probs, labels) -> np.ndarray:
    """Per-row loss of predicted distributions against integer labels."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    _check_distributions(probs, labels)
    if loss.kind == "zero_one":
        return (np.argmax(probs, axis=1) != labels).astype(float)
    if loss.kind == "jsd_base2":
        return _jsd_onehot_base2(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return np.minimum(np.sum((probs - onehot) ** 2, axis=1), loss.bound_M)


def compute_loss(loss: BoundedLoss, predicted_distribution, true_label: int) -> float:
    probs = np.asarray(predicted_distribution, dtype=float)[None, :]
    return float(loss_values(loss, probs, np.array([true_label]))[0])
