"""Composite training objective: weighted binary cross-entropy plus a
weighted multi-label soft-margin term, each with its own per-AU weight
vector.

Both terms weight the full per-class BCE-with-logits expression
multiplicatively and average over classes and batch; they are computed in
the overflow-safe form max(x, 0) - x*y + log(1 + exp(-|x|)), so logits of
+/-500 are handled exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from .feature_store import N_AUS

# Per-AU loss weights, in the AU_NAMES order.
DEFAULT_BCE_WEIGHTS = (1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 6.0, 6.0, 5.0, 1.0, 5.0)
DEFAULT_MULTILABEL_WEIGHTS = (1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 6.0, 6.0, 6.0, 1.0, 2.0)


def _as_weight_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (N_AUS,):
        raise ValueError(f"weight vector must have shape ({N_AUS},), got {w.shape}")
    if (w <= 0).any():
        raise ValueError("loss weights must all be positive")
    return w


@dataclass
class LossWeights:
    bce: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BCE_WEIGHTS))
    multilabel: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_MULTILABEL_WEIGHTS))

    def __post_init__(self):
        self.bce = _as_weight_vector(self.bce)
        self.multilabel = _as_weight_vector(self.multilabel)


def _validate(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape != labels.shape:
        raise ValueError(f"logits shape {logits.shape} != labels shape {labels.shape}")
    if logits.ndim != 2 or logits.shape[1] != N_AUS:
        raise ValueError(f"expected (batch, {N_AUS}) arrays, got {logits.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1 (filter -1 frames before training)")
    return logits, labels.astype(np.float64)


def _bce_terms(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Elementwise -y*log(sigmoid(x)) - (1-y)*log(sigmoid(-x)), stable form."""
    return np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))


def weighted_bce(logits, labels, weights) -> float:
    """Mean over batch and classes of w_j * BCE(logit_ij, label_ij)."""
    logits, labels = _validate(logits, labels)
    w = _as_weight_vector(weights)
    return float(np.mean(_bce_terms(logits, labels) * w))


def weighted_multilabel_softmargin(logits, labels, weights) -> float:
    """Per sample, the class-mean of w_j * BCE terms; then the batch mean."""
    logits, labels = _validate(logits, labels)
    w = _as_weight_vector(weights)
    per_sample = np.mean(_bce_terms(logits, labels) * w, axis=1)
    return float(np.mean(per_sample))


def total_loss(logits, labels, weights: LossWeights) -> float:
    """weighted_bce(bce weights) + weighted_multilabel_softmargin(multilabel weights)."""
    return weighted_bce(logits, labels, weights.bce) + weighted_multilabel_softmargin(
        logits, labels, weights.multilabel
    )


def total_loss_grad(logits, labels, weights: LossWeights) -> np.ndarray:
    """Exact d(total_loss)/d(logits); both terms share d(BCE)/dx = sigmoid(x) - y."""
    logits, labels = _validate(logits, labels)
    combined = weights.bce + weights.multilabel
    n_batch = logits.shape[0]
    return (sigmoid(logits) - labels) * combined / (N_AUS * n_batch)
