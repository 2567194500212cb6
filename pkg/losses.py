# losses.py
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import log_softmax

from errors import InputError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.001

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise InputError("invalid-spec", f"loss.alpha must be finite and >= 0, got {self.alpha}")


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross entropy and its gradient w.r.t. the logits."""
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n:
        raise InputError("dimension-mismatch", f"{labels.size} labels for {n} rows")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise InputError("label-out-of-range", f"label {labels[bad[0]]} outside [0, {c})", location=f"point {bad[0]}")
    logp = log_softmax(logits, axis=1)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError("non-finite-input", f"{name} contain NaN/Inf")
    return arr


def closed_set_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    logits = _finite("logits", logits)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise InputError("dimension-mismatch", f"logits must be N x C, got {logits.shape}")
    return _cross_entropy(logits, labels)


def pseudo_loss(
    logits: np.ndarray, u_scores: np.ndarray, pseudo_labels: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Cross entropy over [logits | u_scores]; label C addresses the appended
    unknown column. Returns (loss, d/d logits, d/d u_scores).
    """
    logits = _finite("logits", logits)
    u = _finite("u_scores", u_scores).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] == 0 or u.size != logits.shape[0]:
        raise InputError("dimension-mismatch", f"logits {logits.shape} vs u_scores {u.shape}")
    joint = np.concatenate([logits, u[:, None]], axis=1)
    loss, grad = _cross_entropy(joint, pseudo_labels)
    return loss, grad[:, :-1], grad[:, -1]


def total_oss_loss(closed: float, pseudo: float, config: LossConfig) -> float:
    return float(closed) + config.alpha * float(pseudo)
