# uncertainty.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import softmax

from errors import InputError

logger = logging.getLogger(__name__)


class Polarity(str, Enum):
    LOW_MEANS_UNKNOWN = "low_means_unknown"
    HIGH_MEANS_UNKNOWN = "high_means_unknown"


class ScoreMethod(str, Enum):
    MSP = "msp"
    MAXLOGIT = "maxlogit"
    EXTERNAL = "external"


@dataclass(frozen=True, eq=False)
class ScoreField:
    """
    Per-point uncertainty scores. `polarity` says which end of the scale marks
    unknown points: msp and maxlogit are low-means-unknown, an external U-head
    output is high-means-unknown.
    """

    scores: np.ndarray
    polarity: Polarity
    method: ScoreMethod

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(scores)):
            raise InputError("non-finite-input", "scores contain NaN/Inf")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        object.__setattr__(self, "method", ScoreMethod(self.method))

    def __len__(self) -> int:
        return int(self.scores.size)

    def require(self, polarity: Polarity) -> None:
        if self.polarity != polarity:
            raise InputError(
                "polarity-mismatch",
                f"{self.method.value} scores are {self.polarity.value}, need {Polarity(polarity).value}",
            )

    def as_unknown_scores(self) -> "ScoreField":
        """Flip to high_means_unknown: 1 - MSP for msp, negation otherwise."""
        if self.polarity == Polarity.HIGH_MEANS_UNKNOWN:
            return self
        flipped = 1.0 - self.scores if self.method == ScoreMethod.MSP else -self.scores
        return ScoreField(flipped, Polarity.HIGH_MEANS_UNKNOWN, self.method)


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise InputError("dimension-mismatch", f"logits must be N x C with C >= 2, got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InputError("non-finite-input", "logits contain NaN/Inf")
    return logits


def msp_scores(logits: np.ndarray) -> ScoreField:
    logits = _check_logits(logits)
    # scipy's softmax subtracts the row max before exponentiating
    probs = softmax(logits, axis=1)
    return ScoreField(probs.max(axis=1), Polarity.LOW_MEANS_UNKNOWN, ScoreMethod.MSP)


def maxlogit_scores(logits: np.ndarray) -> ScoreField:
    logits = _check_logits(logits)
    return ScoreField(logits.max(axis=1), Polarity.LOW_MEANS_UNKNOWN, ScoreMethod.MAXLOGIT)


def compute_scores(logits: np.ndarray, method: str) -> ScoreField:
    method = ScoreMethod(method)
    if method == ScoreMethod.MSP:
        return msp_scores(logits)
    if method == ScoreMethod.MAXLOGIT:
        return maxlogit_scores(logits)
    raise InputError("invalid-spec", "external scores are loaded from a file, not computed")


def predict_open_set(logits: np.ndarray, unknown_scores: ScoreField, threshold: float) -> np.ndarray:
    """
    Closed-set argmax, replaced by the unknown label C wherever the unknown
    score reaches the threshold (score == threshold counts as unknown).
    """
    logits = _check_logits(logits)
    unknown_scores.require(Polarity.HIGH_MEANS_UNKNOWN)
    if len(unknown_scores) != logits.shape[0]:
        raise InputError(
            "dimension-mismatch", f"{len(unknown_scores)} scores for {logits.shape[0]} logit rows"
        )
    labels = np.argmax(logits, axis=1).astype(np.int64)
    labels[unknown_scores.scores >= threshold] = logits.shape[1]
    return labels
