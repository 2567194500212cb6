# distillation.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from errors import InputError
from pointset import LabelKind, LabelSet

logger = logging.getLogger(__name__)

NOT_NOVEL = -1
# floor for target probabilities inside the log ratio; one-hot rows have exact zeros
TARGET_CLAMP = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    """Novel classes occupy labels novel_label_offset .. novel_label_offset + n_novel - 1."""

    temperature: float = 2.0
    n_novel: int = 1
    novel_label_offset: int = 13

    def __post_init__(self):
        _check_temperature(self.temperature)
        if self.n_novel < 1:
            raise InputError("invalid-spec", f"distill.n_novel must be >= 1, got {self.n_novel}")
        if self.novel_label_offset < 1:
            raise InputError("invalid-spec", f"novel label offset must be >= 1, got {self.novel_label_offset}")

    @property
    def width(self) -> int:
        return self.novel_label_offset + self.n_novel


def _check_temperature(t: float) -> None:
    if not (math.isfinite(t) and t > 0):
        raise InputError("nonpositive-temperature", f"temperature must be finite and > 0, got {t}")


def soften(logits: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(logits / T) along the last axis; accepts one row or a matrix."""
    _check_temperature(temperature)
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InputError("non-finite-input", "logits contain NaN/Inf")
    return softmax(logits / temperature, axis=-1)


def make_distilled_gt(
    teacher_logits: np.ndarray, novel_labels: np.ndarray, config: DistillConfig
) -> LabelSet:
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.ndim != 2 or teacher_logits.shape[1] != config.width:
        raise InputError(
            "dimension-mismatch",
            f"teacher logits must be N x {config.width}, got {teacher_logits.shape}",
        )
    novel = np.asarray(novel_labels, dtype=np.int64).reshape(-1)
    if novel.size != teacher_logits.shape[0]:
        raise InputError("dimension-mismatch", f"{novel.size} novel labels for {teacher_logits.shape[0]} rows")
    is_novel = novel != NOT_NOVEL
    bad = np.flatnonzero(is_novel & ((novel < config.novel_label_offset) | (novel >= config.width)))
    if bad.size:
        raise InputError(
            "novel-label-out-of-range",
            f"novel label {novel[bad[0]]} outside [{config.novel_label_offset}, {config.width})",
            location=f"point {bad[0]}",
        )

    rows = soften(teacher_logits, config.temperature)
    rows[is_novel] = 0.0
    rows[np.flatnonzero(is_novel), novel[is_novel]] = 1.0
    logger.info("distill: %d novel one-hot rows, %d softened rows", int(is_novel.sum()), int((~is_novel).sum()))
    return LabelSet(LabelKind.DISTILLED, hard=novel, soft=rows)


def il_loss(student_logits: np.ndarray, distilled: LabelSet, temperature: float) -> Tuple[float, np.ndarray]:
    """
    Mean over points of KL(D(student) || y), D being softmax at temperature T.
    Targets are clamped at TARGET_CLAMP inside the log.
    """
    _check_temperature(temperature)
    z = np.asarray(student_logits, dtype=np.float64)
    if distilled.soft is None or distilled.soft.shape != z.shape:
        raise InputError(
            "invalid-simplex-row",
            f"distilled rows {None if distilled.soft is None else distilled.soft.shape} vs student {z.shape}",
        )
    if not np.all(np.isfinite(z)):
        raise InputError("non-finite-input", "student logits contain NaN/Inf")

    n = z.shape[0]
    log_p = log_softmax(z / temperature, axis=1)
    p = np.exp(log_p)
    a = log_p - np.log(np.maximum(distilled.soft, TARGET_CLAMP))
    per_row = (p * a).sum(axis=1)
    grad = p * (a - per_row[:, None]) / (temperature * n)
    return float(per_row.mean()), grad
