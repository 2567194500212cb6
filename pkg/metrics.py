# metrics.py
from __future__ import annotations

from typing import Dict, Iterable, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score, confusion_matrix, precision_recall_curve, roc_auc_score

from errors import InputError


def _binary_inputs(scores: np.ndarray, is_unknown: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(is_unknown, dtype=bool).reshape(-1)
    if scores.size != truth.size:
        raise InputError("dimension-mismatch", f"{scores.size} scores for {truth.size} labels")
    if not np.all(np.isfinite(scores)):
        raise InputError("non-finite-input", "scores contain NaN/Inf")
    if truth.all() or not truth.any():
        raise InputError("single-class-input", "need both unknown and known points")
    return scores, truth


def auroc(scores: np.ndarray, is_unknown: np.ndarray) -> float:
    """P(random unknown outranks random known), ties counted as 1/2. Scores are high-means-unknown."""
    scores, truth = _binary_inputs(scores, is_unknown)
    return float(roc_auc_score(truth, scores))


def aupr(scores: np.ndarray, is_unknown: np.ndarray) -> float:
    """Step-wise average precision with unknown as the positive class."""
    scores, truth = _binary_inputs(scores, is_unknown)
    return float(average_precision_score(truth, scores))


def pr_curve(scores: np.ndarray, is_unknown: np.ndarray) -> pd.DataFrame:
    scores, truth = _binary_inputs(scores, is_unknown)
    precision, recall, thresholds = precision_recall_curve(truth, scores)
    # the last (precision=1, recall=0) point has no threshold
    return pd.DataFrame(
        {"threshold": np.r_[thresholds, np.nan], "precision": precision, "recall": recall}
    )


def miou(pred: np.ndarray, gt: np.ndarray, class_set: Iterable[int]) -> Tuple[Dict[int, float], float]:
    """
    IoU = TP / (TP + FP + FN) for each class in `class_set` present in pred or gt.
    Points of any other label still count as FP/FN against the listed classes.
    """
    classes = sorted({int(c) for c in class_set})
    if not classes:
        raise InputError("empty-class-set", "class set is empty")
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.size != gt.size:
        raise InputError("dimension-mismatch", f"{pred.size} predictions for {gt.size} labels")

    labels = np.union1d(np.union1d(pred, gt), classes)
    cm = confusion_matrix(gt, pred, labels=labels)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    pos = {int(c): i for i, c in enumerate(labels)}

    per_class: Dict[int, float] = {}
    for c in classes:
        i = pos[c]
        union = tp[i] + fp[i] + fn[i]
        if union:
            per_class[c] = float(tp[i] / union)
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return per_class, mean


def miou_split(
    pred: np.ndarray, gt: np.ndarray, old_classes: Iterable[int], novel_classes: Iterable[int]
) -> Tuple[float, float, float]:
    old = {int(c) for c in old_classes}
    novel = {int(c) for c in novel_classes}
    _, m_all = miou(pred, gt, old | novel)
    _, m_old = miou(pred, gt, old)
    _, m_novel = miou(pred, gt, novel)
    return m_all, m_old, m_novel


def iou_frame(per_class: Dict[int, float]) -> pd.DataFrame:
    return pd.DataFrame({"class_id": list(per_class), "iou": list(per_class.values())})
