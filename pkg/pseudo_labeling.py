# pseudo_labeling.py
from __future__ import annotations

import logging

import numpy as np

from errors import InputError
from gbd import UnknownMask
from pointset import LabelKind, LabelSet

logger = logging.getLogger(__name__)

# unlabeled points; left untouched
IGNORE_LABEL = -1


def make_pseudo_gt(closed_labels: np.ndarray, mask: UnknownMask, n_classes: int) -> LabelSet:
    """
    Closed-set labels with every point of a detected object overwritten by the
    unknown label `n_classes`. Rejected points keep their closed-set label.
    """
    labels = np.array(closed_labels, dtype=np.int64).reshape(-1)
    n = labels.size
    bad = np.flatnonzero((labels < IGNORE_LABEL) | (labels > n_classes))
    if bad.size:
        raise InputError(
            "label-out-of-range",
            f"label {labels[bad[0]]} outside [{IGNORE_LABEL}, {n_classes}]",
            location=f"point {bad[0]}",
        )

    unknown = mask.unknown_points()
    if unknown.size and (unknown.min() < 0 or unknown.max() >= n):
        raise InputError("index-out-of-range", f"mask index outside [0, {n})")
    labels[unknown] = n_classes
    logger.info("pseudo: %d of %d points relabelled as unknown class %d", unknown.size, n, n_classes)
    return LabelSet(LabelKind.PSEUDO, hard=labels)
