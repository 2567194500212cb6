# synth.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from errors import InputError
from pointset import PointProbabilityCloud

logger = logging.getLogger(__name__)

UNKNOWN_CLASS = -1


@dataclass(frozen=True)
class ClusterSpec:
    center: Tuple[float, float, float]
    radius: float
    point_count: int
    class_id: int

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ClusterSpec":
        try:
            center = tuple(float(v) for v in d["center"])
            return cls(center, float(d["radius"]), int(d["point_count"]), int(d["class_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError("invalid-spec", f"bad cluster entry {d!r}: {exc}") from None


@dataclass(frozen=True)
class LogitModel:
    """
    Known rows get known_peak on the true class plus N(0, noise_sigma^2) noise.
    Unknown rows get no peak: their noise is multiplied by unknown_flatness, so
    their top-1 margin is a noise gap far below known_peak. Factors above 1
    spread MSP inside the unknown cluster; 0 makes every unknown row uniform.
    """

    known_peak: float = 6.0
    unknown_flatness: float = 3.0
    noise_sigma: float = 0.5


@dataclass(frozen=True)
class SceneSpec:
    rng_seed: int = 2024
    n_classes: int = 13
    known_clusters: List[ClusterSpec] = field(default_factory=list)
    unknown_clusters: List[ClusterSpec] = field(default_factory=list)
    logit_model: LogitModel = field(default_factory=LogitModel)

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "SceneSpec":
        return cls(
            rng_seed=section["rng_seed"],
            n_classes=section["n_classes"],
            known_clusters=[ClusterSpec.from_dict(c) for c in section["known_clusters"]],
            unknown_clusters=[ClusterSpec.from_dict(c) for c in section["unknown_clusters"]],
            logit_model=LogitModel(
                known_peak=section["known_peak"],
                unknown_flatness=section["unknown_flatness"],
                noise_sigma=section["noise_sigma"],
            ),
        )

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InputError("invalid-spec", f"n_classes must be >= 2, got {self.n_classes}")
        if not self.known_clusters and not self.unknown_clusters:
            raise InputError("invalid-spec", "scene has no clusters")
        for c in self.known_clusters:
            if not 0 <= c.class_id < self.n_classes:
                raise InputError("invalid-spec", f"known class id {c.class_id} outside [0, {self.n_classes})")
        for c in self.unknown_clusters:
            if c.class_id != UNKNOWN_CLASS:
                raise InputError("invalid-spec", f"unknown clusters must use class id -1, got {c.class_id}")
        for c in self.known_clusters + self.unknown_clusters:
            if c.point_count < 1 or c.radius < 0 or len(c.center) != 3:
                raise InputError("invalid-spec", f"bad cluster {c}")
        lm = self.logit_model
        if lm.noise_sigma < 0 or lm.unknown_flatness < 0:
            raise InputError("invalid-spec", "noise_sigma and unknown_flatness must be >= 0")


def _sample_ball(rng: np.random.Generator, cluster: ClusterSpec) -> np.ndarray:
    direction = rng.normal(size=(cluster.point_count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = cluster.radius * np.cbrt(rng.uniform(size=(cluster.point_count, 1)))
    return np.asarray(cluster.center) + direction * radius


def generate_scene(spec: SceneSpec) -> Tuple[PointProbabilityCloud, np.ndarray]:
    """
    Points uniform in each cluster ball. Known points get a peaked logit row
    (known_peak on the true class plus noise); unknown points get flat noise
    scaled by unknown_flatness. Clusters are drawn in order, known first.
    """
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    lm = spec.logit_model
    c = spec.n_classes

    coords, logits, labels = [], [], []
    for cluster in spec.known_clusters:
        coords.append(_sample_ball(rng, cluster))
        row = rng.normal(0.0, lm.noise_sigma, size=(cluster.point_count, c))
        row[:, cluster.class_id] += lm.known_peak
        logits.append(row)
        labels.append(np.full(cluster.point_count, cluster.class_id))
    for cluster in spec.unknown_clusters:
        coords.append(_sample_ball(rng, cluster))
        logits.append(lm.unknown_flatness * rng.normal(0.0, lm.noise_sigma, size=(cluster.point_count, c)))
        labels.append(np.full(cluster.point_count, UNKNOWN_CLASS))

    labels = np.concatenate(labels)
    cloud = PointProbabilityCloud(np.concatenate(coords), np.concatenate(logits), labels=labels)
    is_unknown = labels == UNKNOWN_CLASS
    logger.info("synth: %d points, %d unknown, %d classes", cloud.n_points, int(is_unknown.sum()), c)
    return cloud, is_unknown
