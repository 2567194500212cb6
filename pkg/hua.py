# hua.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from errors import InputError
from pointset import PointProbabilityCloud
from spatial_index import NeighborList, build_index
from uncertainty import Polarity, ScoreField

logger = logging.getLogger(__name__)


class SimDMode(str, Enum):
    # 1 - d^2 / max d^2: near neighbors score high
    INVERTED = "inverted"
    # d^2 / max d^2 as the distance term is usually written
    LITERAL = "literal"


class StopReason(str, Enum):
    STOP_CONDITION = "stop_condition"
    EXHAUSTED = "exhausted"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class HuaConfig:
    m: int = 20
    p: float = 0.02
    lam: float = 1.0
    k: int = 16
    max_iterations: int = 64
    sim_d_mode: SimDMode = SimDMode.INVERTED
    rng_seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "sim_d_mode", SimDMode(self.sim_d_mode))
        if self.m < 1:
            raise InputError("invalid-spec", f"hua.m must be >= 1, got {self.m}")
        if not 0.0 <= self.p <= 1.0:
            raise InputError("invalid-spec", f"hua.p must be in [0, 1], got {self.p}")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise InputError("invalid-spec", f"hua.lambda must be finite and >= 0, got {self.lam}")
        if self.k < 1:
            raise InputError("invalid-spec", f"hua.k must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise InputError("invalid-spec", f"hua.max_iterations must be >= 1, got {self.max_iterations}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "HuaConfig":
        return cls(
            m=section["m"],
            p=section["p"],
            lam=section["lambda"],
            k=section["k"],
            max_iterations=section["max_iterations"],
            sim_d_mode=section["sim_d_mode"],
            rng_seed=section["rng_seed"],
        )


@dataclass
class RegionState:
    members: np.ndarray  # sorted point indices
    seeds: np.ndarray
    iteration: int = 0
    mean_score_history: List[float] = field(default_factory=list)
    batch_sizes: List[int] = field(default_factory=list)
    stopped_reason: Optional[StopReason] = None
    seed_mean: float = float("nan")
    stop_threshold: float = float("nan")

    @property
    def size(self) -> int:
        return int(self.members.size)


def pool_size(n_points: int, p: float) -> int:
    # p * N can land a hair above an integer (0.15 * 200), which must not bump the ceiling
    return int(math.ceil(p * n_points - 1e-9))


def select_seeds(scores: ScoreField, config: HuaConfig) -> np.ndarray:
    scores.require(Polarity.LOW_MEANS_UNKNOWN)
    n = len(scores)
    pool_n = min(pool_size(n, config.p), n)
    if pool_n < config.m:
        raise InputError(
            "pool-smaller-than-m",
            f"seed pool holds {pool_n} points (p={config.p}, N={n}) but m={config.m}",
        )
    pool = np.argsort(scores.scores, kind="stable")[:pool_n]
    rng = np.random.default_rng(config.rng_seed)
    return np.sort(rng.choice(pool, size=config.m, replace=False))


def similarity(
    points: np.ndarray,
    neighbors: NeighborList,
    scores: ScoreField,
    mode: SimDMode = SimDMode.INVERTED,
) -> np.ndarray:
    """
    Sim = Sim_D + Sim_U per (query, neighbor) entry.

    Sim_U = exp(-|S(p) - S(nn)|). Sim_D uses the squared distance divided by the
    row's largest squared distance; rows whose neighbors all coincide with the
    query get Sim_D = 1.
    """
    points = np.asarray(points, dtype=np.int64)
    if points.shape[0] != neighbors.query_count:
        raise InputError("dimension-mismatch", "neighbor rows are not aligned with query points")
    s = scores.scores
    sim_u = np.exp(-np.abs(s[points][:, None] - s[neighbors.indices]))

    sq = neighbors.sq_distances
    row_max = sq.max(axis=1, keepdims=True) if sq.size else np.zeros((sq.shape[0], 1))
    flat = row_max[:, 0] == 0.0
    ratio = np.divide(sq, row_max, out=np.zeros_like(sq), where=row_max > 0.0)
    sim_d = ratio if SimDMode(mode) == SimDMode.LITERAL else 1.0 - ratio
    sim_d[flat] = 1.0
    return sim_d + sim_u


def grow_region(
    cloud: PointProbabilityCloud,
    scores: ScoreField,
    config: HuaConfig,
    workers: int = 1,
) -> RegionState:
    scores.require(Polarity.LOW_MEANS_UNKNOWN)
    n = cloud.n_points
    if len(scores) != n:
        raise InputError("dimension-mismatch", f"{len(scores)} scores for {n} points")

    s = scores.scores
    tau = float(s.mean() - config.lam * s.std())
    seeds = select_seeds(scores, config)
    index = build_index(cloud.coords, workers=workers)

    in_region = np.zeros(n, dtype=bool)
    in_region[seeds] = True
    state = RegionState(
        members=seeds.copy(),
        seeds=seeds,
        seed_mean=float(s[seeds].mean()),
        stop_threshold=tau,
    )

    for _ in range(config.max_iterations):
        members = np.flatnonzero(in_region)
        available = n - members.size
        if available == 0:
            state.stopped_reason = StopReason.EXHAUSTED
            break
        nl = index.knn(members, min(config.k, available), exclude=members)
        sim = similarity(members, nl, scores, config.sim_d_mode)
        cut = np.percentile(sim, 50)

        # a candidate reached from several members keeps its best similarity
        cand, inverse = np.unique(nl.indices.ravel(), return_inverse=True)
        best = np.full(cand.size, -np.inf)
        np.maximum.at(best, inverse, sim.ravel())
        admitted = cand[best >= cut]
        if admitted.size == 0:
            state.stopped_reason = StopReason.EXHAUSTED
            break

        trial = in_region.copy()
        trial[admitted] = True
        mean = float(s[trial].mean())
        if not mean < tau:
            logger.debug("hua: batch of %d rolled back, mean %.6f >= %.6f", admitted.size, mean, tau)
            state.stopped_reason = StopReason.STOP_CONDITION
            break

        in_region = trial
        state.iteration += 1
        state.mean_score_history.append(mean)
        state.batch_sizes.append(int(admitted.size))
    else:
        state.stopped_reason = StopReason.MAX_ITERATIONS
        logger.warning("hua: stopped at max_iterations=%d with %d members", config.max_iterations, int(in_region.sum()))

    state.members = np.flatnonzero(in_region)
    logger.info(
        "hua: %d members after %d iterations (%s)", state.size, state.iteration, state.stopped_reason.value
    )
    return state
