# spatial_index.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.spatial import cKDTree

from errors import InputError

logger = logging.getLogger(__name__)

# extra neighbors fetched per row so ties at the k-th distance can be resolved by index
_TIE_PAD = 8


@dataclass(frozen=True, eq=False)
class NeighborList:
    indices: np.ndarray  # m x k, indices into the source cloud
    sq_distances: np.ndarray  # m x k, ascending per row

    @property
    def query_count(self) -> int:
        return int(self.indices.shape[0])

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])


def _sq_dist(coords: np.ndarray, ids: np.ndarray, q: np.ndarray) -> np.ndarray:
    return ((coords[ids] - q[..., None, :]) ** 2).sum(axis=-1)


class SpatialIndex:
    """
    Exact kNN over a fixed coordinate array. Ties at equal squared distance are
    broken by the lower point index, so results do not depend on tree layout
    or worker count.
    """

    def __init__(self, coords: np.ndarray, workers: int = 1):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] == 0:
            raise InputError("empty-input", "spatial index needs at least one point")
        if coords.shape[1] != 3:
            raise InputError("dimension-mismatch", f"coords must be N x 3, got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise InputError("non-finite-input", "coords contain NaN/Inf")
        self.coords = coords
        self.workers = max(1, int(workers))
        self._tree = cKDTree(coords)

    @property
    def n_points(self) -> int:
        return int(self.coords.shape[0])

    def knn(
        self,
        queries: Iterable[int],
        k: int,
        exclude: Optional[Iterable[int]] = None,
        exclude_self: bool = False,
    ) -> NeighborList:
        queries = np.asarray(list(queries) if not isinstance(queries, np.ndarray) else queries, dtype=np.int64)
        if queries.size and (queries.min() < 0 or queries.max() >= self.n_points):
            raise InputError("index-out-of-range", "query index outside the cloud")
        k = int(k)
        if k < 1:
            raise InputError("k-too-large", f"k must be >= 1, got {k}")

        if exclude is None:
            cand = np.arange(self.n_points)
            tree = self._tree
        else:
            excluded = np.zeros(self.n_points, dtype=bool)
            excluded[np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)] = True
            cand = np.flatnonzero(~excluded)
            tree = cKDTree(self.coords[cand]) if cand.size else None

        available = cand.size - int(exclude_self)
        if k > available:
            raise InputError(
                "k-too-large", f"k={k} but only {max(available, 0)} candidate points remain"
            )
        if queries.size == 0:
            empty = np.empty((0, k))
            return NeighborList(empty.astype(np.int64), empty)

        need = k + int(exclude_self)
        pad = min(cand.size, need + _TIE_PAD)
        q = self.coords[queries]
        _, loc = tree.query(q, k=np.arange(1, pad + 1), workers=self.workers)
        ids = cand[loc]
        sq = _sq_dist(self.coords, ids, q)
        is_self = ids == queries[:, None] if exclude_self else np.zeros(ids.shape, dtype=bool)
        sq = np.where(is_self, np.inf, sq)

        order = np.lexsort((ids, sq), axis=-1)
        ids = np.take_along_axis(ids, order, axis=1)
        sq = np.take_along_axis(sq, order, axis=1)

        rows = np.arange(queries.size)
        n_real = pad - is_self.sum(axis=1)
        last = sq[rows, n_real - 1]
        kth = sq[:, k - 1]
        certified = (pad == cand.size) | (kth < last * (1.0 - 1e-9))

        out_ids = ids[:, :k].copy()
        out_sq = sq[:, :k].copy()
        for r in np.flatnonzero(~certified):
            # brute force the rows whose k-th distance ties the edge of the fetched set
            row_sq = _sq_dist(self.coords, cand, q[r])
            if exclude_self:
                row_sq = np.where(cand == queries[r], np.inf, row_sq)
            best = np.lexsort((cand, row_sq))[:k]
            out_ids[r] = cand[best]
            out_sq[r] = row_sq[best]
        if (~certified).any():
            logger.debug("knn: %d of %d rows resolved by brute force", int((~certified).sum()), queries.size)
        return NeighborList(out_ids.astype(np.int64), out_sq)


def build_index(coords: np.ndarray, workers: int = 1) -> SpatialIndex:
    return SpatialIndex(coords, workers=workers)


def knn(
    index: SpatialIndex,
    queries: Iterable[int],
    k: int,
    exclude: Optional[Iterable[int]] = None,
    exclude_self: bool = False,
) -> NeighborList:
    return index.knn(queries, k, exclude=exclude, exclude_self=exclude_self)
