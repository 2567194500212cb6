# gbd.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from errors import DegenerateFitError, InputError
from hua import RegionState, SimDMode, similarity
from pointset import PointProbabilityCloud
from spatial_index import build_index
from uncertainty import ScoreField

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class WeightedNeighborGraph:
    """
    Undirected graph over region points. `u`, `v` are positions into
    `node_ids` with u < v; each unordered pair appears once.
    """

    node_ids: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.node_ids.size)

    @property
    def n_edges(self) -> int:
        return int(self.w.size)

    def edge_triples(self) -> List[Tuple[int, int, float]]:
        """Edges in point-index space."""
        return [
            (int(self.node_ids[a]), int(self.node_ids[b]), float(c))
            for a, b, c in zip(self.u, self.v, self.w)
        ]

    def components(self) -> Tuple[int, np.ndarray]:
        n = self.n_nodes
        adj = coo_matrix((np.ones(self.n_edges), (self.u, self.v)), shape=(n, n))
        return connected_components(adj, directed=False)


@dataclass(frozen=True, eq=False)
class SpanningTree(WeightedNeighborGraph):
    """Minimum spanning forest; one tree per connected component of its graph."""

    @property
    def total_weight(self) -> float:
        return float(self.w.sum())


@dataclass(frozen=True)
class GmmFit:
    weights: Tuple[float, float]
    means: Tuple[float, float]
    stddevs: Tuple[float, float]
    log_likelihood: float
    iterations: int
    converged: bool
    ll_history: List[float] = field(default_factory=list, compare=False)

    def cut_threshold(self, epsilon: float) -> float:
        return self.means[0] - epsilon * self.stddevs[0]

    def component_pdf(self, x: np.ndarray) -> np.ndarray:
        """Weighted densities of both components, shape (len(x), 2)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        mu = np.asarray(self.means)
        sd = np.asarray(self.stddevs)
        dens = np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
        return dens * np.asarray(self.weights)


@dataclass
class UnknownMask:
    objects: List[np.ndarray]
    rejected: np.ndarray

    def unknown_points(self) -> np.ndarray:
        if not self.objects:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(self.objects))

    def object_labels(self, members: np.ndarray) -> np.ndarray:
        """Object id per region member (in `members` order), -1 for rejected."""
        lookup = {int(p): i for i, obj in enumerate(self.objects) for p in obj}
        return np.array([lookup.get(int(p), -1) for p in members], dtype=np.int64)


@dataclass(frozen=True)
class GbdConfig:
    enabled: bool = True
    k: int = 16
    epsilon: float = 3.0
    min_object_points: int = 10
    mad_factor: float = 3.0
    max_iter: int = 500
    tol: float = 1e-8
    restarts: int = 4
    min_variance: float = 1e-6
    fallback_percentile: float = 90.0
    rng_seed: int = 11
    symmetrize: str = "min"
    sim_d_mode: SimDMode = SimDMode.INVERTED

    def __post_init__(self):
        if self.symmetrize not in ("min", "first"):
            raise InputError("invalid-spec", f"gbd.symmetrize must be min or first, got {self.symmetrize!r}")
        if self.k < 1 or self.restarts < 1 or self.max_iter < 1:
            raise InputError("invalid-spec", "gbd.k, gbd.restarts and gbd.max_iter must be >= 1")
        if self.epsilon < 0 or self.min_variance <= 0:
            raise InputError("invalid-spec", "gbd.epsilon must be >= 0 and gbd.min_variance > 0")
        object.__setattr__(self, "sim_d_mode", SimDMode(self.sim_d_mode))

    @classmethod
    def from_config(cls, section: Dict[str, Any], sim_d_mode: str = "inverted") -> "GbdConfig":
        keys = (
            "enabled", "k", "epsilon", "min_object_points", "mad_factor", "max_iter", "tol",
            "restarts", "min_variance", "fallback_percentile", "rng_seed", "symmetrize",
        )
        return cls(sim_d_mode=sim_d_mode, **{key: section[key] for key in keys})


@dataclass
class GbdResult:
    mask: UnknownMask
    graph: Optional[WeightedNeighborGraph]
    tree: Optional[SpanningTree]
    fit: Optional[GmmFit]
    threshold: float
    fallback: bool = False


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        root = a
        while root != self.parent[root]:
            root = self.parent[root]
        while a != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] > self.rank[rb]:
            ra, rb = rb, ra
        self.parent[ra] = rb
        if self.rank[ra] == self.rank[rb]:
            self.rank[rb] += 1
        return True


def build_region_graph(
    cloud: PointProbabilityCloud,
    region: RegionState,
    scores: ScoreField,
    k: int = 16,
    sim_d_mode: SimDMode = SimDMode.INVERTED,
    symmetrize: str = "min",
    workers: int = 1,
) -> WeightedNeighborGraph:
    nodes = np.asarray(region.members, dtype=np.int64)
    if nodes.size <= 1:
        raise InputError("region-too-small", f"region has {nodes.size} point(s), need at least 2")

    local_scores = ScoreField(scores.scores[nodes], scores.polarity, scores.method)
    index = build_index(cloud.coords[nodes], workers=workers)
    k_eff = min(int(k), nodes.size - 1)
    local = np.arange(nodes.size)
    nl = index.knn(local, k_eff, exclude_self=True)
    sim = similarity(local, nl, local_scores, sim_d_mode)

    src = np.repeat(local, k_eff)
    dst = nl.indices.ravel()
    wts = sim.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    # stable sort keeps directed (row-major) order inside each unordered pair
    order = np.lexsort((hi, lo))
    lo, hi, wts = lo[order], hi[order], wts[order]
    starts = np.flatnonzero(np.r_[True, (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])])
    if symmetrize == "min":
        pair_w = np.minimum.reduceat(wts, starts)
    else:
        pair_w = wts[starts]
    return WeightedNeighborGraph(nodes, lo[starts], hi[starts], pair_w)


def minimum_spanning_tree(graph: WeightedNeighborGraph) -> SpanningTree:
    """Kruskal over edges ordered by (weight, u, v)."""
    order = np.lexsort((graph.v, graph.u, graph.w))
    uf = _UnionFind(graph.n_nodes)
    keep = [int(e) for e in order if uf.union(int(graph.u[e]), int(graph.v[e]))]
    keep = np.asarray(keep, dtype=np.int64)
    return SpanningTree(graph.node_ids, graph.u[keep], graph.v[keep], graph.w[keep])


def _e_step(x, log_pi, mu, var):
    log_p = log_pi - 0.5 * (_LOG_2PI + np.log(var)) - (x[:, None] - mu) ** 2 / (2.0 * var)
    norm = logsumexp(log_p, axis=1)
    return np.exp(log_p - norm[:, None]), float(norm.sum())


def _run_em(x, mu, var, max_iter, tol, min_variance):
    pi = np.array([0.5, 0.5])
    resp, ll = _e_step(x, np.log(pi), mu, var)
    history = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nk = resp.sum(axis=0)
        safe = np.maximum(nk, 10.0 * np.finfo(np.float64).eps)
        pi = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / safe
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / safe, min_variance)
        with np.errstate(divide="ignore"):
            resp, new_ll = _e_step(x, np.log(pi), mu, var)
        history.append(new_ll)
        gain = new_ll - ll
        ll = new_ll
        if gain < tol:
            converged = True
            break
    return pi, mu, var, ll, iterations, converged, history


def fit_edge_weight_gmm(
    weights: np.ndarray,
    max_iter: int = 500,
    tol: float = 1e-8,
    rng_seed: int = 11,
    restarts: int = 4,
    min_variance: float = 1e-6,
) -> GmmFit:
    """
    Two-component 1-D Gaussian mixture by EM, best log-likelihood over
    `restarts` random initializations. Component 1 has the larger mean.
    """
    x = np.asarray(weights, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise DegenerateFitError(f"need at least 4 edge weights, got {x.size}")
    if np.ptp(x) == 0.0:
        raise DegenerateFitError(f"all {x.size} edge weights equal {x[0]!r}")

    rng = np.random.default_rng(rng_seed)
    var0 = max(float(x.var()), min_variance)
    best = None
    for _ in range(restarts):
        mu0 = x[rng.choice(x.size, size=2, replace=False)]
        if mu0[0] == mu0[1]:
            mu0 = np.array([x.min(), x.max()])
        run = _run_em(x, mu0.astype(np.float64), np.array([var0, var0]), max_iter, tol, min_variance)
        if best is None or run[3] > best[3]:
            best = run

    pi, mu, var, ll, iterations, converged, history = best
    order = np.argsort(-mu, kind="stable")
    sd = np.sqrt(var)
    fit = GmmFit(
        weights=(float(pi[order[0]]), float(pi[order[1]])),
        means=(float(mu[order[0]]), float(mu[order[1]])),
        stddevs=(float(sd[order[0]]), float(sd[order[1]])),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
        ll_history=history,
    )
    if not converged:
        logger.warning("gbd: EM hit max_iter=%d without converging", max_iter)
    return fit


def cut_edges_at(tree: SpanningTree, threshold: float) -> SpanningTree:
    keep = tree.w <= threshold
    return SpanningTree(tree.node_ids, tree.u[keep], tree.v[keep], tree.w[keep])


def cut_edges(tree: SpanningTree, fit: GmmFit, epsilon: float = 3.0) -> SpanningTree:
    """Drop every edge heavier than mu1 - epsilon * sigma1."""
    return cut_edges_at(tree, fit.cut_threshold(epsilon))


def merge_components(
    forest: SpanningTree,
    region: RegionState,
    min_object_points: int = 10,
    mad_factor: float = 3.0,
) -> UnknownMask:
    """
    Keep components that are not low outliers by size:
    size >= max(min_object_points, median - mad_factor * MAD). Singletons are
    always rejected; a lone component is kept as it has nothing to compare to.
    """
    members = np.asarray(region.members, dtype=np.int64)
    if members.size != forest.n_nodes or not np.array_equal(members, forest.node_ids):
        raise InputError("dimension-mismatch", "forest nodes do not match region members")

    n_comp, labels = forest.components()
    sizes = np.bincount(labels, minlength=n_comp)
    if n_comp == 1:
        keep = sizes > 1
    else:
        med = float(np.median(sizes))
        mad = float(np.median(np.abs(sizes - med)))
        floor = max(float(min_object_points), med - mad_factor * mad)
        keep = (sizes >= floor) & (sizes > 1)

    # objects ordered by size, then by their smallest point index
    first = np.full(n_comp, members.size, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(members.size))
    kept = [c for c in np.lexsort((first, -sizes)) if keep[c]]
    objects = [members[labels == c] for c in kept]
    rejected = members[~keep[labels]]
    logger.debug("gbd: %d components, %d kept, %d points rejected", n_comp, len(objects), rejected.size)
    return UnknownMask(objects=objects, rejected=rejected)


def detect_unknown_objects(
    cloud: PointProbabilityCloud,
    region: RegionState,
    scores: ScoreField,
    config: GbdConfig,
    workers: int = 1,
) -> GbdResult:
    """Region -> graph -> MST -> GMM cut -> merged unknown objects."""
    members = np.asarray(region.members, dtype=np.int64)
    if not config.enabled:
        logger.info("gbd: disabled, the whole region of %d points is one object", members.size)
        return GbdResult(UnknownMask([members.copy()], np.empty(0, dtype=np.int64)), None, None, None, float("nan"))

    graph = build_region_graph(
        cloud, region, scores, config.k, config.sim_d_mode, config.symmetrize, workers=workers
    )
    tree = minimum_spanning_tree(graph)
    fit = None
    fallback = False
    try:
        fit = fit_edge_weight_gmm(
            tree.w, config.max_iter, config.tol, config.rng_seed, config.restarts, config.min_variance
        )
        threshold = fit.cut_threshold(config.epsilon)
    except DegenerateFitError as exc:
        fallback = True
        threshold = float(np.percentile(tree.w, config.fallback_percentile)) if tree.w.size else float("inf")
        logger.warning(
            "gbd: %s; cutting at the %.0fth percentile of edge weights (%.6f)",
            exc, config.fallback_percentile, threshold,
        )

    forest = cut_edges_at(tree, threshold)
    mask = merge_components(forest, region, config.min_object_points, config.mad_factor)
    logger.info(
        "gbd: threshold %.6f cut %d of %d tree edges, %d object(s)",
        threshold, tree.n_edges - forest.n_edges, tree.n_edges, len(mask.objects),
    )
    return GbdResult(mask, graph, tree, fit, threshold, fallback)
