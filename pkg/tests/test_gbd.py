import itertools

import numpy as np
import pytest

from errors import DegenerateFitError, InputError
from gbd import (
    GbdConfig,
    SpanningTree,
    UnknownMask,
    WeightedNeighborGraph,
    build_region_graph,
    cut_edges,
    cut_edges_at,
    detect_unknown_objects,
    fit_edge_weight_gmm,
    merge_components,
    minimum_spanning_tree,
)
from hua import RegionState, SimDMode
from spatial_index import build_index
from tests.conftest import ball, cloud_from_coords, external_scores


def region_of(members):
    members = np.sort(np.asarray(members, dtype=np.int64))
    return RegionState(members=members, seeds=members[:1])


def graph(n, edges):
    u, v, w = (np.array(col) for col in zip(*edges))
    return WeightedNeighborGraph(np.arange(n), u.astype(np.int64), v.astype(np.int64), w.astype(float))


def tree_of(n, edges):
    g = graph(n, edges)
    return SpanningTree(g.node_ids, g.u, g.v, g.w)


def exhaustive_min_spanning_weight(n, edges):
    """Minimum total weight over all spanning forests with the maximal edge count."""
    uf_count = graph(n, edges).components()[0]
    need = n - uf_count
    best = np.inf
    for subset in itertools.combinations(edges, need):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        ok = True
        for a, b, _ in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            best = min(best, sum(w for _, _, w in subset))
    return best


# -----------------------------
# graph construction
# -----------------------------


def test_two_node_region_has_one_edge():
    cloud = cloud_from_coords([[0.0, 0, 0], [1.0, 0, 0], [9.0, 9, 9]])
    g = build_region_graph(cloud, region_of([0, 1]), external_scores([0.2, 0.4, 0.9]), k=16)
    # a single neighbour sits at the row maximum, so only the score term remains
    assert g.edge_triples() == [(0, 1, pytest.approx(np.exp(-0.2)))]


def test_collinear_equidistant_weights_are_equal():
    cloud = cloud_from_coords([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    g = build_region_graph(cloud, region_of([0, 1, 2]), external_scores([0.5, 0.5, 0.5]), k=2)
    assert g.n_edges == 3
    assert np.all(g.w == g.w[0])


def test_region_too_small():
    cloud = cloud_from_coords([[0.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(InputError) as err:
        build_region_graph(cloud, region_of([1]), external_scores([0.1, 0.2]))
    assert err.value.kind == "region-too-small"


@pytest.mark.parametrize("mode", list(SimDMode))
def test_graph_weights_match_direct_evaluation(rng, mode):
    coords = rng.normal(size=(300, 3))
    values = rng.uniform(size=300)
    members = np.sort(rng.choice(300, size=120, replace=False))
    k = 6
    g = build_region_graph(cloud_from_coords(coords), region_of(members), external_scores(values), k=k, sim_d_mode=mode)

    nl = build_index(coords[members]).knn(np.arange(members.size), k, exclude_self=True)
    directed = {}
    for i in range(members.size):
        row_max = nl.sq_distances[i].max()
        for j, q in enumerate(nl.indices[i]):
            ratio = nl.sq_distances[i, j] / row_max
            sim_d = ratio if mode == SimDMode.LITERAL else 1.0 - ratio
            directed[(i, int(q))] = sim_d + np.exp(-abs(values[members[i]] - values[members[q]]))

    assert np.all(g.u < g.v)
    assert len(set(zip(g.u.tolist(), g.v.tolist()))) == g.n_edges
    for a, b, w in zip(g.u, g.v, g.w):
        candidates = [directed[key] for key in ((a, b), (b, a)) if key in directed]
        assert w == pytest.approx(min(candidates), abs=1e-12)


def test_first_symmetrization_keeps_first_directed_weight():
    cloud = cloud_from_coords([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    g = build_region_graph(
        cloud, region_of([0, 1, 2]), external_scores([0.5, 0.5, 0.5]), k=2, symmetrize="first"
    )
    # node 0 sees node 1 first: 1 - 1/4 + 1
    assert g.w[(g.u == 0) & (g.v == 1)][0] == pytest.approx(1.75)


# -----------------------------
# spanning tree
# -----------------------------


def test_triangle_mst():
    t = minimum_spanning_tree(graph(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]))
    assert t.total_weight == 3.0
    assert sorted(t.w.tolist()) == [1.0, 2.0]


def test_tree_input_is_unchanged():
    edges = [(0, 1, 0.5), (1, 2, 0.2), (1, 3, 0.9)]
    t = minimum_spanning_tree(graph(4, edges))
    assert sorted(t.edge_triples()) == sorted(edges)


def test_mst_ties_follow_edge_order():
    t = minimum_spanning_tree(graph(3, [(1, 2, 1.0), (0, 2, 1.0), (0, 1, 1.0)]))
    assert sorted(zip(t.u.tolist(), t.v.tolist())) == [(0, 1), (0, 2)]


def test_mst_of_disconnected_graph_is_a_forest():
    t = minimum_spanning_tree(graph(5, [(0, 1, 1.0), (1, 2, 1.5), (0, 2, 0.2), (3, 4, 2.0)]))
    assert t.n_edges == 3
    assert t.components()[0] == 2


def test_mst_matches_exhaustive_enumeration():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        # sparse graphs keep the subset enumeration small at eight nodes
        m = int(rng.integers(1, min(len(pairs), n + 4) + 1))
        chosen = rng.choice(len(pairs), size=m, replace=False)
        # small integer weights so ties are common
        edges = [(pairs[i][0], pairs[i][1], float(rng.integers(0, 5))) for i in sorted(chosen)]
        t = minimum_spanning_tree(graph(n, edges))
        assert t.total_weight == exhaustive_min_spanning_weight(n, edges)


# -----------------------------
# GMM
# -----------------------------


def test_em_recovers_two_gaussians():
    rng = np.random.default_rng(2000)
    x = np.r_[rng.normal(0.8, 0.05, 1000), rng.normal(0.2, 0.05, 1000)]
    fit = fit_edge_weight_gmm(x, rng_seed=1)
    assert abs(fit.means[0] - 0.8) < 0.02
    assert abs(fit.means[1] - 0.2) < 0.02
    assert abs(fit.stddevs[0] - 0.05) < 0.02
    assert abs(fit.stddevs[1] - 0.05) < 0.02
    assert sum(fit.weights) == pytest.approx(1.0)
    assert fit.converged


def test_em_log_likelihood_never_decreases(rng):
    x = np.r_[rng.normal(1.0, 0.02, 60), rng.uniform(0.3, 1.1, 200)]
    fit = fit_edge_weight_gmm(x, restarts=3)
    assert fit.ll_history[-1] == pytest.approx(fit.log_likelihood)
    assert np.all(np.diff(fit.ll_history) >= -1e-10)


def test_em_ordering_puts_larger_mean_first(rng):
    fit = fit_edge_weight_gmm(np.r_[rng.normal(5.0, 1.0, 100), rng.normal(-5.0, 1.0, 100)])
    assert fit.means[0] > fit.means[1]
    assert fit.cut_threshold(3.0) == pytest.approx(fit.means[0] - 3.0 * fit.stddevs[0])


def test_em_degenerate_inputs():
    with pytest.raises(DegenerateFitError) as err:
        fit_edge_weight_gmm(np.full(10, 0.7))
    assert err.value.kind == "degenerate-input"
    with pytest.raises(DegenerateFitError):
        fit_edge_weight_gmm([0.1, 0.2, 0.3])


def test_em_spike_is_held_by_variance_floor():
    x = np.r_[np.full(40, 1.0), np.linspace(0.2, 0.8, 60)]
    fit = fit_edge_weight_gmm(x, min_variance=1e-6)
    assert np.all(np.isfinite(fit.stddevs))
    assert min(fit.stddevs) >= 1e-3 - 1e-12
    assert np.all(np.diff(fit.ll_history) >= -1e-10)


# -----------------------------
# cut and merge
# -----------------------------


def test_cut_path_at_threshold():
    t = tree_of(3, [(0, 1, 0.1), (1, 2, 0.9)])
    _, labels = cut_edges_at(t, 0.5).components()
    assert labels[0] == labels[1] != labels[2]
    assert cut_edges_at(t, 5.0).n_edges == 2
    assert cut_edges_at(t, 0.0).components()[0] == 3


def test_cut_uses_fit_threshold(rng):
    fit = fit_edge_weight_gmm(np.r_[rng.normal(0.9, 0.01, 50), rng.normal(0.3, 0.1, 50)])
    t = tree_of(3, [(0, 1, 0.1), (1, 2, 0.95)])
    assert cut_edges(t, fit, 3.0).edge_triples() == [(0, 1, 0.1)]


def test_more_epsilon_never_merges_components(rng):
    weights = rng.uniform(size=49)
    t = tree_of(50, [(i, i + 1, w) for i, w in enumerate(weights)])
    fit = fit_edge_weight_gmm(weights)
    counts = [cut_edges(t, fit, eps).components()[0] for eps in (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)]
    assert counts == sorted(counts)


def _forest_with_sizes(sizes):
    edges, start = [], 0
    for s in sizes:
        edges += [(start + i, start + i + 1, 0.1) for i in range(s - 1)]
        start += s
    n = start
    if not edges:
        return SpanningTree(np.arange(n), np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)), n
    return tree_of(n, edges), n


def test_merge_rejects_small_components():
    forest, n = _forest_with_sizes([50, 48, 1, 1, 2])
    mask = merge_components(forest, region_of(range(n)), min_object_points=5)
    assert [o.size for o in mask.objects] == [50, 48]
    assert mask.rejected.size == 4


def test_merge_single_component_is_one_object():
    forest, n = _forest_with_sizes([4])
    mask = merge_components(forest, region_of(range(n)), min_object_points=10)
    assert len(mask.objects) == 1 and mask.rejected.size == 0


def test_merge_all_singletons():
    forest, n = _forest_with_sizes([1, 1, 1, 1])
    mask = merge_components(forest, region_of(range(n)))
    assert mask.objects == []
    assert mask.rejected.tolist() == [0, 1, 2, 3]


def test_merge_partition_property(rng):
    sizes = rng.integers(1, 30, size=12).tolist()
    forest, n = _forest_with_sizes(sizes)
    mask = merge_components(forest, region_of(range(n)))
    everything = np.concatenate(mask.objects + [mask.rejected])
    assert sorted(everything.tolist()) == list(range(n))
    labels = mask.object_labels(np.arange(n))
    assert (labels >= 0).sum() == sum(o.size for o in mask.objects)


def test_merge_needs_matching_region():
    forest, n = _forest_with_sizes([3, 3])
    with pytest.raises(InputError):
        merge_components(forest, region_of(range(n + 1)))


# -----------------------------
# end to end
# -----------------------------


@pytest.fixture
def rimmed_region():
    """Low-score unknown blob plus a high-score known rim absorbed into the region."""
    rng = np.random.default_rng(31)
    unknown = ball(rng, (0.0, 0.0, 0.0), 1.0, 200)
    rim = ball(rng, (4.0, 0.0, 0.0), 0.6, 60)
    cloud = cloud_from_coords(np.vstack([unknown, rim]))
    # two score levels inside the blob keep cross-level edges light
    levels = rng.choice([0.05, 0.75], size=200)
    scores = external_scores(np.r_[levels, np.full(60, 0.95)])
    return cloud, scores, np.arange(200), np.arange(200, 260)


def test_rim_is_rejected_and_blob_is_one_object(rimmed_region):
    cloud, scores, unknown, rim = rimmed_region
    region = region_of(np.arange(cloud.n_points))
    result = detect_unknown_objects(cloud, region, scores, GbdConfig())
    mask = result.mask
    assert not result.fallback
    assert len(mask.objects) == 1
    obj = set(mask.objects[0].tolist())
    assert obj <= set(unknown.tolist())
    assert len(obj) >= 0.9 * unknown.size
    assert set(rim.tolist()) <= set(mask.rejected.tolist())


def test_disabled_boundary_detection_keeps_whole_region(rimmed_region):
    cloud, scores, _, _ = rimmed_region
    region = region_of(np.arange(cloud.n_points))
    result = detect_unknown_objects(cloud, region, scores, GbdConfig(enabled=False))
    assert len(result.mask.objects) == 1
    assert result.mask.objects[0].size == cloud.n_points
    assert result.mask.rejected.size == 0


def test_degenerate_weights_fall_back_to_percentile(caplog):
    # equal scores on an evenly spaced line give identical tree weights
    cloud = cloud_from_coords([[float(i), 0.0, 0.0] for i in range(16)])
    scores = external_scores(np.full(16, 0.3))
    with caplog.at_level("WARNING", logger="gbd"):
        result = detect_unknown_objects(cloud, region_of(range(16)), scores, GbdConfig(k=2, min_object_points=2))
    assert result.fallback
    assert result.fit is None
    assert "percentile" in caplog.text
    assert isinstance(result.mask, UnknownMask)
    assert [o.size for o in result.mask.objects] == [16]
