from collections import deque

import numpy as np
import pytest

from arwlab.errors import ConstructionFailedError, DomainError
from arwlab.hierarchy import (Cluster, DormitoryHierarchy, build_generic,
                              build_high_lambda, build_low_lambda,
                              pair_2_or_3, trivial_hierarchy,
                              validate_hierarchy)
from arwlab.torus import SiteSet, TorusGeometry


def test_trivial_hierarchy_is_valid():
    g = TorusGeometry(8, 2)
    A = g.random_subset(20, np.random.default_rng(1))
    h = trivial_hierarchy(g, A, v=3)
    report = validate_hierarchy(h)
    assert report.ok, report.violations
    assert h.depth == 0
    assert h.top_cluster().star == int(A.indices[0])


def test_validator_rejects_triple_union():
    g = TorusGeometry(10, 1)
    A = SiteSet.from_indices(g, [0, 1, 2])
    h = DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[10], levels=[A, A],
        partitions=[[[0], [1], [2]], [[0, 1, 2]]])
    report = validate_hierarchy(h)
    assert not report.ok
    assert any("exactly two" in v for v in report.violations)


def test_validator_rejects_star_of_smaller_part():
    g = TorusGeometry(10, 1)
    A = SiteSet.from_indices(g, [0, 1, 2])
    h = DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[10], levels=[A, A],
        partitions=[[([0, 1], 0), ([2], 2)], [([0, 1, 2], 2)]])
    report = validate_hierarchy(h)
    assert not report.ok
    assert any("larger part" in v for v in report.violations)


def test_validator_rejects_diameter_violation():
    g = TorusGeometry(20, 1)
    A = SiteSet.from_indices(g, [0, 9])
    h = DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[2], levels=[A, A],
        partitions=[[[0], [9]], [[0, 9]]])
    report = validate_hierarchy(h)
    assert not report.ok
    assert any("diameter" in v for v in report.violations)


def _bfs_depths(adj, start):
    dist = {start: 0}
    q = deque([start])
    while q:
        u = q.popleft()
        for w in np.flatnonzero(adj[u]):
            w = int(w)
            if w not in dist:
                dist[w] = dist[u] + 1
                q.append(w)
    return dist


def _random_connected_graph(rng, k):
    adj = np.zeros((k, k), dtype=bool)
    for v in range(1, k):
        u = int(rng.integers(v))
        adj[u, v] = adj[v, u] = True
    for _ in range(int(rng.integers(0, k + 1))):
        a, b = rng.integers(k, size=2)
        if a != b:
            adj[a, b] = adj[b, a] = True
    return adj


def test_pairing_examples():
    tri = np.ones((3, 3), dtype=bool)
    np.fill_diagonal(tri, False)
    assert pair_2_or_3(tri) == [{0, 1, 2}]

    path = np.zeros((4, 4), dtype=bool)
    for i in range(3):
        path[i, i + 1] = path[i + 1, i] = True
    assert sorted(map(sorted, pair_2_or_3(path))) == [[0, 1], [2, 3]]

    star = np.zeros((4, 4), dtype=bool)
    for leaf in (1, 2, 3):
        star[0, leaf] = star[leaf, 0] = True
    cells = pair_2_or_3(star)
    assert sorted(len(c) for c in cells) == [2, 2]
    for cell in cells:
        for a in cell:
            depths = _bfs_depths(star, a)
            assert all(depths[b] <= 2 for b in cell)


def test_pairing_rejects_isolated_vertex():
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    with pytest.raises(DomainError):
        pair_2_or_3(adj)


def test_pairing_random_graphs_have_small_cells():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(2, 13))
        adj = _random_connected_graph(rng, k)
        cells = pair_2_or_3(adj)
        assert sorted(v for c in cells for v in c) == list(range(k))
        for cell in cells:
            assert len(cell) in (2, 3)
            for a in cell:
                depths = _bfs_depths(adj, a)
                assert all(depths[b] <= 2 for b in cell)


def test_build_generic_single_cluster_is_depth_zero():
    g = TorusGeometry(12, 2)
    sites = SiteSet.from_indices(g, range(16))
    h = build_generic(g, sites, sites, [sites], v=1, D0=12 * 12)
    assert h.depth == 0
    assert validate_hierarchy(h).ok


def test_build_generic_two_singletons_merge():
    g = TorusGeometry(16, 2)
    A = SiteSet.from_indices(g, [0, 2])
    h = build_generic(g, A, A, [SiteSet.from_indices(g, [0]),
                                SiteSet.from_indices(g, [2])], v=1, D0=192)
    assert validate_hierarchy(h).ok, validate_hierarchy(h).violations
    assert len(h.partitions[-1]) == 1
    assert len(h.top_cluster()) == 2


def test_build_generic_random_components_instance():
    g = TorusGeometry(32, 2)
    rng = np.random.default_rng(4)
    A = g.random_subset(512, rng)
    comps = [c for c in g.r_components(A, 1) if len(c) >= 4]
    a0_mask = np.zeros(g.n_sites, dtype=bool)
    for c in comps:
        a0_mask |= c.mask
    A0 = SiteSet(g, a0_mask)
    d0 = 48
    assert len(A0) * d0**2 >= 8 * 4 * (6 * 32) ** 2
    h = build_generic(g, A, A0, comps, v=4, D0=d0)
    report = validate_hierarchy(h)
    assert report.ok, report.violations
    assert len(h.levels[-1]) >= len(A0) - 4 * 4 * (6 * 32 / d0) ** 2


def test_build_generic_rejects_undersized_level0():
    g = TorusGeometry(32, 2)
    A = SiteSet.from_indices(g, [0])
    with pytest.raises(DomainError):
        build_generic(g, A, A, [A], v=1, D0=2)


def test_low_lambda_builder_small_instances():
    g = TorusGeometry(32, 2)
    d0 = 20
    need = int(np.ceil(288 * 32**2 / d0**2))
    for seed in range(3):
        A = g.random_subset(need, np.random.default_rng(seed))
        h = build_low_lambda(g, A, d0)
        report = validate_hierarchy(h)
        assert report.ok, report.violations
        assert len(h.levels[-1]) >= len(A) - 144 * 32**2 / d0**2
        assert all(len(c) == 1 for c in h.partitions[0])
        # the diameter schedule is geometric with ratio 6
        assert h.D_j(3) == 216 * h.D_j(0)


def test_low_lambda_rejects_sparse_settling_set():
    g = TorusGeometry(32, 2)
    A = g.random_subset(10, np.random.default_rng(0))
    with pytest.raises(DomainError):
        build_low_lambda(g, A, 20)


def test_high_lambda_full_torus_keeps_everything():
    g = TorusGeometry(24, 2)
    A = SiteSet.full(g)
    h = build_high_lambda(g, A, 2)
    assert h.levels[0] == A
    assert validate_hierarchy(h).ok


def test_high_lambda_excludes_isolated_point():
    g = TorusGeometry(64, 2)
    r = 2
    # a dense half-plane block plus one far-away isolated site
    block = [g.site_index((i, j)) for i in range(64) for j in range(34)]
    lone = g.site_index((32, 50))
    A = SiteSet.from_indices(g, block + [lone])
    h = build_high_lambda(g, A, r)
    assert lone not in h.levels[0]
    assert validate_hierarchy(h).ok


def test_high_lambda_density_condition_exhaustive():
    g = TorusGeometry(64, 2)
    r = 2
    for seed in range(2):
        A = g.random_subset(int(0.75 * g.n_sites),
                            np.random.default_rng(seed))
        h = build_high_lambda(g, A, r)
        assert validate_hierarchy(h).ok
        assert len(h.levels[-1]) >= len(A) - g.n_sites / 2
        for cluster in h.partitions[0]:
            for x in cluster.sites.indices:
                ball = g.ball(int(x), 4 * r)
                assert len(ball & cluster.sites) >= r * r


def test_high_lambda_rejects_small_sets():
    g = TorusGeometry(16, 2)
    A = g.random_subset(10, np.random.default_rng(0))
    with pytest.raises(DomainError):
        build_high_lambda(g, A, 2)


def _pair_hierarchy(g, a, b):
    A = SiteSet.from_indices(g, [a, b])
    return DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[g.n], levels=[A, A],
        partitions=[[[a], [b]], [[a, b]]])


def test_w_function_cases():
    g = TorusGeometry(8, 1)
    h = _pair_hierarchy(g, 0, 1)
    # merged pair of singletons: each site is distinguished at level 0,
    # so colour-0 loops target the sibling and higher colours nobody
    assert sorted(h.w_function(0, 0)) == [1]
    assert len(h.w_function(0, 1)) == 0
    assert sorted(h.w_function(1, 0)) == [0]
    assert len(h.w_function(1, 1)) == 0

    # carried single cluster: its distinguished vertex may wake nobody,
    # a non-distinguished member targets the whole cluster at any colour
    solo = trivial_hierarchy(g, SiteSet.from_indices(g, [3, 4]))
    assert len(solo.w_function(3, 0)) == 0
    assert sorted(solo.w_function(4, 2)) == [3, 4]
    assert solo.w_function(4, 0) == solo.w_function(4, 7)

    # two 2-site clusters merged: the non-distinguished members target
    # their own level-0 cluster at every colour
    g2 = TorusGeometry(12, 1)
    A2 = SiteSet.from_indices(g2, [0, 1, 4, 5])
    h2 = DormitoryHierarchy.from_partitions(
        g2, A2, v=1, D=[12], levels=[A2, A2],
        partitions=[[[0, 1], [4, 5]], [[0, 1, 4, 5]]])
    assert validate_hierarchy(h2).ok
    assert sorted(h2.w_function(1, 0)) == [0, 1]
    assert sorted(h2.w_function(1, 3)) == [0, 1]
    assert sorted(h2.w_function(0, 0)) == [4, 5]
    # the second part's star is distinguished at level 0 only, so its
    # colour-0 loops target the first part and higher colours nobody
    assert sorted(h2.w_function(4, 0)) == [0, 1]
    assert len(h2.w_function(4, 1)) == 0


def test_w_targets_avoid_own_cluster_on_built_hierarchies():
    g = TorusGeometry(32, 2)
    d0 = 20
    need = int(np.ceil(288 * 32**2 / d0**2))
    A = g.random_subset(need, np.random.default_rng(7))
    h = build_low_lambda(g, A, d0)
    for j, level in enumerate(h.partitions):
        for cluster in level:
            if h.distinguished_at(cluster.star, j):
                w = h.w_function(cluster.star, j)
                assert (w & cluster.sites) == SiteSet.empty(g) or len(
                    w & cluster.sites) == 0
    # non-distinguished sites have colour-independent targets
    for cluster in h.partitions[0]:
        for x in cluster.sites.indices:
            x = int(x)
            if not h.distinguished_at(x, 0):
                assert h.w_function(x, 0) == h.w_function(x, 3)


def test_builders_are_deterministic():
    g = TorusGeometry(32, 2)
    need = int(np.ceil(288 * 32**2 / 400))
    A = g.random_subset(need, np.random.default_rng(3))
    h1 = build_low_lambda(g, A, 20)
    h2 = build_low_lambda(g, A, 20)
    assert h1.to_dict() == h2.to_dict()


def test_serialization_roundtrip():
    g = TorusGeometry(32, 2)
    need = int(np.ceil(288 * 32**2 / 400))
    A = g.random_subset(need, np.random.default_rng(3))
    h = build_low_lambda(g, A, 20)
    back = DormitoryHierarchy.from_json(h.to_json())
    assert back.to_dict() == h.to_dict()
    assert validate_hierarchy(back).ok
