import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arwlab.errors import DomainError
from arwlab.torus import SiteSet, TorusGeometry

_GEOMS = {}


def geom(n, d):
    if (n, d) not in _GEOMS:
        _GEOMS[n, d] = TorusGeometry(n, d)
    return _GEOMS[n, d]


def test_distance_examples():
    assert geom(10, 1).distance(0, 9) == 1
    g = geom(10, 2)
    assert g.distance((0, 0), (3, 4)) == 4
    assert g.distance((7, 2), (7, 2)) == 0


def test_distance_rejects_bad_site():
    with pytest.raises(DomainError):
        geom(10, 1).distance(0, 10)
    with pytest.raises(DomainError):
        geom(10, 2).distance((0,), (1, 1))


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 20), st.integers(1, 3), st.data())
def test_triangle_inequality(n, d, data):
    g = geom(n, d)
    x, y, z = (data.draw(st.integers(0, g.n_sites - 1)) for _ in range(3))
    assert g.distance(x, z) <= g.distance(x, y) + g.distance(y, z)
    assert g.distance(x, y) == g.distance(y, x)
    assert g.distance(x, y) <= n // 2


def test_ball_examples():
    assert len(geom(10, 2).ball((0, 0), 1)) == 9
    assert len(geom(3, 2).ball((0, 0), 5)) == 9
    assert len(geom(10, 2).ball((4, 7), 0)) == 1


def test_ball_cardinality_formula_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        max_n = {1: 64, 2: 48, 3: 12}[d]
        n = int(rng.integers(1, max_n + 1))
        g = geom(n, d)
        r = int(rng.integers(0, n + 1))
        x = int(rng.integers(g.n_sites))
        expect = (2 * r + 1) ** d if n >= 2 * r + 1 else g.n_sites
        assert len(g.ball(x, r)) == expect


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 16), st.integers(1, 2), st.data())
def test_ball_symmetry(n, d, data):
    g = geom(n, d)
    x = data.draw(st.integers(0, g.n_sites - 1))
    y = data.draw(st.integers(0, g.n_sites - 1))
    r = data.draw(st.integers(0, n))
    assert (y in g.ball(x, r)) == (x in g.ball(y, r))


def test_diameter_examples():
    g = geom(10, 2)
    assert g.diameter(SiteSet.from_indices(g, [g.site_index((4, 4))])) == 0
    g1 = geom(10, 1)
    assert g1.diameter(SiteSet.from_indices(g1, [0, 9])) == 1
    pts = [g.site_index(p) for p in [(0, 0), (3, 4), (0, 4)]]
    # brute force over all pairs gives max(4, 4, 3) = 4
    assert g.diameter(SiteSet.from_indices(g, pts)) == 4


def test_diameter_empty_rejected():
    g = geom(5, 1)
    with pytest.raises(DomainError):
        g.diameter(SiteSet.empty(g))


def test_r_components_examples():
    g = geom(20, 1)
    c = SiteSet.from_indices(g, [0, 5, 11])
    comps = g.r_components(c, 5)
    assert sorted(sorted(cc) for cc in comps) == [[0, 5], [11]]
    assert len(g.r_components(c, 6)) == 1
    single = SiteSet.from_indices(g, [7])
    assert [list(cc) for cc in g.r_components(single, 3)] == [[7]]
    assert g.r_components(SiteSet.empty(g), 2) == []


def _naive_components(g, sites, r):
    from collections import deque
    idx = [int(s) for s in sites.indices]
    seen, comps = set(), []
    for s in idx:
        if s in seen:
            continue
        comp, q = {s}, deque([s])
        while q:
            u = q.popleft()
            for w in idx:
                if w not in comp and g.distance(u, w) <= r:
                    comp.add(w)
                    q.append(w)
        seen |= comp
        comps.append(sorted(comp))
    return sorted(comps)


def test_r_components_against_naive_bfs():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(3, 18))
        d = int(rng.integers(1, 3))
        g = geom(n, d)
        size = int(rng.integers(1, min(200, g.n_sites) + 1))
        sites = g.random_subset(size, rng)
        r = int(rng.integers(1, n + 1))
        got = sorted(sorted(int(x) for x in c.indices)
                     for c in g.r_components(sites, r))
        assert got == _naive_components(g, sites, r)


def test_r_components_requires_positive_radius():
    g = geom(5, 1)
    with pytest.raises(DomainError):
        g.r_components(SiteSet.from_indices(g, [0]), 0)


def test_site_set_algebra_matches_python_sets():
    g = geom(6, 2)
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = set(int(s) for s in rng.choice(36, size=10, replace=False))
        b = set(int(s) for s in rng.choice(36, size=7, replace=False))
        sa = SiteSet.from_indices(g, a)
        sb = SiteSet.from_indices(g, b)
        assert set(sa | sb) == a | b
        assert set(sa & sb) == a & b
        assert set(sa - sb) == a - b
        assert len(sa) == len(a)
        assert sa.issubset(sa | sb)
        assert (sa & sb).issubset(sa)


def test_neighbor_table_matches_scalar_neighbor():
    for n, d in [(2, 1), (5, 2), (3, 3)]:
        g = geom(n, d)
        tab = g.neighbor_table()
        for site in range(g.n_sites):
            for direction in range(2 * d):
                assert tab[site, direction] == g.neighbor(site, direction)
                # moving one step keeps distance at most 1
                assert g.distance(site, int(tab[site, direction])) <= 1


def test_coords_roundtrip():
    g = geom(7, 3)
    for s in [0, 5, 100, g.n_sites - 1]:
        assert g.site_index(g.coords(s)) == s
