"""Dormitory hierarchies: nested cluster partitions of the settling set.

A (v, D)-hierarchy is a decreasing chain of subsets A_0 ⊇ ... ⊇ A_J, each
partitioned into clusters, where level-(j+1) clusters are either carried
over or the union of exactly two level-j clusters of diameter at most
D_j, cluster sizes grow like 2^(j//2) v, and the last level is a single
cluster.  Each cluster carries a distinguished vertex: the minimum site
at level 0, and the distinguished vertex of the larger part after a
merge.  Construction is deterministic: identical inputs give identical
hierarchies.

The colour-target function w(x, j) says whom a loop of colour j from x
may wake: non-distinguished sites target their own level-0 cluster, and
a vertex distinguished at level j targets the sibling its level-j
cluster merges with (nothing, once its cluster stops merging).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConstructionFailedError, DomainError
from .torus import SiteSet, TorusGeometry, pairwise_diameter


@dataclass
class Cluster:
    sites: SiteSet
    star: int
    level: int
    index: int
    children: tuple = ()          # (), (carried,), or (part0, part1)
    diam: Optional[int] = None

    def diameter(self, g: TorusGeometry) -> int:
        if self.diam is None:
            self.diam = g.diameter(self.sites)
        return self.diam

    @property
    def min_site(self) -> int:
        return int(self.sites.indices[0])

    def __len__(self):
        return len(self.sites)


@dataclass
class ValidationReport:
    ok: bool
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok

    def add(self, message: str):
        self.ok = False
        self.violations.append(message)


class DormitoryHierarchy:
    """Levels, partitions and distinguished vertices over a settling set."""

    def __init__(self, geometry: TorusGeometry, A: SiteSet, v: int,
                 D: Sequence[int], levels: list[SiteSet],
                 partitions: list[list[Cluster]]):
        self.geometry = geometry
        self.A = A
        self.v = int(v)
        self.D = [int(x) for x in D]
        self.levels = levels
        self.partitions = partitions
        self._site_to_cluster = None
        self._w_cache: dict = {}

    @property
    def depth(self) -> int:
        """Index J of the last level."""
        return len(self.partitions) - 1

    def D_j(self, j: int) -> int:
        if j < len(self.D):
            return self.D[j]
        # geometric continuation of the diameter schedule
        return self.D[-1] * 6 ** (j - len(self.D) + 1)

    def top_cluster(self) -> Optional[Cluster]:
        if not self.partitions or not self.partitions[-1]:
            return None
        return self.partitions[-1][0]

    def leaves(self) -> list[Cluster]:
        return self.partitions[0]

    # -- site lookups -----------------------------------------------------

    def _lookup(self):
        if self._site_to_cluster is None:
            n = self.geometry.n_sites
            tables = []
            for level in self.partitions:
                t = np.full(n, -1, dtype=np.int64)
                for c in level:
                    t[c.sites.mask] = c.index
                tables.append(t)
            self._site_to_cluster = tables
        return self._site_to_cluster

    def cluster_at(self, j: int, x: int) -> Optional[Cluster]:
        """C_j(x); None when x is not in A_j or j exceeds the depth."""
        if j < 0 or j > self.depth:
            return None
        pos = self._lookup()[j][x]
        if pos < 0:
            return None
        return self.partitions[j][pos]

    def distinguished_at(self, x: int, j: int) -> bool:
        c = self.cluster_at(j, x)
        return c is not None and c.star == int(x)

    def ordered_children(self, cluster: Cluster) -> tuple[Cluster, Cluster]:
        a, b = cluster.children
        if a.star == cluster.star:
            return a, b
        return b, a

    # -- colour targets ---------------------------------------------------

    def w_mask(self, x: int, j: int) -> np.ndarray:
        """Boolean wake mask of w(x, j); shared cache entry, do not mutate."""
        x = int(x)
        if not self.distinguished_at(x, 0):
            key = ("leaf", self._lookup()[0][x] if self.cluster_at(0, x) else -1)
            if key not in self._w_cache:
                c = self.cluster_at(0, x)
                mask = (np.zeros(self.geometry.n_sites, dtype=bool)
                        if c is None else c.sites.mask.copy())
                self._w_cache[key] = mask
            return self._w_cache[key]
        key = (x, j)
        if key not in self._w_cache:
            if self.distinguished_at(x, j):
                upper = self.cluster_at(j + 1, x)
                lower = self.cluster_at(j, x)
                if upper is None:
                    mask = np.zeros(self.geometry.n_sites, dtype=bool)
                else:
                    mask = upper.sites.mask & ~lower.sites.mask
            else:
                mask = np.zeros(self.geometry.n_sites, dtype=bool)
            self._w_cache[key] = mask
        return self._w_cache[key]

    def w_function(self, x: int, j: int) -> SiteSet:
        """Set of sites a colour-j loop from x is allowed to wake."""
        return SiteSet(self.geometry, self.w_mask(x, j).copy())

    def star_targets(self, leaf: Cluster) -> tuple[np.ndarray, np.ndarray]:
        """Flattened per-colour target sites for a leaf's distinguished vertex.

        Returns (targets, offsets) with colour j's targets in
        targets[offsets[j]:offsets[j+1]], for j = 0 .. depth.
        """
        key = ("star_targets", leaf.index)
        if key not in self._w_cache:
            rows = []
            for j in range(self.depth + 1):
                rows.append(np.flatnonzero(self.w_mask(leaf.star, j)))
            offsets = np.zeros(len(rows) + 1, dtype=np.int64)
            for j, r in enumerate(rows):
                offsets[j + 1] = offsets[j] + r.size
            targets = (np.concatenate(rows) if rows else
                       np.empty(0, dtype=np.int64)).astype(np.int64)
            self._w_cache[key] = (targets, offsets)
        return self._w_cache[key]

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.geometry.n,
            "d": self.geometry.d,
            "v": self.v,
            "D": self.D,
            "A": [int(s) for s in self.A.indices],
            "levels": [[int(s) for s in lvl.indices] for lvl in self.levels],
            "partitions": [
                [{"sites": [int(s) for s in c.sites.indices], "star": c.star}
                 for c in level]
                for level in self.partitions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "DormitoryHierarchy":
        g = TorusGeometry(data["n"], data["d"])
        A = SiteSet.from_indices(g, data["A"])
        levels = [SiteSet.from_indices(g, lvl) for lvl in data["levels"]]
        partitions = [
            [(cell["sites"], cell["star"]) for cell in level]
            for level in data["partitions"]
        ]
        return cls.from_partitions(g, A, data["v"], data["D"], levels,
                                   partitions)

    @classmethod
    def from_json(cls, text: str) -> "DormitoryHierarchy":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_partitions(cls, g: TorusGeometry, A: SiteSet, v: int,
                        D: Sequence[int], levels: list[SiteSet],
                        partitions) -> "DormitoryHierarchy":
        """Assemble a hierarchy from raw site lists.

        partitions[j] is a list of (sites, star) pairs or plain site lists;
        stars are recomputed by the canonical rules when absent.  Child
        links are recovered by set intersection.
        """
        built: list[list[Cluster]] = []
        for j, level in enumerate(partitions):
            row = []
            for i, cell in enumerate(level):
                if isinstance(cell, tuple):
                    sites, star = cell
                else:
                    sites, star = cell, None
                ss = sites if isinstance(sites, SiteSet) else \
                    SiteSet.from_indices(g, sites)
                row.append(Cluster(sites=ss, star=-1 if star is None else int(star),
                                   level=j, index=i))
            built.append(row)
        # children by set intersection, stars by the canonical rules
        for j, row in enumerate(built):
            for c in row:
                if j == 0:
                    if c.star < 0:
                        c.star = c.min_site
                    continue
                parts = [p for p in built[j - 1]
                         if bool((p.sites.mask & c.sites.mask).any())]
                c.children = tuple(sorted(parts, key=lambda p: p.min_site))
                if c.star < 0:
                    if len(c.children) == 1:
                        c.star = c.children[0].star
                    elif len(c.children) == 2:
                        c.star = _merge_star(*c.children)
                    else:
                        # malformed merge; keep a member so validation can
                        # report the structural violation instead of crashing
                        c.star = c.min_site
        return cls(g, A, v, D, levels, built)


def _merge_star(a: Cluster, b: Cluster) -> int:
    """Distinguished vertex of a merged pair: the larger part wins,
    ties broken towards the part with the smaller minimum site."""
    if len(a) != len(b):
        big = a if len(a) > len(b) else b
    else:
        big = a if a.min_site < b.min_site else b
    return big.star


# -- validation -------------------------------------------------------------


def validate_hierarchy(h: DormitoryHierarchy) -> ValidationReport:
    """Exact check of every defining condition; never raises."""
    g = h.geometry
    report = ValidationReport(ok=True)
    if not h.partitions:
        report.add("hierarchy has no levels")
        return report
    if not h.levels[0].issubset(h.A):
        report.add("A_0 is not a subset of A")
    for j in range(len(h.levels) - 1):
        if not h.levels[j + 1].issubset(h.levels[j]):
            report.add(f"A_{j + 1} is not a subset of A_{j}")
    for j, level in enumerate(h.partitions):
        covered = np.zeros(g.n_sites, dtype=np.int64)
        for c in level:
            covered[c.sites.mask] += 1
            if not c.sites:
                report.add(f"level {j} cluster {c.index} is empty")
        if (covered > 1).any():
            report.add(f"level {j} clusters overlap")
        if not np.array_equal(covered > 0, h.levels[j].mask):
            report.add(f"level {j} partition does not cover A_{j} exactly")
    # (i) cardinality growth
    for j, level in enumerate(h.partitions):
        need = (1 << (j // 2)) * h.v
        for c in level:
            if len(c) < need:
                report.add(f"level {j} cluster {c.index}: size {len(c)} < {need}")
    # (ii) merges: new clusters are two old ones with bounded diameter
    for j in range(len(h.partitions) - 1):
        prev = h.partitions[j]
        prev_sets = {p.sites.mask.tobytes(): p for p in prev}
        for c in h.partitions[j + 1]:
            if c.sites.mask.tobytes() in prev_sets:
                carried = prev_sets[c.sites.mask.tobytes()]
                if c.star != carried.star:
                    report.add(
                        f"level {j + 1} cluster {c.index}: carried cluster "
                        f"changed its distinguished vertex")
                continue
            parts = [p for p in prev if (p.sites.mask & c.sites.mask).any()]
            union = np.zeros(g.n_sites, dtype=bool)
            for p in parts:
                union |= p.sites.mask
            if len(parts) != 2 or not np.array_equal(union, c.sites.mask):
                report.add(
                    f"level {j + 1} cluster {c.index}: not the union of "
                    f"exactly two level-{j} clusters")
                continue
            if c.diameter(g) > h.D_j(j):
                report.add(
                    f"level {j + 1} cluster {c.index}: diameter "
                    f"{c.diameter(g)} > D_{j} = {h.D_j(j)}")
            if c.star != _merge_star(*parts):
                report.add(
                    f"level {j + 1} cluster {c.index}: distinguished vertex "
                    f"is not the one of the larger part")
    # (iii) single top cluster
    if len(h.partitions[-1]) != 1:
        report.add(f"last level has {len(h.partitions[-1])} clusters, not 1")
    # distinguished vertices belong to their clusters and are monotone
    for j, level in enumerate(h.partitions):
        for c in level:
            if c.star not in c.sites:
                report.add(f"level {j} cluster {c.index}: star not a member")
    for j in range(1, len(h.partitions)):
        for c in h.partitions[j]:
            lower = h.cluster_at(j - 1, c.star)
            if lower is None or lower.star != c.star:
                report.add(
                    f"level {j} cluster {c.index}: star not distinguished "
                    f"at level {j - 1}")
    return report


# -- 2-or-3 pairing ----------------------------------------------------------


def pair_2_or_3(adjacency: np.ndarray) -> list[set[int]]:
    """Partition graph vertices into cells of size 2 or 3 and diameter <= 2.

    Per component: root a BFS spanning tree, then repeatedly remove a
    deepest leaf together with a sister leaf when one exists, else with
    its parent; the final two or three vertices form the last cell.
    Removing a leaf pair keeps the peeled tree a spanning tree of the
    remaining induced subgraph, so a single tree per component suffices.
    Sisters sit at graph distance 2 via their parent, a leaf and its
    parent are adjacent, and the final remainder is a tree path, so every
    cell has diameter at most 2.  Raises on components of size 1.
    """
    import heapq

    adj = np.asarray(adjacency, dtype=bool)
    k = adj.shape[0]
    if adj.shape != (k, k):
        raise DomainError("adjacency must be a square matrix")
    neighbors = [np.flatnonzero(adj[u]).tolist() for u in range(k)]
    seen = np.zeros(k, dtype=bool)
    cells: list[set[int]] = []
    for start in range(k):
        if seen[start]:
            continue
        # BFS spanning tree rooted at the smallest vertex of the component
        parent = {start: -1}
        depth = {start: 0}
        order = [start]
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for w in neighbors[u]:
                    if w not in parent:
                        parent[w] = u
                        depth[w] = depth[u] + 1
                        order.append(w)
                        nxt.append(w)
            frontier = nxt
        comp = set(order)
        seen[order] = True
        if len(comp) == 1:
            raise DomainError(f"vertex {start} is isolated")
        kids = {u: set() for u in comp}
        for u in comp:
            if parent[u] >= 0:
                kids[parent[u]].add(u)
        alive = set(comp)
        heap = [(-depth[u], u) for u in comp if not kids[u]]
        heapq.heapify(heap)

        def drop(u):
            alive.discard(u)
            p = parent[u]
            if p >= 0 and p in alive:
                kids[p].discard(u)
                if not kids[p]:
                    heapq.heappush(heap, (-depth[p], p))

        while len(alive) > 3:
            negd, x = heapq.heappop(heap)
            if x not in alive or kids[x] or -negd != depth[x]:
                continue
            z = parent[x]
            sisters = sorted(y for y in kids[z] if y != x and not kids[y])
            if sisters:
                y = sisters[0]
                cells.append({x, y})
                drop(x)
                drop(y)
            else:
                # x is the deepest leaf with no sister, so z has no other child
                cells.append({x, z})
                alive.discard(x)
                kids[z].discard(x)
                drop(z)
        cells.append(set(alive))
    return cells


# -- generic recursive builder ----------------------------------------------


def build_generic(g: TorusGeometry, A: SiteSet, A0: SiteSet,
                  C0: list[SiteSet], v: int, D0: int) -> DormitoryHierarchy:
    """Complete a level-0 partition into a full hierarchy, two levels a step.

    At step j, clusters of moderate diameter pair up (or form triples,
    split across the two new levels) when their union stays within
    D_{2j}/2; isolated narrow clusters that are not big enough are
    discarded.  The discarded mass is at most 4 v (6n/D0)^d.
    """
    n, d = g.n, g.d
    if len(A0) * D0**d < 8 * v * (6 * n) ** d:
        raise DomainError(
            f"|A_0| = {len(A0)} is below the 8 v (6n/D0)^d threshold")
    conn = D0 // (12 * v)
    for i, c in enumerate(C0):
        if len(c) < v:
            raise DomainError(f"level-0 cluster {i} has size {len(c)} < v = {v}")
        if len(c) > 1:
            if conn < 1 or not g.is_r_connected(c, conn):
                raise DomainError(
                    f"level-0 cluster {i} is not {conn}-connected")

    clusters = [Cluster(sites=c, star=int(c.indices[0]), level=0, index=i)
                for i, c in enumerate(sorted(C0, key=lambda c: int(c.indices[0])))]
    levels = [A0]
    partitions = [clusters]
    current = clusters
    step = 0
    max_steps = 64 + int(np.ceil(np.log(max(6 * n / D0, 2)) / np.log(6.0)))
    while len(current) > 1:
        if step > max_steps:
            raise ConstructionFailedError(
                "hierarchy construction failed to converge; "
                "the level-0 preconditions are likely violated")
        d2j = D0 * 6 ** (2 * step)
        narrow = [c for c in current if 6 * c.diameter(g) <= d2j]
        wide = [c for c in current if 6 * c.diameter(g) > d2j]
        adj, merge_members = _merge_graph(g, narrow, d2j)
        merging = set(merge_members)
        m_clusters = [narrow[i] for i in sorted(merging)]
        rest = [narrow[i] for i in range(len(narrow)) if i not in merging]
        big = [c for c in rest if len(c) >= (1 << (step + 1)) * v]
        rubbish = [c for c in rest if len(c) < (1 << (step + 1)) * v]
        kept = wide + big + m_clusters
        if not kept:
            raise ConstructionFailedError(
                "every remaining cluster was rubbish; preconditions violated")
        next_mask = np.zeros(g.n_sites, dtype=bool)
        for c in kept:
            next_mask |= c.sites.mask
        a_next = SiteSet(g, next_mask)

        cells = []
        if m_clusters:
            sub = np.zeros((len(m_clusters), len(m_clusters)), dtype=bool)
            pos = {old: newi for newi, old in enumerate(sorted(merging))}
            for i in sorted(merging):
                for k in np.flatnonzero(adj[i]):
                    if int(k) in merging:
                        sub[pos[i], pos[int(k)]] = True
            cells = pair_2_or_3(sub)

        mid_level: list[Cluster] = []
        top_level: list[Cluster] = []
        for c in wide + big:
            carried_mid = Cluster(sites=c.sites, star=c.star, level=0, index=0,
                                  children=(c,), diam=c.diam)
            mid_level.append(carried_mid)
            top_level.append(Cluster(sites=c.sites, star=c.star, level=0,
                                     index=0, children=(carried_mid,),
                                     diam=c.diam))
        for cell in cells:
            members = sorted((m_clusters[i] for i in cell),
                             key=lambda c: c.min_site)
            if len(members) == 2:
                merged = _merge_pair(g, members[0], members[1])
                carried = Cluster(sites=merged.sites, star=merged.star,
                                  level=0, index=0, children=(merged,),
                                  diam=merged.diam)
                mid_level.append(merged)
                top_level.append(carried)
            else:
                pair, third = _split_triple(g, members)
                merged = _merge_pair(g, *pair)
                mid_level.append(merged)
                mid_third = Cluster(sites=third.sites, star=third.star,
                                    level=0, index=0, children=(third,),
                                    diam=third.diam)
                mid_level.append(mid_third)
                top_level.append(_merge_pair(g, merged, mid_third))
        for row, lvl in ((mid_level, len(partitions)),
                         (top_level, len(partitions) + 1)):
            row.sort(key=lambda c: c.min_site)
            for i, c in enumerate(row):
                c.level = lvl
                c.index = i
        levels.extend([a_next, a_next])
        partitions.extend([mid_level, top_level])
        current = top_level
        step += 1

    D = [D0 * 6**j for j in range(max(len(partitions) - 1, 1))]
    return DormitoryHierarchy(g, A, v, D, levels, partitions)


def _merge_pair(g: TorusGeometry, a: Cluster, b: Cluster) -> Cluster:
    union = SiteSet(g, a.sites.mask | b.sites.mask)
    return Cluster(sites=union, star=_merge_star(a, b), level=0, index=0,
                   children=(a, b),
                   diam=_union_diam(g, a, b))


def _union_diam(g: TorusGeometry, a: Cluster, b: Cluster) -> int:
    cross = pairwise_diameter(g, a.sites.indices, b.sites.indices)
    return max(a.diameter(g), b.diameter(g), cross)


def _split_triple(g: TorusGeometry, members: list[Cluster]):
    """Pick the pair with the smallest union diameter; ties by site order."""
    best = None
    for i in range(3):
        for k in range(i + 1, 3):
            dd = _union_diam(g, members[i], members[k])
            key = (dd, members[i].min_site, members[k].min_site)
            if best is None or key < best[0]:
                best = (key, (members[i], members[k]),
                        members[3 - i - k])
    return best[1], best[2]


def _merge_graph(g: TorusGeometry, narrow: list[Cluster], d2j: int):
    """Adjacency 'union diameter <= D_2j / 2' over the narrow clusters.

    Returns (adjacency, vertex indices with at least one neighbour).
    Candidate pairs are prefiltered by the distance of representative
    sites, which lower-bounds the union diameter.
    """
    m = len(narrow)
    adj = np.zeros((m, m), dtype=bool)
    if m == 0:
        return adj, []
    reps = np.array([c.min_site for c in narrow], dtype=np.int64)
    diams = np.array([c.diameter(g) for c in narrow], dtype=np.int64)
    tab = g.coord_table()[reps]
    for i in range(m):
        diff = np.abs(tab[i + 1:] - tab[i])
        diff = np.minimum(diff, g.n - diff)
        rep_dist = diff.max(axis=1)
        # representative distance bounds the union diameter from below,
        # rep distance plus both diameters from above
        lower = np.maximum(rep_dist, np.maximum(diams[i + 1:], diams[i]))
        upper = rep_dist + diams[i + 1:] + diams[i]
        sure = np.flatnonzero(2 * upper <= d2j) + i + 1
        maybe = np.flatnonzero((2 * lower <= d2j) & (2 * upper > d2j)) + i + 1
        for k in sure:
            adj[i, int(k)] = True
            adj[int(k), i] = True
        for k in maybe:
            k = int(k)
            if 2 * _union_diam(g, narrow[i], narrow[k]) <= d2j:
                adj[i, k] = True
                adj[k, i] = True
    members = [i for i in range(m) if adj[i].any()]
    return adj, members


# -- regime-specific level-0 constructions ------------------------------------


def build_low_lambda(g: TorusGeometry, A: SiteSet, D0: int) -> DormitoryHierarchy:
    """Singleton level-0 clusters, then the generic merge (d = 2, v = 1)."""
    if g.d != 2:
        raise DomainError("the singleton construction is for dimension 2")
    if len(A) * D0**2 < 288 * g.n**2:
        raise DomainError(
            f"|A| = {len(A)} is below the 288 n^2 / D0^2 threshold")
    singletons = [SiteSet.from_indices(g, [int(s)]) for s in A.indices]
    return build_generic(g, A, A, singletons, v=1, D0=D0)


def _circular_box_sum(grid: np.ndarray, radius: int) -> np.ndarray:
    """Integer box-filter sum with wraparound, separable along the axes."""
    out = grid.astype(np.int64)
    n = grid.shape[0]
    for axis in range(grid.ndim):
        arr = np.moveaxis(out, axis, 0)
        if 2 * radius + 1 >= n:
            arr = np.broadcast_to(arr.sum(axis=0, keepdims=True),
                                  arr.shape).copy()
        else:
            padded = np.concatenate([arr[n - radius:], arr, arr[:radius]],
                                    axis=0)
            cs = np.cumsum(padded, axis=0)
            zero = np.zeros((1,) + cs.shape[1:], dtype=np.int64)
            cs = np.concatenate([zero, cs], axis=0)
            arr = cs[2 * radius + 1:] - cs[:n]
        out = np.moveaxis(arr, 0, axis)
    return out


def build_high_lambda(g: TorusGeometry, A: SiteSet, r: int) -> DormitoryHierarchy:
    """Dense 8r-connected level-0 clusters, then the generic merge (d = 2).

    Level 0 keeps the sites of A that sit near a 2r-ball holding at least
    r^2 points of A; by construction every level-0 cluster C then has
    |C ∩ B(x, 4r)| >= r^2 for each of its sites.
    """
    if g.d != 2:
        raise DomainError("the dense construction is for dimension 2")
    if 2 * len(A) < g.n**2:
        raise DomainError(f"|A| = {len(A)} is below n^2 / 2")
    if g.n < 2 * r + 1:
        raise DomainError("need n >= 2r + 1")
    d0 = 96 * r**3
    grid = A.mask.reshape(g.n, g.n)
    ball_counts = _circular_box_sum(grid, 2 * r)
    heavy = ball_counts >= r * r
    size = min(4 * r + 1, g.n)
    near_heavy = ndimage.maximum_filter(heavy.astype(np.uint8), size=size,
                                        mode="wrap") > 0
    a0_mask = (grid & near_heavy).reshape(-1)
    A0 = SiteSet(g, a0_mask)
    if not A0:
        raise DomainError("the density screening left the level-0 set empty")
    components = g.r_components(A0, 8 * r)
    # defensive: the screening guarantees the density condition
    for c in components:
        near = _circular_box_sum(c.mask.reshape(g.n, g.n), 4 * r).reshape(-1)
        if (near[c.mask] < r * r).any():
            raise ConstructionFailedError(
                "density condition violated in a level-0 cluster")
    return build_generic(g, A, A0, components, v=r * r, D0=d0)


def trivial_hierarchy(g: TorusGeometry, A: SiteSet, v: int = 1,
                      D0: Optional[int] = None) -> DormitoryHierarchy:
    """One level, one cluster: the whole settling set."""
    if not A:
        raise DomainError("the settling set is empty")
    if len(A) < v:
        raise DomainError("v exceeds the settling set size")
    if D0 is None:
        D0 = max(g.n, 1)
    cluster = Cluster(sites=A.copy(), star=int(A.indices[0]), level=0, index=0)
    return DormitoryHierarchy(g, A, v, [D0], [A.copy()], [[cluster]])
