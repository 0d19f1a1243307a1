"""Geometry of the discrete torus (Z/nZ)^d.

Sites are flat integers in [0, n^d) with row-major encoding, so that site
sets can live in dense boolean masks of n^d bits and the stabilization
inner loops get cheap unions and intersections.  The metric is the
wrap-around sup-norm: per coordinate min(|a-b|, n-|a-b|), then the max
over coordinates.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DomainError


class TorusGeometry:
    """Side length ``n`` and dimension ``d`` of the torus, plus helpers."""

    def __init__(self, n: int, d: int):
        if n < 1 or d < 1:
            raise DomainError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        self.n = int(n)
        self.d = int(d)
        self.n_sites = self.n**self.d
        # strides[a] = n^(d-1-a); coordinate a of site s is (s // strides[a]) % n
        self.strides = np.array([self.n ** (self.d - 1 - a) for a in range(self.d)],
                                dtype=np.int64)
        self._coord_table = None
        self._neighbor_table = None

    def __repr__(self):
        return f"TorusGeometry(n={self.n}, d={self.d})"

    def __eq__(self, other):
        return (isinstance(other, TorusGeometry)
                and self.n == other.n and self.d == other.d)

    def __hash__(self):
        return hash((self.n, self.d))

    # -- site encoding ---------------------------------------------------

    def site_index(self, coords: Sequence[int]) -> int:
        if len(coords) != self.d:
            raise DomainError(f"expected {self.d} coordinates, got {len(coords)}")
        s = 0
        for c in coords:
            s = s * self.n + (int(c) % self.n)
        return s

    def coords(self, site: int) -> tuple[int, ...]:
        site = self._check_site(site)
        out = []
        for a in range(self.d):
            out.append((site // int(self.strides[a])) % self.n)
        return tuple(out)

    def _check_site(self, site) -> int:
        if not isinstance(site, (int, np.integer)):
            # allow coordinate tuples for convenience
            return self.site_index(site)
        site = int(site)
        if site < 0 or site >= self.n_sites:
            raise DomainError(f"site {site} out of range [0, {self.n_sites})")
        return site

    def coord_table(self) -> np.ndarray:
        """(n_sites, d) int array of coordinates, built lazily and cached."""
        if self._coord_table is None:
            idx = np.arange(self.n_sites, dtype=np.int64)
            cols = [(idx // self.strides[a]) % self.n for a in range(self.d)]
            self._coord_table = np.stack(cols, axis=1)
        return self._coord_table

    def neighbor(self, site: int, direction: int) -> int:
        """Nearest neighbour along axis direction>>1, sign (-1)^(direction&1)."""
        site = self._check_site(site)
        axis = direction >> 1
        stride = int(self.strides[axis])
        c = (site // stride) % self.n
        step = 1 if (direction & 1) == 0 else -1
        return site + ((c + step) % self.n - c) * stride

    def neighbor_table(self) -> np.ndarray:
        """(n_sites, 2d) table of nearest neighbours, built lazily."""
        if self._neighbor_table is None:
            tab = np.empty((self.n_sites, 2 * self.d), dtype=np.int64)
            for direction in range(2 * self.d):
                axis = direction >> 1
                stride = self.strides[axis]
                idx = np.arange(self.n_sites, dtype=np.int64)
                c = (idx // stride) % self.n
                step = 1 if (direction & 1) == 0 else -1
                tab[:, direction] = idx + ((c + step) % self.n - c) * stride
            self._neighbor_table = tab
        return self._neighbor_table

    # -- metric ----------------------------------------------------------

    def distance(self, x, y) -> int:
        """Wrap-around sup-norm distance between two sites."""
        x = self._check_site(x)
        y = self._check_site(y)
        best = 0
        for a in range(self.d):
            stride = int(self.strides[a])
            ca = (x // stride) % self.n
            cb = (y // stride) % self.n
            dd = abs(ca - cb)
            dd = min(dd, self.n - dd)
            if dd > best:
                best = dd
        return best

    def distances_from(self, x) -> np.ndarray:
        """Vector of distances from x to every site (length n_sites)."""
        x = self._check_site(x)
        tab = self.coord_table()
        xc = np.asarray(self.coords(x), dtype=np.int64)
        diff = np.abs(tab - xc)
        diff = np.minimum(diff, self.n - diff)
        return diff.max(axis=1)

    def ball(self, x, r: int) -> "SiteSet":
        """Closed sup-norm ball of radius r around x."""
        if r < 0:
            raise DomainError("ball radius must be >= 0")
        return SiteSet(self, self.distances_from(x) <= r)

    def diameter(self, sites: "SiteSet") -> int:
        """Max pairwise distance over a non-empty site set."""
        idx = sites.indices
        if idx.size == 0:
            raise DomainError("diameter of an empty set is undefined")
        return pairwise_diameter(self, idx, idx)

    def ball_deltas(self, r: int) -> np.ndarray:
        """(m, d) coordinate offsets covering the closed ball of radius r."""
        per_axis = np.unique(np.arange(-min(r, self.n - 1),
                                       min(r, self.n - 1) + 1) % self.n)
        grids = np.meshgrid(*([per_axis] * self.d), indexing="ij")
        return np.stack([gg.ravel() for gg in grids], axis=1).astype(np.int64)

    def r_components(self, sites: "SiteSet", r: int) -> list["SiteSet"]:
        """Partition into maximal r-connected components (r >= 1).

        Two sites are adjacent when their distance is at most r; a BFS
        visits each site once, probing its ball through precomputed
        coordinate offsets.
        """
        if r < 1:
            raise DomainError("r-connectivity needs r >= 1")
        idx = sites.indices
        if idx.size == 0:
            return []
        deltas = self.ball_deltas(r)
        tab = self.coord_table()
        unvisited = sites.mask.copy()
        comps = []
        for s in idx:
            s = int(s)
            if not unvisited[s]:
                continue
            unvisited[s] = False
            comp = [s]
            stack = [s]
            while stack:
                u = stack.pop()
                cand = ((tab[u] + deltas) % self.n) @ self.strides
                hits = cand[unvisited[cand]]
                if hits.size:
                    unvisited[hits] = False
                    comp.extend(int(t) for t in hits)
                    stack.extend(int(t) for t in hits)
            comps.append(SiteSet.from_indices(self, comp))
        comps.sort(key=lambda c: int(c.indices[0]))
        return comps

    def is_r_connected(self, sites: "SiteSet", r: int) -> bool:
        return len(self.r_components(sites, r)) == 1

    # -- random helpers --------------------------------------------------

    def random_subset(self, size: int, rng: np.random.Generator) -> "SiteSet":
        if size < 0 or size > self.n_sites:
            raise DomainError("subset size out of range")
        chosen = rng.choice(self.n_sites, size=size, replace=False)
        return SiteSet.from_indices(self, chosen)


def pairwise_diameter(g: TorusGeometry, idx_a: np.ndarray, idx_b: np.ndarray) -> int:
    """Max distance between two index arrays, vectorised per axis."""
    ta = g.coord_table()[idx_a]
    tb = g.coord_table()[idx_b]
    best = 0
    block = 512
    for start in range(0, ta.shape[0], block):
        ca = ta[start:start + block, None, :]
        diff = np.abs(ca - tb[None, :, :])
        np.minimum(diff, g.n - diff, out=diff)
        m = int(diff.max(axis=2).max()) if diff.size else 0
        if m > best:
            best = m
    return best


class SiteSet:
    """Dense-bitset set of torus sites with exact set algebra."""

    __slots__ = ("geometry", "mask")

    def __init__(self, geometry: TorusGeometry, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (geometry.n_sites,):
            raise DomainError("mask length must equal the number of sites")
        self.geometry = geometry
        self.mask = mask

    # -- constructors ----------------------------------------------------

    @classmethod
    def empty(cls, geometry: TorusGeometry) -> "SiteSet":
        return cls(geometry, np.zeros(geometry.n_sites, dtype=bool))

    @classmethod
    def full(cls, geometry: TorusGeometry) -> "SiteSet":
        return cls(geometry, np.ones(geometry.n_sites, dtype=bool))

    @classmethod
    def from_indices(cls, geometry: TorusGeometry, indices: Iterable) -> "SiteSet":
        mask = np.zeros(geometry.n_sites, dtype=bool)
        for s in indices:
            mask[geometry._check_site(s)] = True
        return cls(geometry, mask)

    def copy(self) -> "SiteSet":
        return SiteSet(self.geometry, self.mask.copy())

    # -- queries ----------------------------------------------------------

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __len__(self):
        return int(np.count_nonzero(self.mask))

    def __bool__(self):
        return bool(self.mask.any())

    def __contains__(self, site) -> bool:
        return bool(self.mask[self.geometry._check_site(site)])

    def __iter__(self) -> Iterator[int]:
        return iter(int(s) for s in self.indices)

    def __eq__(self, other):
        return (isinstance(other, SiteSet)
                and self.geometry == other.geometry
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.geometry, self.mask.tobytes()))

    def issubset(self, other: "SiteSet") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def isdisjoint(self, other: "SiteSet") -> bool:
        return not bool(np.any(self.mask & other.mask))

    # -- algebra ----------------------------------------------------------

    def __or__(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.geometry, self.mask | other.mask)

    def __and__(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.geometry, self.mask & other.mask)

    def __sub__(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.geometry, self.mask & ~other.mask)

    def __repr__(self):
        idx = self.indices
        shown = ", ".join(str(int(s)) for s in idx[:8])
        more = ", ..." if idx.size > 8 else ""
        return f"SiteSet({{{shown}{more}}}, size={idx.size})"
