"""Simple symmetric random walk on the torus: excursions and hitting rates.

An excursion ("loop") from x is the walk run until its first return to x;
its support is the set of sites visited strictly before the return, which
always includes x and at least one of its neighbours.  The escape function
estimated here is the probability that an excursion from x reaches a site
y at distance r before returning, which controls how likely a loop is to
wake a sleeper that far away.

On a finite torus the escape probability exceeds its infinite-lattice
limit because the walk can also reach y the long way around; in d = 1 the
exact value is (1/r + 1/(n-r)) / 2 against the 1/(2r) limit.  The torus
size is therefore an explicit parameter of every estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BudgetExceededError, DomainError
from .rng import TAG_WALK, derive_seed
from .torus import SiteSet, TorusGeometry

DEFAULT_WALK_CAP = 10**9


@dataclass
class LoopSupport:
    """Support of one excursion: origin plus everything hit before the return."""

    origin: int
    visited: SiteSet
    steps: int

    def __len__(self):
        return len(self.visited)


@dataclass
class UpsilonEstimate:
    """Monte Carlo estimate of the escape probability at distance r."""

    d: int
    r: int
    n: int
    samples: int
    hits: int

    @property
    def point_estimate(self) -> float:
        return self.hits / self.samples

    @property
    def std_error(self) -> float:
        p = self.point_estimate
        return math.sqrt(p * (1.0 - p) / self.samples)


def _resolve_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    raise DomainError("rng must be an integer seed or a numpy Generator")


def sample_loop(g: TorusGeometry, x, rng, step_cap: int = DEFAULT_WALK_CAP) -> LoopSupport:
    """Run one excursion from x and return its support.

    Deterministic given an integer seed.  Raises BudgetExceededError with
    the partial support attached if the excursion outlives step_cap.
    """
    x = g._check_site(x)
    if 2 * g.d > g.n_sites:
        raise DomainError("walk cannot move on this torus")
    seed = _resolve_seed(rng)
    wseed = np.uint64(derive_seed(seed, TAG_WALK, x, 0))
    visited_mask = np.zeros(g.n_sites, dtype=np.bool_)
    visited_list = np.empty(g.n_sites, dtype=np.int64)
    count, steps, status = kernels.walk_excursion(
        g.neighbor_table(), x, wseed, step_cap, visited_mask, visited_list)
    support = LoopSupport(origin=x, visited=SiteSet(g, visited_mask), steps=steps)
    if status != kernels.OK:
        raise BudgetExceededError(
            f"excursion from {x} exceeded {step_cap} steps", partial=support)
    return support


def exact_escape_probability_1d(n: int, r: int) -> float:
    """Gambler's ruin value of the escape probability on the n-cycle."""
    if not (1 <= r <= n // 2):
        raise DomainError("need 1 <= r <= n // 2")
    return 0.5 * (1.0 / r + 1.0 / (n - r))


def estimate_upsilon(d: int, r: int, n: int, samples: int, rng,
                     step_cap: int = DEFAULT_WALK_CAP) -> UpsilonEstimate:
    """Estimate P_x(T_y < T_x^+) for a pair at distance exactly r.

    By translation invariance the pair choice is irrelevant; x is the
    origin and y sits at +r along the first axis.
    """
    if samples < 1:
        raise DomainError("need at least one sample")
    g = TorusGeometry(n, d)
    if r < 1 or r > n // 2:
        raise DomainError(f"no site pair at distance {r} on a torus of side {n}")
    x = 0
    y = g.site_index((r,) + (0,) * (d - 1))
    seed = np.uint64(_resolve_seed(rng))
    hits, capped = kernels.hitting_mc(g.neighbor_table(), x, y,
                                      samples, seed, step_cap)
    if capped:
        raise BudgetExceededError(
            f"{capped} of {samples} excursions exceeded the walk cap",
            partial=UpsilonEstimate(d=d, r=r, n=n, samples=samples - capped,
                                    hits=hits))
    return UpsilonEstimate(d=d, r=r, n=n, samples=samples, hits=hits)


def fit_upsilon_constant(radii, n: int, samples: int, rng, d: int = 2,
                         step_cap: int = DEFAULT_WALK_CAP) -> float:
    """Empirical stand-in K_hat = min_r estimate(r) * ln(r) for d = 2.

    The logarithmic lower-bound shape only pins the constant up to the
    measurement, so K_hat is whatever the chosen radii support.
    """
    radii = list(radii)
    if not radii:
        raise DomainError("need at least one radius")
    if any(r < 2 for r in radii):
        raise DomainError("radii must be >= 2 so that ln r > 0")
    seed = _resolve_seed(rng)
    k_hat = math.inf
    for i, r in enumerate(radii):
        est = estimate_upsilon(d, r, n, samples, derive_seed(seed, TAG_WALK, i),
                               step_cap=step_cap)
        k_hat = min(k_hat, est.point_estimate * math.log(r))
    return k_hat


def sample_support_sizes(g: TorusGeometry, x, samples: int, rng,
                         step_cap: int = DEFAULT_WALK_CAP) -> np.ndarray:
    """Support sizes of repeated excursions (helper for distribution tests)."""
    x = g._check_site(x)
    seed = np.uint64(_resolve_seed(rng))
    sizes, capped = kernels.excursion_size_mc(g.neighbor_table(), x,
                                              samples, seed, step_cap)
    if capped:
        raise BudgetExceededError(f"{capped} excursions exceeded the walk cap",
                                  partial=sizes)
    return sizes
