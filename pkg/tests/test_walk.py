import math

import numpy as np
import pytest

from arwlab.errors import BudgetExceededError, DomainError
from arwlab.rng import TAG_WALK, derive_seed
from arwlab.torus import SiteSet, TorusGeometry
from arwlab import walk


def test_two_site_excursion_is_forced():
    g = TorusGeometry(2, 1)
    for seed in range(20):
        support = walk.sample_loop(g, 0, seed)
        assert sorted(support.visited) == [0, 1]
        assert support.steps == 2


def test_support_contains_origin_and_a_neighbour():
    g = TorusGeometry(8, 2)
    for seed in range(30):
        support = walk.sample_loop(g, 11, seed)
        assert 11 in support.visited
        assert len(support) >= 2
        neighbours = {g.neighbor(11, k) for k in range(4)}
        assert neighbours & set(support.visited)


def test_support_is_a_connected_walk_trace():
    g = TorusGeometry(6, 2)
    for seed in range(20):
        support = walk.sample_loop(g, 0, seed)
        assert len(g.r_components(support.visited, 1)) == 1


def test_determinism_given_seed():
    g = TorusGeometry(12, 2)
    a = walk.sample_loop(g, 5, 123)
    b = walk.sample_loop(g, 5, 123)
    assert a.visited == b.visited and a.steps == b.steps


def test_three_cycle_short_excursion_probability():
    # on the 3-cycle an excursion covers only 2 sites iff it backtracks
    # immediately, which has probability 1/2 (enumeration of 2-step paths)
    g = TorusGeometry(3, 1)
    sizes = walk.sample_support_sizes(g, 0, 10**6, 5)
    frac = float(np.mean(sizes == 2))
    assert abs(frac - 0.5) < 0.003


def test_walk_budget_error_carries_partial_state():
    g = TorusGeometry(64, 2)
    with pytest.raises(BudgetExceededError) as err:
        # an excursion on a big torus essentially never closes in 3 steps
        walk.sample_loop(g, 0, 7, step_cap=3)
    assert err.value.partial is not None
    assert 0 in err.value.partial.visited


def test_upsilon_matches_exact_cycle_law():
    # exact escape probability on the n-cycle: (1/r + 1/(n-r)) / 2
    for r in (1, 2, 5, 10):
        n = 4 * r
        est = walk.estimate_upsilon(1, r, n, 10**5, seed_for(r))
        exact = walk.exact_escape_probability_1d(n, r)
        assert abs(est.point_estimate - exact) <= 4 * est.std_error + 1e-9


def seed_for(r):
    return derive_seed(2024, TAG_WALK, r)


def test_upsilon_converges_to_infinite_line_value():
    # the wrap-around bias 1/(2(n-r)) vanishes as the torus grows, leaving
    # the gambler's-ruin value 1/(2r)
    est = walk.estimate_upsilon(1, 2, 512, 4 * 10**5, 99)
    assert abs(est.point_estimate - 0.25) < 0.005


def test_upsilon_trivial_two_site():
    est = walk.estimate_upsilon(1, 1, 2, 1000, 1)
    assert est.point_estimate == 1.0


def test_upsilon_monotone_in_distance():
    a = walk.estimate_upsilon(2, 8, 64, 2 * 10**4, 11)
    b = walk.estimate_upsilon(2, 16, 64, 2 * 10**4, 12)
    combined = math.hypot(a.std_error, b.std_error)
    assert a.point_estimate >= b.point_estimate - 3 * combined


def test_upsilon_domain_error_when_no_pair_exists():
    with pytest.raises(DomainError):
        walk.estimate_upsilon(1, 6, 10, 100, 0)


def test_fit_constant_single_radius_is_definition():
    k_hat = walk.fit_upsilon_constant([2], 32, 20000, 77)
    est = walk.estimate_upsilon(2, 2, 32, 20000, derive_seed(77, TAG_WALK, 0))
    assert k_hat == pytest.approx(est.point_estimate * math.log(2))


def test_fit_constant_positive_on_radius_grid():
    k_hat = walk.fit_upsilon_constant([4, 8, 16, 32], 128, 20000, 5)
    assert k_hat > 0


def test_fit_constant_rejects_radius_one():
    with pytest.raises(DomainError):
        walk.fit_upsilon_constant([1, 2], 32, 100, 0)
