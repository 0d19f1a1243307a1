import numpy as np
import pytest

from arwlab.arw_core import (FifoPolicy, InstructionStacks, LowestIndexPolicy,
                             ReferenceArwState, ScriptedPolicy, SLEEP, JUMP,
                             check_abelian, couple_and_compare,
                             stabilize_reference, topple)
from arwlab.errors import DomainError, IllegalTopplingError
from arwlab.experiments import ks_distance_geometric
from arwlab.hierarchy import DormitoryHierarchy, trivial_hierarchy
from arwlab.rng import TAG_CELL, derive_seed
from arwlab.torus import SiteSet, TorusGeometry


def make_state(n=5, d=2, lam=1.0, seed=0, a_size=13, counts=None):
    g = TorusGeometry(n, d)
    rng = np.random.default_rng(seed)
    A = g.random_subset(a_size, rng)
    return ReferenceArwState.from_settling_set(g, A, lam, seed, counts=counts)


def test_instructions_are_deterministic_and_respect_settling_set():
    g = TorusGeometry(6, 2)
    A = SiteSet.from_indices(g, range(12))
    stacks = InstructionStacks(g, A, 0.7, 42)
    for site in (0, 3, 20, 35):
        for h in range(50):
            a = stacks.instruction(site, h)
            b = stacks.instruction(site, h)
            assert a == b
            if not A.mask[site]:
                assert a.kind == JUMP
            if a.kind == JUMP:
                assert g.distance(site, a.target) == 1


def test_instruction_sleep_frequency():
    g = TorusGeometry(4, 1)
    A = SiteSet.full(g)
    lam = 2.0
    stacks = InstructionStacks(g, A, lam, 9)
    n = 50000
    sleeps = sum(stacks.instruction(1, h).kind == SLEEP for h in range(n))
    target = lam / (1 + lam)
    assert abs(sleeps / n - target) < 4 * np.sqrt(target * (1 - target) / n)


def _find_height(stacks, site, kind, start=0):
    h = start
    while stacks.instruction(site, h).kind != kind:
        h += 1
    return h


def test_topple_sleep_branches():
    g = TorusGeometry(5, 1)
    A = SiteSet.full(g)
    stacks = InstructionStacks(g, A, 1.0, 3)
    h_sleep = _find_height(stacks, 2, SLEEP)

    # lone particle falls asleep on a sleep instruction
    counts = np.zeros(5, dtype=np.int64)
    counts[2] = 1
    state = ReferenceArwState(stacks, counts)
    state.odometer[2] = h_sleep
    topple(state, 2)
    assert state.asleep[2] and state.counts[2] == 1

    # with two particles the same instruction only burns the odometer
    counts = np.zeros(5, dtype=np.int64)
    counts[2] = 2
    state = ReferenceArwState(stacks, counts)
    state.odometer[2] = h_sleep
    topple(state, 2)
    assert not state.asleep[2] and state.counts[2] == 2
    assert state.odometer[2] == h_sleep + 1


def test_jump_wakes_sleeper_at_destination():
    g = TorusGeometry(5, 1)
    A = SiteSet.full(g)
    stacks = InstructionStacks(g, A, 1.0, 17)
    h_jump = _find_height(stacks, 0, JUMP)
    target = stacks.instruction(0, h_jump).target
    counts = np.zeros(5, dtype=np.int64)
    counts[0] = 1
    counts[target] = 1
    asleep = np.zeros(5, dtype=bool)
    asleep[target] = True
    state = ReferenceArwState(stacks, counts, asleep=asleep)
    state.odometer[0] = h_jump
    topple(state, 0)
    assert state.counts[target] == 2
    assert not state.asleep[target]


def test_toppling_stable_site_is_rejected():
    state = make_state()
    empty = int(np.flatnonzero(state.counts == 0)[0])
    with pytest.raises(IllegalTopplingError):
        topple(state, empty)


def test_particle_conservation_under_random_topplings():
    state = make_state(seed=5)
    total = state.total_particles()
    rng = np.random.default_rng(0)
    for _ in range(200):
        active = state.active_sites()
        if active.size == 0:
            break
        topple(state, int(rng.choice(active)))
        assert state.total_particles() == total


def test_zero_particles_is_a_stable_noop():
    g = TorusGeometry(4, 2)
    state = ReferenceArwState.from_settling_set(
        g, SiteSet.empty(g), 1.0, 0)
    res = stabilize_reference(state)
    assert res.m_a == 0 and res.consumed == 0 and res.status == "stabilized"


def test_budget_exhaustion_is_an_outcome_with_partial_odometer():
    state = make_state(n=6, a_size=30, lam=0.2, seed=2)
    res = stabilize_reference(state, budget=5)
    assert res.exceeded
    assert res.consumed == 5
    assert res.state.odometer.sum() == 5


def test_single_site_settling_count_is_geometric():
    # with a one-site settling set, every excursion returns before the
    # next settling-set instruction, so the count of instructions consumed
    # there until the first sleep is geometric with parameter lam/(1+lam)
    g = TorusGeometry(4, 1)
    A = SiteSet.from_indices(g, [1])
    lam = 1.0
    values = []
    for i in range(10**5):
        state = ReferenceArwState.from_settling_set(g, A, lam, derive_seed(8, TAG_CELL, i))
        res = stabilize_reference(state)
        values.append(res.m_a)
    ks = ks_distance_geometric(np.array(values), lam / (1 + lam))
    assert ks < 0.01


def test_abelian_small_instances():
    for seed in range(5):
        state = make_state(seed=seed)
        report = check_abelian(state, num_orders=8, policy_seed=seed)
        assert report.identical, report.mismatches


def test_abelian_adversarial_vs_fifo_one_dim():
    g = TorusGeometry(6, 1)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        A = g.random_subset(4, rng)
        base = ReferenceArwState.from_settling_set(g, A, 0.8, seed)
        runs = []
        for policy in (FifoPolicy(), ScriptedPolicy(list(reversed(range(6)))),
                       LowestIndexPolicy()):
            trial = base.copy()
            stabilize_reference(trial, policy=policy, use_kernel=False)
            runs.append((trial.counts.copy(), trial.asleep.copy(),
                         trial.odometer.copy()))
        for other in runs[1:]:
            for a, b in zip(runs[0], other):
                assert np.array_equal(a, b)


def test_monotone_in_particle_count_with_coupled_stacks():
    g = TorusGeometry(5, 2)
    rng = np.random.default_rng(123)
    for trial in range(100):
        seed = int(rng.integers(2**62))
        A = g.random_subset(15, np.random.default_rng(seed))
        idx = A.indices
        small = rng.integers(1, 10)
        chosen = rng.choice(idx, size=int(small) + 3, replace=False)
        sub = chosen[:int(small)]
        counts_small = np.zeros(g.n_sites, dtype=np.int64)
        counts_small[sub] = 1
        counts_big = np.zeros(g.n_sites, dtype=np.int64)
        counts_big[chosen] = 1
        st_small = ReferenceArwState.from_settling_set(g, A, 1.0, seed,
                                                       counts=counts_small)
        st_big = ReferenceArwState.from_settling_set(g, A, 1.0, seed,
                                                     counts=counts_big)
        m_small = stabilize_reference(st_small).m_a
        m_big = stabilize_reference(st_big).m_a
        assert m_small <= m_big


def test_budget_exceedance_at_full_density_smoke():
    # at density one and a small sleep rate, stabilization outlives any
    # modest budget
    g = TorusGeometry(8, 2)
    exceeded = 0
    for seed in range(5):
        state = ReferenceArwState.from_settling_set(g, SiteSet.full(g), 0.1,
                                                    seed)
        res = stabilize_reference(state, budget=3 * 10**5)
        exceeded += res.exceeded
    assert exceeded == 5


def _pair_split_hierarchy(g, A, d0):
    idx = [int(s) for s in A.indices]
    half = len(idx) // 2
    return DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[d0], levels=[A, A],
        partitions=[[idx[:half], idx[half:]], [idx]])


def test_coupling_singleton_equality():
    g = TorusGeometry(5, 1)
    A = SiteSet.from_indices(g, [2])
    h = trivial_hierarchy(g, A)
    for seed in range(25):
        res = couple_and_compare(h, 1.5, seed)
        assert res.dominates
        assert res.h_loops == res.m_a


def test_coupling_empty_settling_set():
    g = TorusGeometry(4, 1)
    A = SiteSet.empty(g)
    h = DormitoryHierarchy(g, A, 1, [4], [A], [[]])
    res = couple_and_compare(h, 1.0, 0)
    assert res.m_a == 0 and res.h_loops == 0 and res.dominates


def test_coupling_dominates_on_split_hierarchies():
    g = TorusGeometry(6, 2)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = g.random_subset(18, rng)
        h = _pair_split_hierarchy(g, A, 6)
        res = couple_and_compare(h, 2.0, seed)
        assert res.dominates, (seed, res)
        assert res.h_loops >= len(A)  # every settling site sleeps at least once
