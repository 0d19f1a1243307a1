"""Coloured-loop representation of the constrained model.

State is the active subset R of the settling set (every site of A always
hosts exactly one particle, active or sleeping), a per-site step odometer
h and a loop odometer l.  A step at an active site x reads the sleep bit
I(x, h(x)): on 1 the site falls asleep; on 0 it performs a loop whose
colour is J(x, l(x)) and whose support is an excursion keyed by
(x, l(x), colour), waking the sleeping sites of the support that lie in
the colour's target set w(x, colour).

Clusters are stabilized by toppling f(R ∩ C) until C is asleep, where the
procedure f gives absolute priority to the distinguished vertex; merged
clusters alternate full stabilizations of their two parts (the ping-pong
rally) until both are quiet.  All randomness is keyed, so identical seeds
replay identical trajectories regardless of engine (compiled or traced).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import BudgetExceededError, DomainError, IllegalTopplingError
from .hierarchy import Cluster, DormitoryHierarchy
from .rng import TAG_GAMMA, TAG_LOOP_I, TAG_LOOP_J, sleep_threshold, trailing_zeros, u64
from .torus import SiteSet, TorusGeometry
from .walk import DEFAULT_WALK_CAP

COMPLETED = "completed"
STEP_BUDGET = "step_budget"
WALK_BUDGET = "walk_budget"

_STATUS = {kernels.OK: COMPLETED, kernels.STEP_BUDGET: STEP_BUDGET,
           kernels.WALK_BUDGET: WALK_BUDGET}


class LoopModelState:
    """Active set R plus odometers h and l over the torus."""

    def __init__(self, hierarchy: DormitoryHierarchy, lam: float, seed: int,
                 active: Optional[SiteSet] = None):
        if lam <= 0:
            raise DomainError("sleep rate must be positive")
        self.hierarchy = hierarchy
        self.geometry = hierarchy.geometry
        self.lam = float(lam)
        self.seed = int(seed)
        self.threshold = sleep_threshold(lam)
        n = self.geometry.n_sites
        if active is None:
            self.R = hierarchy.A.mask.copy()
        else:
            if not active.issubset(hierarchy.A):
                raise DomainError("active sites must lie in the settling set")
            self.R = active.mask.copy()
        self.h = np.zeros(n, dtype=np.int64)
        self.l = np.zeros(n, dtype=np.int64)

    def copy(self) -> "LoopModelState":
        dup = LoopModelState.__new__(LoopModelState)
        dup.hierarchy = self.hierarchy
        dup.geometry = self.geometry
        dup.lam = self.lam
        dup.seed = self.seed
        dup.threshold = self.threshold
        dup.R = self.R.copy()
        dup.h = self.h.copy()
        dup.l = self.l.copy()
        return dup

    def active_set(self) -> SiteSet:
        return SiteSet(self.geometry, self.R.copy())

    def sleep_bit(self, x: int, height: int) -> bool:
        return np.uint64(u64(self.seed, TAG_LOOP_I, x, height)) < self.threshold

    def colour(self, x: int, loop_index: int) -> int:
        return trailing_zeros(u64(self.seed, TAG_LOOP_J, x, loop_index))


@dataclass
class StabilizationRecord:
    star: int
    steps: int = 0
    sleeps_star: int = 0
    loops_star: int = 0
    loops_by_colour: dict = field(default_factory=dict)
    pingpong_rounds: int = 0
    budget_status: str = COMPLETED
    n_b_visits: Optional[int] = None
    exit_count: Optional[int] = None
    exit_violations: Optional[int] = None
    exits: Optional[list] = None

    @property
    def completed(self) -> bool:
        return self.budget_status == COMPLETED


# -- toppling procedures ------------------------------------------------------


class TopplingProcedure:
    """Rule mapping the active part of a cluster to the site to topple.

    Must return a member of the active set and must return the
    distinguished vertex whenever it is active.
    """

    kernel_mode: Optional[int] = None
    sel_r: int = 0
    beta: Fraction = Fraction(1, 1)

    def __call__(self, state: LoopModelState, cluster: Cluster) -> int:
        raise NotImplementedError


class LowestIndexProcedure(TopplingProcedure):
    """Distinguished vertex first, then the smallest active site."""

    kernel_mode = kernels.PROC_LOWEST

    def __call__(self, state, cluster):
        if state.R[cluster.star]:
            return cluster.star
        active = cluster.sites.indices[state.R[cluster.sites.indices]]
        if active.size == 0:
            raise IllegalTopplingError("cluster is already stable")
        return int(active[0])


class SelectProcedure(TopplingProcedure):
    """Constructive rule: when few sites are active, topple one with many
    sleepers in its 16r-ball (distinguished vertex always first)."""

    kernel_mode = kernels.PROC_SELECT

    def __init__(self, r: int, v: int, beta: Fraction):
        if not isinstance(beta, Fraction):
            beta = Fraction(beta)
        if not (0 < beta < 1):
            raise DomainError("beta must lie in (0, 1)")
        self.sel_r = int(r)
        self.v = int(v)
        self.beta = beta

    def __call__(self, state, cluster):
        if state.R[cluster.star]:
            return cluster.star
        sites = cluster.sites.indices
        active_mask = state.R[sites]
        n_active = int(active_mask.sum())
        if n_active == 0:
            raise IllegalTopplingError("cluster is already stable")
        if n_active * self.beta.denominator <= self.beta.numerator * sites.size:
            return select_topple_site(state.geometry, cluster.sites,
                                      SiteSet(state.geometry, state.R & cluster.sites.mask),
                                      self.sel_r, self.v, self.beta,
                                      cluster.star)
        return int(sites[active_mask][0])


def select_topple_site(g: TorusGeometry, cluster_sites: SiteSet,
                       active: SiteSet, r: int, v: int, beta,
                       star: int) -> int:
    """Pick the next site to topple per the dense-cluster rule.

    Returns the distinguished vertex if active.  Otherwise, when at most
    a beta fraction of the cluster is active, walks a maximal
    8r-separated net to a ball rich in sleepers and follows sleeping
    sites towards the active set, returning an active site with at least
    (1 - beta) v sleepers within distance 16r.  With more activity than
    that, returns the lowest-index active site.
    """
    c_sites = cluster_sites.indices
    if c_sites.size == 0:
        raise DomainError("empty cluster")
    act = active.mask
    n_active = int(np.count_nonzero(act[c_sites]))
    if n_active == 0:
        raise DomainError("no active site in the cluster")
    if act[star]:
        return int(star)
    if not isinstance(beta, Fraction):
        beta = Fraction(beta)
    if n_active * beta.denominator > beta.numerator * c_sites.size:
        return int(c_sites[act[c_sites]][0])
    dist_c = kernels._pairwise_dist(g.n, g.d, g.strides, c_sites)
    net = kernels._greedy_net(dist_c, 8 * r)
    return int(kernels.select_site(act, c_sites, dist_c, net, r))


# -- single step (trace engine) ----------------------------------------------


def step_topple(state: LoopModelState, x: int,
                walk_cap: int = DEFAULT_WALK_CAP,
                trace: Optional[list] = None) -> LoopModelState:
    """One sleep-or-loop step at the active site x, in place.

    Bit-for-bit identical to the compiled engine: the same keyed streams
    drive the sleep decision, the loop colour and the excursion shape.
    """
    g = state.geometry
    x = g._check_site(x)
    if not state.R[x]:
        raise IllegalTopplingError(f"site {x} holds no active particle")
    if state.sleep_bit(x, int(state.h[x])):
        state.R[x] = False
        state.h[x] += 1
        if trace is not None:
            trace.append((x, "sleep", None, 0))
        return state
    j = state.colour(x, int(state.l[x]))
    wseed = np.uint64(u64(state.seed, TAG_GAMMA + j, x, int(state.l[x])))
    visited_mask = np.zeros(g.n_sites, dtype=np.bool_)
    visited_list = np.empty(g.n_sites, dtype=np.int64)
    count, _, status = kernels.walk_excursion(
        g.neighbor_table(), x, wseed, walk_cap, visited_mask, visited_list)
    if status != kernels.OK:
        raise BudgetExceededError(f"excursion from {x} exceeded the walk cap",
                                  partial=state)
    woken = visited_mask & state.hierarchy.w_mask(x, j) & ~state.R
    state.R |= woken
    state.h[x] += 1
    state.l[x] += 1
    if trace is not None:
        trace.append((x, "loop", j, int(np.count_nonzero(woken))))
    return state


# -- level-0 stabilization -----------------------------------------------------


def _require_leaf(cluster: Cluster):
    if cluster.children:
        raise DomainError("level-0 stabilization needs a level-0 cluster")


def stabilize_level0(state: LoopModelState, cluster: Cluster,
                     procedure: Optional[TopplingProcedure] = None,
                     budget: int = 10**12,
                     walk_cap: int = DEFAULT_WALK_CAP,
                     track_boundary: bool = False,
                     beta: Optional[Fraction] = None,
                     exit_log_cap: int = 1 << 14,
                     use_kernel: Optional[bool] = None,
                     trace: Optional[list] = None,
                     raise_on_budget: bool = True) -> StabilizationRecord:
    """Topple f(R ∩ C) until the cluster is asleep; counters are returned.

    Continues from the state's current odometers, so repeated
    stabilizations of overlapping clusters chain correctly.  On budget
    exhaustion the partial record is raised (or returned when
    raise_on_budget is false).
    """
    _require_leaf(cluster)
    procedure = procedure or LowestIndexProcedure()
    if track_boundary and beta is None:
        beta = procedure.beta
    if use_kernel is None:
        use_kernel = trace is None and procedure.kernel_mode is not None
    if use_kernel:
        record = _kernel_leaf(state, cluster, procedure, budget, walk_cap,
                              track_boundary, beta, exit_log_cap)
    else:
        record = _python_leaf(state, cluster, procedure, budget, walk_cap,
                              track_boundary, beta, trace)
    if record.budget_status != COMPLETED and raise_on_budget:
        raise BudgetExceededError(
            f"stabilization ran out of {record.budget_status.replace('_', ' ')}",
            partial=record)
    return record


def _kernel_leaf(state, cluster, procedure, budget, walk_cap,
                 track_boundary, beta, exit_log_cap) -> StabilizationRecord:
    g = state.geometry
    h = state.hierarchy
    targets, offsets = h.star_targets(cluster)
    colour_counts = np.zeros(64, dtype=np.int64)
    exit_log = np.zeros((exit_log_cap if track_boundary else 1, 2),
                        dtype=np.int64)
    out = np.zeros(8, dtype=np.int64)
    beta = beta if beta is not None else Fraction(1, 1)
    kernels.cluster_stabilize(
        g.n, g.d, g.strides, g.neighbor_table(),
        state.R, state.h, state.l,
        cluster.sites.indices.astype(np.int64), cluster.sites.mask,
        int(cluster.star),
        targets, offsets,
        state.threshold, np.uint64(state.seed),
        int(procedure.kernel_mode), int(procedure.sel_r),
        int(beta.numerator), int(beta.denominator),
        int(budget), int(walk_cap),
        bool(track_boundary),
        colour_counts, exit_log, out)
    record = StabilizationRecord(
        star=int(cluster.star),
        steps=int(out[1]),
        sleeps_star=int(out[2]),
        loops_star=int(out[3]),
        loops_by_colour={j: int(c) for j, c in enumerate(colour_counts) if c},
        budget_status=_STATUS[int(out[0])],
    )
    if track_boundary:
        record.n_b_visits = int(out[4])
        record.exit_count = int(out[5])
        record.exit_violations = int(out[6])
        kept = min(record.exit_count, exit_log_cap)
        record.exits = [(int(a), bool(s)) for a, s in exit_log[:kept]]
    return record


def _python_leaf(state, cluster, procedure, budget, walk_cap,
                 track_boundary, beta, trace) -> StabilizationRecord:
    record = StabilizationRecord(star=int(cluster.star))
    sites = cluster.sites.indices
    cmask = cluster.sites.mask
    nc = sites.size
    cur = int(np.count_nonzero(state.R & cmask))
    if track_boundary:
        bn, bd = beta.numerator, beta.denominator
        in_b = cur * bd > bn * nc
        record.n_b_visits = 1 if in_b else 0
        record.exit_count = 0
        record.exit_violations = 0
        record.exits = []
        beta_floor = (bn * nc) // bd
    l_before = int(state.l[cluster.star])
    while cur > 0:
        if record.steps >= budget:
            record.budget_status = STEP_BUDGET
            break
        x = procedure(state, cluster)
        if not state.R[x] or not cmask[x]:
            raise IllegalTopplingError(
                "procedure returned a stable or foreign site")
        if state.R[cluster.star] and x != cluster.star:
            raise IllegalTopplingError(
                "procedure ignored the distinguished vertex priority")
        try:
            step_topple(state, x, walk_cap=walk_cap, trace=trace)
        except BudgetExceededError:
            record.budget_status = WALK_BUDGET
            break
        record.steps += 1
        new_cur = int(np.count_nonzero(state.R & cmask))
        if x == cluster.star:
            if state.R[x]:
                record.loops_star += 1
            else:
                record.sleeps_star += 1
        if track_boundary:
            now_in_b = new_cur * bd > bn * nc
            if in_b and not now_in_b:
                star_active = bool(state.R[cluster.star])
                record.exit_count += 1
                record.exits.append((new_cur, star_active))
                if new_cur != beta_floor or star_active:
                    record.exit_violations += 1
            elif not in_b and now_in_b:
                record.n_b_visits += 1
            in_b = now_in_b
        cur = new_cur
    for l in range(l_before, int(state.l[cluster.star])):
        j = state.colour(cluster.star, l)
        record.loops_by_colour[j] = record.loops_by_colour.get(j, 0) + 1
    return record


# -- recursive stabilization ---------------------------------------------------


def stabilize_recursive(state: LoopModelState, cluster: Cluster,
                        procedures=None,
                        budget: int = 10**12,
                        walk_cap: int = DEFAULT_WALK_CAP,
                        use_kernel: bool = True,
                        raise_on_budget: bool = True) -> StabilizationRecord:
    """Stabilize a cluster of any level via the alternating rally.

    A merged cluster alternates full stabilizations of its two parts
    (the part owning the distinguished vertex moves first) until both
    are quiet; pingpong_rounds counts how many alternations began with
    each part fully active.  procedures maps level-0 cluster indices to
    toppling procedures (a single procedure applies to every leaf).
    """
    record = _stab_rec(state, cluster, procedures, budget, walk_cap, use_kernel)
    if record.budget_status != COMPLETED and raise_on_budget:
        raise BudgetExceededError(
            f"stabilization ran out of {record.budget_status.replace('_', ' ')}",
            partial=record)
    return record


def _leaf_procedure(procedures, cluster) -> Optional[TopplingProcedure]:
    if procedures is None or isinstance(procedures, TopplingProcedure):
        return procedures
    return procedures.get(cluster.index)


def _stab_rec(state, cluster, procedures, budget, walk_cap, use_kernel):
    if not cluster.children:
        return stabilize_level0(state, cluster,
                                procedure=_leaf_procedure(procedures, cluster),
                                budget=budget, walk_cap=walk_cap,
                                use_kernel=use_kernel, raise_on_budget=False)
    if len(cluster.children) == 1:
        rec = _stab_rec(state, cluster.children[0], procedures, budget,
                        walk_cap, use_kernel)
        rec.star = cluster.star
        return rec

    c0, c1 = state.hierarchy.ordered_children(cluster)
    cmask = cluster.sites.mask
    idx0 = c0.sites.indices
    idx1 = c1.sites.indices
    record = StabilizationRecord(star=int(cluster.star))
    h_before = int(state.h[cluster.star])
    l_before = int(state.l[cluster.star])
    rounds = None
    s = 0
    while True:
        part, idx = (c0, idx0) if s % 2 == 0 else (c1, idx1)
        if rounds is None and s >= 2:
            if not bool(state.R[idx].all()):
                rounds = s // 2 if s % 2 == 0 else (s - 1) // 2
        if not bool((state.R & cmask).any()):
            if rounds is None:
                s += 1
                continue
            break
        sub = _stab_rec(state, part, procedures, budget - record.steps,
                        walk_cap, use_kernel)
        record.steps += sub.steps
        if sub.budget_status != COMPLETED:
            record.budget_status = sub.budget_status
            break
        s += 1
    record.pingpong_rounds = rounds if rounds is not None else 0
    record.sleeps_star = (int(state.h[cluster.star]) - h_before) - \
        (int(state.l[cluster.star]) - l_before)
    record.loops_star = int(state.l[cluster.star]) - l_before
    for l in range(l_before, int(state.l[cluster.star])):
        j = state.colour(cluster.star, l)
        record.loops_by_colour[j] = record.loops_by_colour.get(j, 0) + 1
    return record


def metastability_trace(state: LoopModelState, cluster: Cluster,
                        procedure: TopplingProcedure, beta,
                        budget: int = 10**12,
                        walk_cap: int = DEFAULT_WALK_CAP,
                        exit_log_cap: int = 1 << 14) -> StabilizationRecord:
    """Level-0 stabilization with bookkeeping of the high-activity set.

    B is the set of configurations with more than beta |C| active sites
    in C; the record carries the number of visits to B, and every exit
    configuration's activity count and distinguished-vertex status (the
    exact law: exits have exactly floor(beta |C|) active sites and a
    sleeping distinguished vertex).  Budget exhaustion yields a partial
    trace, not an error.
    """
    if not isinstance(beta, Fraction):
        beta = Fraction(beta)
    if not (0 < beta < 1):
        raise DomainError("beta must lie in (0, 1)")
    return stabilize_level0(state, cluster, procedure=procedure,
                            budget=budget, walk_cap=walk_cap,
                            track_boundary=True, beta=beta,
                            exit_log_cap=exit_log_cap,
                            raise_on_budget=False)
