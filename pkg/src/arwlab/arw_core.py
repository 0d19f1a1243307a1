"""Site-wise reference model with instruction stacks.

Particles hop with uniform jump instructions and try to sleep with
probability lam/(1+lam) per instruction, but sleep instructions are only
drawn on the settling set A ("no sleep outside A").  Instructions are a
pure function of (seed, site, height), so the same stack can be replayed
under any toppling order; the final configuration and per-site odometer
must then agree exactly, which check_abelian verifies.

couple_and_compare runs the coloured-loop strategy reading from the same
stacks while a shadow copy of the reference model executes the identical
instruction sequence with no wake-ups ignored; the loop strategy is a
legal toppling prefix of the reference run, giving the pathwise bound
H(A_J) <= M_A checked here.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import BudgetExceededError, DomainError, IllegalTopplingError
from .rng import (
    TAG_LOOP_J,
    TAG_REF_INSTR,
    sleep_threshold,
    trailing_zeros,
    u64,
)
from .torus import SiteSet, TorusGeometry

SLEEP = "sleep"
JUMP = "jump"


@dataclass(frozen=True)
class Instruction:
    kind: str
    target: Optional[int] = None


class InstructionStacks:
    """Counter-based stack of toppling instructions over the torus."""

    def __init__(self, geometry: TorusGeometry, settling: SiteSet,
                 lam: float, seed: int):
        if lam <= 0:
            raise DomainError("sleep rate must be positive")
        self.geometry = geometry
        self.settling = settling
        self.lam = float(lam)
        self.seed = int(seed)
        self.threshold = sleep_threshold(lam)

    def instruction(self, site: int, height: int) -> Instruction:
        g = self.geometry
        site = g._check_site(site)
        on_a = bool(self.settling.mask[site])
        u = np.uint64(u64(self.seed, TAG_REF_INSTR, site, height))
        if on_a and u < self.threshold:
            return Instruction(SLEEP)
        ud = int(u - self.threshold) if on_a else int(u)
        direction = ud % (2 * g.d)
        return Instruction(JUMP, g.neighbor(site, direction))

    def loop_colour(self, site: int, loop_index: int) -> int:
        """Colour of the loop with index loop_index at site (geometric - 1)."""
        return trailing_zeros(u64(self.seed, TAG_LOOP_J, site, loop_index))


class ReferenceArwState:
    """Particle counts, sleep flags and odometer of the reference model."""

    def __init__(self, stacks: InstructionStacks, counts: np.ndarray,
                 asleep: Optional[np.ndarray] = None,
                 odometer: Optional[np.ndarray] = None):
        n = stacks.geometry.n_sites
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (n,) or (counts < 0).any():
            raise DomainError("counts must be a nonnegative vector over the sites")
        self.stacks = stacks
        self.counts = counts
        self.asleep = (np.zeros(n, dtype=bool) if asleep is None
                       else np.asarray(asleep, dtype=bool).copy())
        self.odometer = (np.zeros(n, dtype=np.int64) if odometer is None
                         else np.asarray(odometer, dtype=np.int64).copy())
        bad = self.asleep & (self.counts != 1)
        if bad.any():
            raise DomainError("a sleeping particle must be alone on its site")

    @classmethod
    def from_settling_set(cls, geometry: TorusGeometry, settling: SiteSet,
                          lam: float, seed: int,
                          counts: Optional[np.ndarray] = None) -> "ReferenceArwState":
        """Default initial condition: one active particle per site of A."""
        stacks = InstructionStacks(geometry, settling, lam, seed)
        if counts is None:
            counts = settling.mask.astype(np.int64)
        return cls(stacks, np.array(counts, dtype=np.int64))

    @property
    def geometry(self) -> TorusGeometry:
        return self.stacks.geometry

    def copy(self) -> "ReferenceArwState":
        return ReferenceArwState(self.stacks, self.counts.copy(),
                                 self.asleep, self.odometer)

    def is_active(self, site: int) -> bool:
        return bool(self.counts[site] > 0 and not self.asleep[site])

    def active_sites(self) -> np.ndarray:
        return np.flatnonzero((self.counts > 0) & ~self.asleep)

    def is_stable(self) -> bool:
        return not bool(((self.counts > 0) & ~self.asleep).any())

    def total_particles(self) -> int:
        return int(self.counts.sum())

    def m_a(self) -> int:
        """Instructions consumed on the settling set so far."""
        return int(self.odometer[self.stacks.settling.mask].sum())

    def total_consumed(self) -> int:
        return int(self.odometer.sum())


def topple(state: ReferenceArwState, x: int) -> ReferenceArwState:
    """Consume one instruction at x; x must host an active particle."""
    x = state.geometry._check_site(x)
    if not state.is_active(x):
        raise IllegalTopplingError(f"site {x} is stable and cannot be toppled")
    instr = state.stacks.instruction(x, int(state.odometer[x]))
    if instr.kind == SLEEP:
        if state.counts[x] == 1:
            state.asleep[x] = True
        # with several particles the sleep instruction is consumed but inert
    else:
        y = instr.target
        state.counts[x] -= 1
        if state.asleep[y]:
            state.asleep[y] = False
        state.counts[y] += 1
    state.odometer[x] += 1
    return state


# -- toppling order policies ---------------------------------------------


class OrderPolicy:
    """Chooses which unstable site to topple next."""

    name = "base"

    def start(self, active):
        pass

    def on_activated(self, x):
        pass

    def on_requeue(self, x):
        pass

    def select(self, active_set) -> int:
        raise NotImplementedError


class FifoPolicy(OrderPolicy):
    name = "fifo"

    def start(self, active):
        self.queue = deque(sorted(active))

    def on_activated(self, x):
        self.queue.append(x)

    def on_requeue(self, x):
        self.queue.append(x)

    def select(self, active_set) -> int:
        return self.queue.popleft()


class LowestIndexPolicy(OrderPolicy):
    name = "lowest"

    def select(self, active_set) -> int:
        return min(active_set)


class ScriptedPolicy(OrderPolicy):
    """Adversarial fixed priority order over the sites."""

    def __init__(self, priority):
        self.priority = {int(s): i for i, s in enumerate(priority)}
        self.name = "scripted"

    def select(self, active_set) -> int:
        return min(active_set, key=lambda s: self.priority.get(s, s))


class RandomPolicy(OrderPolicy):
    name = "random"

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def select(self, active_set) -> int:
        sites = sorted(active_set)
        return sites[int(self.rng.integers(len(sites)))]


@dataclass
class StabilizeResult:
    status: str                 # "stabilized" or "budget_exceeded"
    m_a: int
    consumed: int
    state: ReferenceArwState

    @property
    def exceeded(self) -> bool:
        return self.status == "budget_exceeded"


def stabilize_reference(state: ReferenceArwState,
                        policy: Optional[OrderPolicy] = None,
                        budget: int = 10**12,
                        use_kernel: Optional[bool] = None) -> StabilizeResult:
    """Topple until no active particle remains (or the budget runs out).

    Budget exhaustion is an outcome, not an exception: the partial state
    and odometer are returned with the exceeded flag set.  With the
    default policy the compiled engine is used; any explicit policy runs
    the pure-python loop (needed by the abelianity checker).
    """
    if use_kernel is None:
        use_kernel = policy is None
    g = state.geometry
    if use_kernel:
        status, _ = kernels.reference_stabilize(
            g.neighbor_table(), state.counts, state.asleep, state.odometer,
            state.stacks.settling.mask, state.stacks.threshold,
            np.uint64(state.stacks.seed), int(budget))
        return StabilizeResult(
            status="stabilized" if status == kernels.OK else "budget_exceeded",
            m_a=state.m_a(), consumed=state.total_consumed(), state=state)

    policy = policy or FifoPolicy()
    active = set(int(s) for s in state.active_sites())
    policy.start(sorted(active))
    consumed = 0
    while active:
        if consumed >= budget:
            return StabilizeResult("budget_exceeded", state.m_a(),
                                   state.total_consumed(), state)
        x = policy.select(active)
        if x not in active:
            raise IllegalTopplingError(
                f"policy {policy.name} chose the stable site {x}")
        instr = state.stacks.instruction(x, int(state.odometer[x]))
        topple(state, x)
        consumed += 1
        if instr.kind == SLEEP:
            if state.asleep[x]:
                active.discard(x)
            else:
                policy.on_requeue(x)
        else:
            y = instr.target
            if not state.is_active(x):
                active.discard(x)
            else:
                policy.on_requeue(x)
            if y not in active and state.is_active(y):
                active.add(y)
                policy.on_activated(y)
    return StabilizeResult("stabilized", state.m_a(),
                           state.total_consumed(), state)


# -- abelianity ------------------------------------------------------------


@dataclass
class AbelianReport:
    identical: bool
    num_orders: int
    mismatches: list = field(default_factory=list)

    def __bool__(self):
        return self.identical


def _fingerprint(state: ReferenceArwState):
    return (state.counts.copy(), state.asleep.copy(), state.odometer.copy())


def default_policies(geometry: TorusGeometry, num_orders: int,
                     policy_seed: int = 0) -> list[OrderPolicy]:
    policies: list[OrderPolicy] = [FifoPolicy(), LowestIndexPolicy()]
    rng = np.random.default_rng(policy_seed)
    while len(policies) < num_orders:
        if len(policies) % 2 == 0:
            perm = rng.permutation(geometry.n_sites)
            policies.append(ScriptedPolicy(perm))
        else:
            policies.append(RandomPolicy(int(rng.integers(2**62))))
    return policies[:num_orders]


def check_abelian(state: ReferenceArwState, num_orders: int,
                  policy_seed: int = 0, budget: int = 10**9,
                  include_kernel: bool = True) -> AbelianReport:
    """Stabilize the same instance under several orders; finals must match.

    Any mismatch of counts, sleep flags, or per-site odometers is an
    implementation bug and is reported with a site-level diff.
    """
    policies = default_policies(state.geometry, num_orders, policy_seed)
    reference = None
    report = AbelianReport(identical=True, num_orders=num_orders)
    runs = [(p.name, p, False) for p in policies]
    if include_kernel:
        runs.append(("kernel-drain", None, True))
    for name, pol, use_kernel in runs:
        trial = state.copy()
        res = stabilize_reference(trial, policy=pol, budget=budget,
                                  use_kernel=use_kernel)
        if res.exceeded:
            raise BudgetExceededError(
                f"abelian check run '{name}' exceeded its budget", partial=res)
        fp = _fingerprint(trial)
        if reference is None:
            reference = (name, fp)
            continue
        ref_name, ref_fp = reference
        for label, a, b in zip(("counts", "asleep", "odometer"), ref_fp, fp):
            if not np.array_equal(a, b):
                sites = np.flatnonzero(a != b)
                report.identical = False
                report.mismatches.append({
                    "orders": (ref_name, name),
                    "field": label,
                    "sites": sites.tolist()[:32],
                })
    return report


# -- coupling with the coloured-loop strategy ------------------------------


@dataclass
class CoupleResult:
    m_a: int
    h_loops: int
    dominates: bool
    status: str


class _CoupledRun:
    """Loop-strategy stabilization that reads the reference stacks.

    The shadow reference state executes the identical instruction
    sequence with every wake-up applied, so the loop strategy is a legal
    toppling prefix of the reference stabilization.
    """

    def __init__(self, hierarchy, lam: float, seed: int, budget: int):
        self.h = hierarchy
        g = hierarchy.geometry
        self.g = g
        self.stacks = InstructionStacks(g, hierarchy.A, lam, seed)
        self.shadow = ReferenceArwState(self.stacks,
                                        hierarchy.A.mask.astype(np.int64))
        self.R = hierarchy.A.mask.copy()
        self.hod = np.zeros(g.n_sites, dtype=np.int64)
        self.lod = np.zeros(g.n_sites, dtype=np.int64)
        self.steps = 0
        self.budget = budget

    def _consume(self, site: int) -> Instruction:
        instr = self.stacks.instruction(site, int(self.shadow.odometer[site]))
        self.shadow.odometer[site] += 1
        return instr

    def _arrive(self, y: int):
        if self.shadow.asleep[y]:
            self.shadow.asleep[y] = False
        self.shadow.counts[y] += 1

    def step(self, x: int):
        if not self.R[x]:
            raise IllegalTopplingError(f"loop strategy toppled sleeping site {x}")
        if self.shadow.asleep[x] or self.shadow.counts[x] != 1:
            raise IllegalTopplingError(
                "coupling violated: loop-active site not active in reference")
        if self.steps >= self.budget:
            raise BudgetExceededError("coupled run exceeded its step budget",
                                      partial=self._result(partial=True))
        instr = self._consume(x)
        if instr.kind == SLEEP:
            self.R[x] = False
            self.shadow.asleep[x] = True
            self.hod[x] += 1
        else:
            colour = self.stacks.loop_colour(x, int(self.lod[x]))
            visited = {x}
            self.shadow.counts[x] -= 1
            pos = instr.target
            self._arrive(pos)
            while pos != x:
                visited.add(pos)
                nxt = self._consume(pos)
                if nxt.kind == SLEEP:
                    # walker shares the site with its resident: inert
                    continue
                self.shadow.counts[pos] -= 1
                pos = nxt.target
                self._arrive(pos)
            targets = self.h.w_mask(x, colour)
            for y in visited:
                if targets[y] and not self.R[y]:
                    self.R[y] = True
            self.hod[x] += 1
            self.lod[x] += 1
        self.steps += 1

    def leaf_stabilize(self, cluster):
        sites = cluster.sites.indices
        star = cluster.star
        while True:
            actives = [int(s) for s in sites if self.R[s]]
            if not actives:
                return
            x = star if self.R[star] else actives[0]
            self.step(x)

    def stabilize(self, cluster):
        if not cluster.children:
            self.leaf_stabilize(cluster)
            return
        c0, c1 = self.h.ordered_children(cluster)
        cmask = cluster.sites.mask
        while (self.R & cmask).any():
            self.stabilize(c0)
            if not (self.R & cmask).any():
                break
            self.stabilize(c1)

    def _result(self, partial=False) -> CoupleResult:
        m_a = self.shadow.m_a()
        return CoupleResult(m_a=m_a, h_loops=self.steps,
                            dominates=self.steps <= m_a,
                            status="budget_exceeded" if partial else "partial")


def couple_and_compare(hierarchy, lam: float, seed: int,
                       budget: int = 10**9) -> CoupleResult:
    """Loop-strategy count H(A_J) against the reference count M_A, coupled.

    Runs the recursive strategy on the hierarchy reading the reference
    instruction stacks, then completes the reference stabilization from
    the shadow state, and checks H(A_J) <= M_A pathwise.
    """
    run = _CoupledRun(hierarchy, lam, seed, budget)
    top = hierarchy.top_cluster()
    if top is not None:
        run.stabilize(top)
    h_loops = run.steps
    res = stabilize_reference(run.shadow, budget=budget)
    if res.exceeded:
        raise BudgetExceededError("reference completion exceeded its budget",
                                  partial=res)
    m_a = res.m_a
    return CoupleResult(m_a=m_a, h_loops=h_loops,
                        dominates=h_loops <= m_a, status="completed")
