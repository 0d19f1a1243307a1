"""Statistical verification harness and regime parameterizations.

Closed-form laws (geometric compounding, the colour-correlation law, the
dependent-Bernoulli bound) are checked by Monte Carlo against exact
CDFs with Dvoretzky-Kiefer-Wolfowitz bands, so a failure beyond the band
at the chosen level indicates an implementation bug rather than noise.
Stochastic dominations are tested one-sided the same way.

The regime parameter blocks collect the closed-form choices of density,
cluster volume, diameter schedule and exponents used in the small- and
large-sleep-rate analyses, with the escape-probability constant supplied
empirically (K_hat); validity flags report whether the asymptotic
inequalities actually hold at the requested sleep rate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .arw_core import ReferenceArwState, stabilize_reference
from .errors import DomainError, InvalidSamplerError
from .hierarchy import DormitoryHierarchy, trivial_hierarchy
from .loop_model import LoopModelState, stabilize_recursive
from .rng import TAG_CELL, derive_seed
from .torus import SiteSet, TorusGeometry

# -- entropy ------------------------------------------------------------------


def psi(mu: float) -> float:
    """Binary entropy -mu ln mu - (1-mu) ln(1-mu), with psi(0) = psi(1) = 0."""
    if mu < 0.0 or mu > 1.0:
        raise DomainError("psi is defined on [0, 1]")
    if mu == 0.0 or mu == 1.0:
        return 0.0
    return -mu * math.log(mu) - (1.0 - mu) * math.log(1.0 - mu)


# -- geometric distribution helpers -------------------------------------------


def geometric_cdf(k, p: float):
    """CDF of the geometric law on {1, 2, ...} with success probability p."""
    k = np.asarray(k, dtype=np.float64)
    return np.where(k < 1, 0.0, 1.0 - (1.0 - p) ** np.floor(k))


def ks_distance_geometric(samples: np.ndarray, p: float) -> float:
    """Exact sup-distance between the empirical CDF and Geometric(p)."""
    samples = np.asarray(samples)
    n = samples.size
    uniq, counts = np.unique(samples, return_counts=True)
    cum = np.cumsum(counts) / n
    below = cum - counts / n
    at = np.abs(cum - geometric_cdf(uniq, p))
    before = np.abs(below - geometric_cdf(uniq - 1, p))
    return float(max(at.max(), before.max()))


def dkw_epsilon(n: int, delta: float, two_sided: bool = True) -> float:
    """DKW confidence radius for the empirical CDF at level delta."""
    factor = 2.0 if two_sided else 1.0
    return math.sqrt(math.log(factor / delta) / (2.0 * n))


@dataclass
class DominanceReport:
    n: int
    geom_param: float
    confidence: float
    band: float
    max_excess: float
    verdict: bool

    def __bool__(self):
        return self.verdict


def dominance_test(samples, geom_param: float,
                   confidence: float = 0.99) -> DominanceReport:
    """One-sided test of 'samples stochastically dominate Geometric(p)'.

    Dominance means the empirical CDF never exceeds the geometric CDF;
    the verdict allows a one-sided DKW band at the given confidence.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        raise DomainError("need at least one sample")
    if not (0.0 < geom_param <= 1.0):
        raise DomainError("geometric parameter must lie in (0, 1]")
    uniq, counts = np.unique(samples, return_counts=True)
    cum = np.cumsum(counts) / samples.size
    excess = float(np.max(cum - geometric_cdf(uniq, geom_param)))
    band = dkw_epsilon(samples.size, 1.0 - confidence, two_sided=False)
    return DominanceReport(n=int(samples.size), geom_param=geom_param,
                           confidence=confidence, band=band,
                           max_excess=excess, verdict=excess <= band)


@dataclass
class EqualityReport:
    n: int
    param: float
    ks_distance: float
    threshold: float
    passed: bool

    def __bool__(self):
        return self.passed


def sample_geometric_compound(a: float, b: float, samples: int,
                              rng: np.random.Generator) -> np.ndarray:
    """S = 1 + sum_{i=1}^{N} (X_i - 1), N ~ Geom(a), X_i ~ Geom(b) i.i.d."""
    n_draws = rng.geometric(a, size=samples)
    # sum of N geometric-minus-one variables = negative binomial failures
    return 1 + rng.negative_binomial(n_draws, b)


def compound_geometric_param(a: float, b: float) -> float:
    """S above is geometric with this success probability."""
    return a * b / (1.0 - b + a * b)


def verify_sum_geometrics(a: float, b: float, samples: int, rng,
                          level: float = 0.01) -> EqualityReport:
    """Sample the compound sum and KS-test it against its closed form."""
    if not (0.0 < a <= 1.0 and 0.0 < b <= 1.0):
        raise DomainError("parameters must lie in (0, 1]")
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    draws = sample_geometric_compound(a, b, samples, rng)
    param = compound_geometric_param(a, b)
    ks = ks_distance_geometric(draws, param)
    threshold = dkw_epsilon(samples, level)
    return EqualityReport(n=samples, param=param, ks_distance=ks,
                          threshold=threshold, passed=ks <= threshold)


def two_sample_equality(xs, ys, level: float = 0.01) -> EqualityReport:
    """Two-sample CDF-equality check with a combined DKW band."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    grid = np.unique(np.concatenate([xs, ys]))
    fx = np.searchsorted(np.sort(xs), grid, side="right") / xs.size
    fy = np.searchsorted(np.sort(ys), grid, side="right") / ys.size
    dist = float(np.max(np.abs(fx - fy)))
    threshold = dkw_epsilon(xs.size, level / 2) + dkw_epsilon(ys.size, level / 2)
    return EqualityReport(n=int(xs.size), param=float("nan"),
                          ks_distance=dist, threshold=threshold,
                          passed=dist <= threshold)


# -- dependent Bernoulli bound --------------------------------------------------


def comonotone_bernoulli(p: float, n: int) -> Callable:
    """All coordinates equal: the extremal coupling saturating the bound."""
    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        flips = (rng.random(size) < p).astype(np.int8)
        return np.repeat(flips[:, None], n, axis=1)
    return sampler


def independent_bernoulli(p: float, n: int) -> Callable:
    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return (rng.random((size, n)) < p).astype(np.int8)
    return sampler


@dataclass
class BernoulliBoundReport:
    estimate: float
    std_error: float
    bound: float
    passed: bool
    marginals: list

    def __bool__(self):
        return self.passed


def verify_bernoulli_bound(joint_sampler: Callable, p: float, c: float,
                           n: int, samples: int, rng) -> BernoulliBoundReport:
    """Check E[exp(-c sum X_i)] <= 1 - p + p e^{-cn} for Bernoulli(p) marginals.

    The coupling may be arbitrary; samplers whose empirical marginals
    stray more than four sigmas from p are rejected outright.
    """
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    draws = np.asarray(joint_sampler(rng, samples))
    if draws.shape != (samples, n):
        raise InvalidSamplerError(f"sampler returned shape {draws.shape}")
    marg = draws.mean(axis=0)
    tol = 4.0 * math.sqrt(p * (1.0 - p) / samples)
    if np.any(np.abs(marg - p) > tol):
        raise InvalidSamplerError(
            f"marginals {marg.tolist()} are off Bernoulli({p}) beyond 4 sigma")
    values = np.exp(-c * draws.sum(axis=1))
    est = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(samples))
    bound = 1.0 - p + p * math.exp(-c * n)
    return BernoulliBoundReport(estimate=est, std_error=se, bound=bound,
                                passed=est <= bound + 3.0 * se,
                                marginals=marg.tolist())


# -- regime parameterizations ----------------------------------------------------


LOW_2D = "low-2d"
HIGH_2D = "high-2d"
LOW_3D = "low-3d"
HIGH_3D = "high-3d"


@dataclass
class RegimeParams:
    regime: str
    lam: float
    k_hat: float
    d: int
    mu: float
    v: Optional[int]
    r: Optional[int]
    a: Optional[float]
    beta: Optional[float]
    alpha: list
    D: list
    mu_prime: Optional[float] = None
    kappa: Optional[float] = None
    valid: bool = True
    flags: list = field(default_factory=list)

    def flag(self, ok: bool, message: str):
        if not ok:
            self.valid = False
            self.flags.append(message)


def regime_params(regime: str, lam: float, k_hat: float,
                  depth: int = 8, n: Optional[int] = None) -> RegimeParams:
    """Closed-form parameter block for one of the four regimes.

    The asymptotic thresholds ("lam small/large enough") are reported as
    validity flags, never enforced; every quantity that involves the
    escape constant is relative to the supplied empirical K_hat.
    """
    if lam <= 0 or k_hat <= 0:
        raise DomainError("lam and K_hat must be positive")
    if regime == LOW_2D:
        a = 2.0 ** 2.25 / (2.0 ** 0.25 - 1.0)
        abs_log = abs(math.log(lam))
        loglog = math.log(abs_log) if abs_log > 0 else float("-inf")
        base = math.log((1.0 + 2.0 * lam) / (2.0 * lam))
        alphas = [base - (a / 2.0) * (1.0 - 2.0 ** (-j / 4.0)) * loglog
                  for j in range(depth + 1)]
        d0 = math.ceil(1.0 / lam)
        ds = [d0 * 6**j for j in range(depth + 1)]
        mu = lam * abs_log**a
        mu_prime = mu - 144.0 / d0**2
        alpha_inf = base - (a / 2.0) * loglog
        kappa = alpha_inf * mu_prime
        params = RegimeParams(regime=regime, lam=lam, k_hat=k_hat, d=2,
                              mu=mu, v=1, r=None, a=a, beta=None,
                              alpha=alphas, D=ds, mu_prime=mu_prime,
                              kappa=kappa)
        params.flag(lam < 1.0, "needs lam < 1")
        params.flag(0.0 < mu < 1.0, f"mu = {mu:.4g} not in (0, 1)")
        params.flag(all(x > 0 for x in alphas + [alpha_inf]),
                    "alpha sequence not positive")
        params.flag(mu_prime > 0, "mu' not positive")
        if 0.0 < mu < 1.0:
            params.flag(kappa > psi(mu), "kappa does not beat the entropy")
        return params
    if regime == HIGH_2D:
        log_lam = math.log(lam)
        params_ok = lam > 1.0
        r = math.ceil(8.0 * log_lam * math.sqrt(lam) / math.sqrt(k_hat)) \
            if params_ok else 1
        alpha0 = k_hat / (lam * log_lam) if params_ok else float("nan")
        alphas = [(1.0 + 2.0 ** (-j / 4.0)) / 2.0 * alpha0
                  for j in range(depth + 1)]
        d0 = 96 * r**3
        ds = [d0 * 6**j for j in range(depth + 1)]
        mu = 1.0 - k_hat / (8.0 * lam * log_lam**2) if params_ok else float("nan")
        kappa = (alpha0 / 2.0) * (mu - 0.5) if params_ok else float("nan")
        params = RegimeParams(regime=regime, lam=lam, k_hat=k_hat, d=2,
                              mu=mu, v=r * r, r=r, a=None, beta=None,
                              alpha=alphas, D=ds, kappa=kappa)
        params.flag(params_ok, "needs lam > 1")
        params.flag(params_ok and 0.0 < mu < 1.0, f"mu = {mu:.4g} not in (0, 1)")
        if params_ok and 0.0 < mu < 1.0:
            params.flag(mu >= 0.5, "mu below 1/2: the dense screening fails")
            params.flag(kappa > psi(mu), "kappa does not beat the entropy")
        return params
    if regime in (LOW_3D, HIGH_3D):
        d = 3
        if regime == LOW_3D:
            mu = (math.e / k_hat**8) * lam
            alpha = abs(math.log(lam)) - 2.0 * abs(math.log(k_hat))
            beta = 1.0 - 2.0 * abs(math.log(k_hat)) / abs(math.log(lam)) \
                if lam != 1.0 else float("nan")
            kappa = (math.e / k_hat**8) * lam * abs(math.log(lam)) \
                - 6.0 * math.e * abs(math.log(k_hat)) / k_hat**8 * lam
            params = RegimeParams(regime=regime, lam=lam, k_hat=k_hat, d=d,
                                  mu=mu, v=None, r=None, a=None, beta=beta,
                                  alpha=[alpha], D=[], kappa=kappa)
            params.flag(lam < k_hat**8 / math.e, "needs lam < K^8 / e")
            params.flag(alpha > 0, "alpha not positive")
            params.flag(0.0 < beta < 1.0, "beta not in (0, 1)")
        else:
            params_ok = lam > 1.0
            mu = 1.0 - k_hat / (16.0 * lam * math.log(lam)) if params_ok \
                else float("nan")
            alpha = k_hat / (2.0 * lam)
            beta = 0.5
            kappa = k_hat / (8.0 * lam)
            params = RegimeParams(regime=regime, lam=lam, k_hat=k_hat, d=d,
                                  mu=mu, v=None, r=None, a=None, beta=beta,
                                  alpha=[alpha], D=[], kappa=kappa)
            params.flag(params_ok, "needs lam > 1")
        params.flag(0.0 < params.mu < 1.0, f"mu = {params.mu:.4g} not in (0, 1)")
        if 0.0 < params.mu < 1.0:
            params.flag(params.kappa > psi(params.mu),
                        "kappa does not beat the entropy")
        if n is not None:
            params.v = math.ceil(params.mu * n**d)
        return params
    raise DomainError(f"unknown regime {regime!r}")


@dataclass
class InductionRow:
    j: int
    lhs: float
    rhs: float
    g: float
    ok: bool


def check_induction_condition(lam: float, v: int, alphas: Sequence[float],
                              diameters: Sequence[int],
                              upsilon: Callable[[int], float],
                              j_max: Optional[int] = None) -> list[InductionRow]:
    """Evaluate 4v(1+lam) 2^{3j/2} / ((1-e^{-a_j v}) Y(D_j)) <= e^{(a_j-a_{j+1}) 2^{j/2} v}.

    Also reports the normalized statistic g_j (the condition holds iff
    g_j <= 1).  upsilon maps a distance to an escape-probability value,
    empirical or exact.
    """
    if j_max is None:
        j_max = len(alphas) - 2
    rows = []
    for j in range(j_max + 1):
        a_j, a_next = alphas[j], alphas[j + 1]
        ups = upsilon(diameters[j])
        denom = (1.0 - math.exp(-a_j * v)) * ups
        lhs = 4.0 * v * (1.0 + lam) * 2.0 ** (1.5 * j) / denom
        exponent = (a_j - a_next) * 2.0 ** (j / 2.0) * v
        rhs = math.exp(exponent)
        g = math.log(lhs) / exponent if exponent > 0 else float("inf")
        rows.append(InductionRow(j=j, lhs=lhs, rhs=rhs, g=g, ok=lhs <= rhs))
    return rows


def metastability_alpha_max(lam: float, upsilon_value: float, v: int,
                            beta: float) -> Optional[float]:
    """Largest a > 0 with lam(e^a - 1) <= Y (1 - e^{a(1 - (1-beta)v)}).

    Returns None when no positive a satisfies it (the supermartingale
    drift condition is infeasible at these parameters).
    """
    slope_gap = upsilon_value * ((1.0 - beta) * v - 1.0) - lam
    if slope_gap <= 0:
        return None

    def f(a):
        return upsilon_value * (1.0 - math.exp(a * (1.0 - (1.0 - beta) * v))) \
            - lam * (math.expm1(a))

    hi = 1e-6
    while f(hi) > 0 and hi < 1e3:
        hi *= 2.0
    if hi >= 1e3:
        return 1e3
    return float(optimize.brentq(f, hi / 2.0, hi, xtol=1e-12))


# -- sweeps and scaling ----------------------------------------------------------


@dataclass
class SweepRun:
    mu: float
    seed_index: int
    cell_seed: int
    particles: int
    m_a: int
    consumed: int
    exceeded: bool


@dataclass
class SweepSummary:
    mu: float
    runs: int
    exceeded: int
    exceed_rate: float
    rate_std_error: float
    mean_m_a_completed: Optional[float]
    censored: int


def activity_sweep(d: int, n: int, lam: float, mu_grid: Sequence[float],
                   seeds: int, budget: int, master_seed: int = 0,
                   workers: Optional[int] = None
                   ) -> tuple[list[SweepRun], list[SweepSummary]]:
    """Stabilization statistics across initial densities.

    Each cell draws a uniform settling set A with ceil(mu n^d) sites,
    starts one active particle on each site of A, and runs the reference
    stabilizer; hitting the budget is recorded as data.  Cell seeds are
    derived from the master seed and the cell index, so results do not
    depend on worker scheduling.
    """
    g = TorusGeometry(n, d)
    for mu in mu_grid:
        if not (0.0 < mu <= 1.0):
            raise DomainError("densities must lie in (0, 1]")
    cells = [(mi, si) for mi in range(len(mu_grid)) for si in range(seeds)]

    def run_cell(cell):
        mi, si = cell
        mu = mu_grid[mi]
        cell_seed = derive_seed(master_seed, TAG_CELL, mi, si)
        rng = np.random.default_rng(cell_seed)
        m = math.ceil(mu * g.n_sites)
        A = g.random_subset(m, rng)
        state = ReferenceArwState.from_settling_set(g, A, lam, cell_seed)
        res = stabilize_reference(state, budget=budget)
        return SweepRun(mu=mu, seed_index=si, cell_seed=cell_seed,
                        particles=m, m_a=res.m_a, consumed=res.consumed,
                        exceeded=res.exceeded)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_cell, cells))
    else:
        runs = [run_cell(c) for c in cells]

    summaries = []
    for mi, mu in enumerate(mu_grid):
        rows = [r for r in runs if r.mu == mu]
        exc = sum(r.exceeded for r in rows)
        rate = exc / len(rows)
        completed = [r.m_a for r in rows if not r.exceeded]
        summaries.append(SweepSummary(
            mu=mu, runs=len(rows), exceeded=exc, exceed_rate=rate,
            rate_std_error=math.sqrt(rate * (1.0 - rate) / len(rows)),
            mean_m_a_completed=(float(np.mean(completed)) if completed else None),
            censored=exc))
    return runs, summaries


@dataclass
class ScalingFit:
    sizes: list
    mean_steps: list
    slope: float
    r_squared: float
    censored: int

    @property
    def censoring_flag(self) -> bool:
        """Censored runs make the fitted slope a lower bound."""
        return self.censored > 0


def square_cluster_hierarchy(n: int, k: int) -> DormitoryHierarchy:
    """Trivial hierarchy whose settling set is a full k-by-k square."""
    g = TorusGeometry(n, 2)
    if k > n:
        raise DomainError("square does not fit on the torus")
    sites = [g.site_index((i, j)) for i in range(k) for j in range(k)]
    return trivial_hierarchy(g, SiteSet.from_indices(g, sites))


def scaling_fit(hierarchies: Sequence[DormitoryHierarchy], lam: float,
                seeds: int, master_seed: int = 0, budget: int = 10**8,
                procedure=None, workers: Optional[int] = None) -> ScalingFit:
    """Fit ln(mean total steps) against cluster size over a family.

    Budget-censored runs are dropped from the means and flagged: the
    resulting slope is then a lower bound.
    """
    sizes = []
    means = []
    censored = 0

    def run_one(args):
        hi, si = args
        h = hierarchies[hi]
        seed = derive_seed(master_seed, TAG_CELL, hi, si)
        state = LoopModelState(h, lam, seed)
        rec = stabilize_recursive(state, h.top_cluster(), procedures=procedure,
                                  budget=budget, raise_on_budget=False)
        return hi, rec

    cells = [(hi, si) for hi in range(len(hierarchies)) for si in range(seeds)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, cells))
    else:
        results = [run_one(c) for c in cells]

    per_h: dict[int, list[int]] = {hi: [] for hi in range(len(hierarchies))}
    for hi, rec in results:
        if rec.completed:
            per_h[hi].append(rec.steps)
        else:
            censored += 1
    for hi, h in enumerate(hierarchies):
        sizes.append(len(h.top_cluster().sites))
        vals = per_h[hi]
        means.append(float(np.mean(vals)) if vals else float("nan"))

    slope, r2 = fit_loglinear(sizes, means)
    return ScalingFit(sizes=sizes, mean_steps=means, slope=slope,
                      r_squared=r2, censored=censored)


def fit_loglinear(sizes, means) -> tuple[float, float]:
    """(slope, R^2) of the least-squares line ln(mean) = slope * size + b."""
    xs = np.asarray(sizes, dtype=np.float64)
    ys = np.log(np.asarray(means, dtype=np.float64))
    keep = np.isfinite(ys)
    slope, intercept = np.polyfit(xs[keep], ys[keep], 1)
    fitted = slope * xs[keep] + intercept
    resid = ys[keep] - fitted
    total = ys[keep] - ys[keep].mean()
    denom = float(total @ total)
    r2 = 1.0 - float(resid @ resid) / denom if denom > 0 else 1.0
    return float(slope), r2
