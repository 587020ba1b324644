"""Query allocation: sampling designs, integer rounding, and optimizers.

An allocation plan fixes, for every agent and every stratum, how many
oracle queries that agent will spend there. Plans are deterministic;
all randomness lives in the oracle responses.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import AllocationError, ConfigurationError, OptimizerError
from .strata import BudgetSpec, GroundTruth, group_mask

DEFAULT_MEASURE = "independent"


class SamplingMethod(str, enum.Enum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"
    NEYMAN = "neyman"


class CollabStrategy(str, enum.Enum):
    NONE = "none"
    A_POSTERIORI = "a-posteriori"
    A_PRIORI = "a-priori"


def _coerce_method(method) -> SamplingMethod:
    try:
        return SamplingMethod(method)
    except ValueError:
        raise ConfigurationError(f"unknown sampling method {method!r}") from None


def _coerce_strategy(strategy) -> CollabStrategy:
    try:
        return CollabStrategy(strategy)
    except ValueError:
        raise ConfigurationError(f"unknown collaboration strategy {strategy!r}") from None


def round_allocation(real_allocation, total: int) -> np.ndarray:
    """Largest-remainder rounding of a real allocation to integers summing to total.

    Ties between equal remainders are broken towards the lowest index.
    """
    reals = np.asarray(real_allocation, dtype=float)
    if reals.ndim != 1 or reals.size == 0:
        raise AllocationError("real allocation must be a non-empty vector")
    if np.any(reals < 0):
        raise AllocationError("real allocation entries must be non-negative")
    if abs(reals.sum() - total) > 1e-6 * max(1.0, abs(total)):
        raise AllocationError(
            f"real allocation sums to {reals.sum():.9g}, expected {total}"
        )
    floors = np.floor(reals).astype(np.int64)
    leftover = int(total - floors.sum())
    if leftover > 0:
        fractions = reals - floors
        # primary key: largest fraction; secondary: lowest index
        order = np.lexsort((np.arange(reals.size), -fractions))
        floors[order[:leftover]] += 1
    return floors


class TwoGroupSplit(NamedTuple):
    r1: int
    r0: int
    degenerate: bool


def neyman_two_group_fraction(sigma1: float, sigma0: float) -> float:
    """Continuous optimal share of the budget for group 1.

    Minimising sigma1/sqrt(r) + sigma0/sqrt(R - r) puts the groups in
    proportion to sigma**(2/3), not the classical sigma-proportional rule,
    because the objective adds standard errors rather than variances.
    """
    if sigma1 < 0 or sigma0 < 0:
        raise ConfigurationError("sigmas must be non-negative")
    a = sigma1 ** (2.0 / 3.0)
    b = sigma0 ** (2.0 / 3.0)
    if a + b == 0.0:
        return 0.5
    return a / (a + b)


def neyman_two_group(sigma1: float, sigma0: float, budget: int) -> TwoGroupSplit:
    """Integer budget split across two groups minimising the summed standard error.

    Each group keeps at least one query so downstream estimators stay defined.
    A fully deterministic instance (both sigmas zero) falls back to an even
    split and is flagged.
    """
    if budget < 2:
        raise ConfigurationError(f"two-group budget must be >= 2, got {budget}")
    if sigma1 < 0 or sigma0 < 0:
        raise ConfigurationError("sigmas must be non-negative")
    if sigma1 == 0.0 and sigma0 == 0.0:
        warnings.warn("both group sigmas are zero; falling back to an even split")
        r1 = budget // 2
        return TwoGroupSplit(r1, budget - r1, True)

    def objective(r1: int) -> float:
        val = 0.0
        if sigma1 > 0:
            val += sigma1 / np.sqrt(r1)
        if sigma0 > 0:
            val += sigma0 / np.sqrt(budget - r1)
        return val

    t = neyman_two_group_fraction(sigma1, sigma0)
    ideal = t * budget
    lo = int(np.clip(np.floor(ideal), 1, budget - 1))
    hi = int(np.clip(np.ceil(ideal), 1, budget - 1))
    best = lo if objective(lo) <= objective(hi) else hi
    return TwoGroupSplit(best, budget - best, False)


def stratum_measure(gt: GroundTruth, measure: str) -> np.ndarray:
    """Probability vector over strata used to fill in non-audited attributes.

    'empirical' follows the ingested joint distribution; 'independent'
    multiplies the attribute marginals. Strata absent from the population
    get zero mass either way so no query is ever routed to them.
    """
    if measure == "empirical":
        pi = gt.stratum_prob.copy()
    elif measure == "independent":
        pi = gt.independent_prob()
    else:
        raise ConfigurationError(f"unknown measure {measure!r}")
    pi = np.where(gt.nonempty(), pi, 0.0)
    total = pi.sum()
    if total <= 0:
        raise AllocationError("population has no occupied strata")
    return pi / total


def conditional_weights(pi: np.ndarray, num_attributes: int, attribute: int, value: int) -> np.ndarray:
    """P(stratum | attribute group) under the given stratum measure."""
    mask = group_mask(num_attributes, attribute, value)
    w = np.where(mask, pi, 0.0)
    total = w.sum()
    if total <= 0:
        raise AllocationError(
            f"attribute {attribute} group {value} has no mass under the sampling measure"
        )
    return w / total


def group_sigma_under(pi: np.ndarray, gt: GroundTruth, attribute: int, value: int) -> float:
    """Group-level response standard deviation under the given measure."""
    w = conditional_weights(pi, gt.num_attributes, attribute, value)
    q = float(w @ gt.positive_rate)
    return float(np.sqrt(q * (1.0 - q)))


def agent_design(
    method: SamplingMethod,
    gt: GroundTruth,
    attribute: int,
    pi: np.ndarray,
) -> np.ndarray:
    """Real-valued query distribution over strata for one agent's solo design."""
    m = gt.num_attributes
    if method is SamplingMethod.UNIFORM:
        return pi.copy()
    w1 = conditional_weights(pi, m, attribute, 1)
    w0 = conditional_weights(pi, m, attribute, 0)
    if method is SamplingMethod.STRATIFIED:
        return 0.5 * w1 + 0.5 * w0
    if method is SamplingMethod.NEYMAN:
        s1 = group_sigma_under(pi, gt, attribute, 1)
        s0 = group_sigma_under(pi, gt, attribute, 0)
        t = neyman_two_group_fraction(s1, s0)
        return t * w1 + (1.0 - t) * w0
    raise ConfigurationError(f"unknown sampling method {method!r}")


def _round_agent_design(
    design: np.ndarray,
    per_agent: int,
    gt: GroundTruth,
    attribute: int,
    method: SamplingMethod,
    pi: np.ndarray,
) -> np.ndarray:
    """Round one agent's design so her own two group totals land within one query.

    Rounds the side totals first, then the strata inside each side.
    """
    m = gt.num_attributes
    mask1 = group_mask(m, attribute, 1)
    if method is SamplingMethod.NEYMAN:
        s1 = group_sigma_under(pi, gt, attribute, 1)
        s0 = group_sigma_under(pi, gt, attribute, 0)
        split = neyman_two_group(s1, s0, per_agent)
        side_ints = {1: split.r1, 0: split.r0}
    else:
        real1 = float(design[mask1].sum()) * per_agent
        ints = round_allocation([real1, per_agent - real1], per_agent)
        side_ints = {1: int(ints[0]), 0: int(ints[1])}
    counts = np.zeros(design.size, dtype=np.int64)
    for value in (1, 0):
        side = group_mask(m, attribute, value)
        side_real = np.where(side, design, 0.0)
        target = side_ints[value]
        if target == 0:
            continue
        total_mass = side_real.sum()
        if total_mass <= 0:
            # a deterministic side draws no sigma-weighted mass; spread its
            # forced queries by the sampling measure instead
            side_real = np.where(side, pi, 0.0)
            total_mass = side_real.sum()
        if total_mass <= 0:
            raise AllocationError(
                f"cannot place {target} queries: attribute {attribute} "
                f"group {value} has no mass"
            )
        counts += round_allocation(side_real / total_mass * target, target)
    return counts


def _split_pooled(pooled: np.ndarray, num_agents: int, per_agent: int) -> np.ndarray:
    """Distribute pooled per-stratum counts into per-agent rows summing to the budget."""
    if int(pooled.sum()) != num_agents * per_agent:
        raise AllocationError("pooled counts do not match the total budget")
    counts = np.zeros((num_agents, pooled.size), dtype=np.int64)
    remaining = np.full(num_agents, per_agent, dtype=np.int64)
    for k in range(pooled.size):
        c = int(pooled[k])
        while c > 0:
            a = int(np.argmax(remaining))  # argmax breaks ties at the lowest index
            if remaining[a] <= 0:
                raise AllocationError("ran out of per-agent capacity while splitting")
            take = min(c, int(remaining[a]))
            counts[a, k] += take
            remaining[a] -= take
            c -= take
    return counts


@dataclass(frozen=True)
class JointAllocation:
    """Continuous solution of the pooled multi-agent allocation problem."""

    allocation: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float


def _waterfill(q: np.ndarray, total: float, floor: float) -> np.ndarray:
    """Exact minimiser of sum(q_k / r_k) over {r >= floor, sum(r) = total}.

    The solution has the form r_k = max(floor, sqrt(q_k) / s) for the unique
    scale s that spends the budget; s is bracketed by bisection and then
    recomputed in closed form from the resulting active set.
    """
    root = np.sqrt(q)
    if root.sum() == 0.0:
        return np.full(q.size, total / q.size)
    free_budget = total - floor * q.size
    if free_budget <= 0:
        return np.full(q.size, floor)
    s_lo = root.max() / total
    s_hi = root.sum() / free_budget
    for _ in range(120):
        s = 0.5 * (s_lo + s_hi)
        if np.maximum(floor, root / s).sum() > total:
            s_lo = s
        else:
            s_hi = s
    free = root / s_hi > floor
    if not free.any():
        return np.full(q.size, floor)
    s = root[free].sum() / (total - floor * float(q.size - free.sum()))
    return np.maximum(floor, np.where(free, root / s, floor))


def neyman_joint(
    gt: GroundTruth,
    budget: BudgetSpec,
    measure: str = DEFAULT_MEASURE,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    floor: float = 1.0,
) -> JointAllocation:
    """Pooled allocation over all strata minimising the average audit error.

    Objective: mean over agents of the summed per-group standard errors,
    where each group estimate is the weighted per-stratum average, so one
    shared allocation serves every agent at once. The problem is convex
    (each term is an l2 norm of c_k / sqrt(R_k) entries). Each standard
    error is concave in its group variance, so linearising the square
    roots gives an upper bound whose exact minimiser is a water-filling
    allocation; iterating that majorise-minimise step descends
    monotonically to the global optimum.
    """
    m = gt.num_attributes
    if budget.num_agents != m:
        raise ConfigurationError("budget and model disagree on the number of agents")
    pi = stratum_measure(gt, measure)
    occupied = pi > 0
    idx = np.nonzero(occupied)[0]
    n = idx.size
    total = float(budget.total)
    if total < floor * n:
        raise AllocationError(
            f"budget {budget.total} cannot give {floor} queries to each of {n} strata"
        )
    sigma = gt.stratum_sigma()[idx]
    rows = []
    for i in range(m):
        for value in (1, 0):
            w = conditional_weights(pi, m, i, value)[idx]
            rows.append((w ** 2) * (sigma ** 2))
    coef = np.array(rows)  # (2m, n)

    scale = coef.sum(axis=0)
    if scale.max() == 0.0:
        # every stratum is deterministic: any feasible point is optimal
        alloc = np.full(n, total / n)
        full = np.zeros(gt.num_strata)
        full[idx] = alloc
        return JointAllocation(full, 0.0, 0, 0.0)

    def value_and_grad(r: np.ndarray):
        # strata with no variance receive no continuous mass; their
        # coefficient column is zero so they contribute nothing either way
        inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
        group_var = coef @ inv  # (2m,)
        se = np.sqrt(group_var)
        obj = float(se.sum() / m)
        safe = np.where(se > 0, se, 1.0)
        # d obj / d r_k = -(1/m) sum_rows coef[row,k] / (2 se_row r_k^2)
        grad = -(coef.T @ (1.0 / (2.0 * safe * m))) * inv ** 2
        return obj, grad

    def kkt_residual(r: np.ndarray, grad: np.ndarray) -> float:
        free = r > floor * (1.0 + 1e-10)
        ref = max(float(np.abs(grad).max()), 1e-30)
        if not np.any(free):
            return 0.0
        g_free = grad[free]
        lam = float(np.median(g_free))
        res = float(np.abs(g_free - lam).max()) / ref
        bound = grad[~free]
        if bound.size:
            # at the floor the gradient may only push further down
            res = max(res, float(np.maximum(lam - bound, 0.0).max()) / ref)
        return res

    r = _waterfill(scale, total, floor)
    obj, grad = value_and_grad(r)
    residual = kkt_residual(r, grad)
    iterations = 0
    while residual > tol and iterations < max_iter:
        iterations += 1
        inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
        se = np.sqrt(coef @ inv)
        safe = np.where(se > 0, se, 1.0)
        r = _waterfill(coef.T @ (1.0 / (2.0 * safe * m)), total, floor)
        obj, grad = value_and_grad(r)
        residual = kkt_residual(r, grad)
    if residual > tol:
        raise OptimizerError(
            f"joint allocation did not converge: residual {residual:.3e} "
            f"after {iterations} iterations (tolerance {tol:.1e})"
        )
    full = np.zeros(gt.num_strata)
    full[idx] = r
    return JointAllocation(full, obj, iterations, residual)


def scaled_apriori_neyman_design(gt: GroundTruth, pi: np.ndarray) -> np.ndarray:
    """Alternative coordinated design: every agent's solo optimum scaled up.

    Realised as the product distribution whose attribute marginals equal
    each agent's continuous two-group optimum. Kept for comparison with
    the jointly optimised allocation.
    """
    m = gt.num_attributes
    design = np.ones(gt.num_strata)
    kidx = np.arange(gt.num_strata)
    for i in range(m):
        s1 = group_sigma_under(pi, gt, i, 1)
        s0 = group_sigma_under(pi, gt, i, 0)
        t = neyman_two_group_fraction(s1, s0)
        bit = ((kidx >> i) & 1).astype(float)
        design *= np.where(bit == 1.0, t, 1.0 - t)
    design = np.where(pi > 0, design, 0.0)
    total = design.sum()
    if total <= 0:
        raise AllocationError("scaled coordinated design has no mass on occupied strata")
    return design / total


@dataclass(frozen=True)
class AllocationPlan:
    """Integer query counts per agent and stratum, plus the real designs behind them."""

    method: SamplingMethod
    strategy: CollabStrategy
    budget: BudgetSpec
    measure: str
    counts: np.ndarray
    real_designs: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        m = self.budget.num_agents
        if counts.shape[0] != m:
            raise AllocationError("plan must have one row per agent")
        if np.any(counts < 0):
            raise AllocationError("plan counts must be non-negative")
        sums = counts.sum(axis=1)
        if np.any(sums != self.budget.per_agent):
            raise AllocationError(
                f"per-agent totals {sums.tolist()} do not match budget {self.budget.per_agent}"
            )
        object.__setattr__(self, "counts", counts)

    @property
    def num_agents(self) -> int:
        return self.budget.num_agents

    def pooled_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def available_counts(self, agent: int) -> np.ndarray:
        """Counts feeding the given agent's estimator under this plan's strategy."""
        if self.strategy is CollabStrategy.NONE:
            return self.counts[agent]
        return self.pooled_counts()

    def group_totals(self, agent: int) -> tuple[int, int]:
        """(queries with the agent's attribute set, queries with it clear)."""
        avail = self.available_counts(agent)
        num_attrs = int(np.log2(self.counts.shape[1]))
        mask1 = group_mask(num_attrs, agent, 1)
        return int(avail[mask1].sum()), int(avail[~mask1].sum())

    def expected_available(self, agent: int) -> np.ndarray:
        """Real-valued counterpart of available_counts before rounding."""
        per = self.budget.per_agent
        if self.strategy is CollabStrategy.NONE:
            return self.real_designs[agent] * per
        return self.real_designs.sum(axis=0) * per

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent", "stratum_index", "count"])
            for a in range(self.counts.shape[0]):
                for k in range(self.counts.shape[1]):
                    writer.writerow([a, k, int(self.counts[a, k])])


def allocate(
    method,
    strategy,
    gt: GroundTruth,
    budget: BudgetSpec,
    measure: str = DEFAULT_MEASURE,
    apriori_neyman: str = "joint",
) -> AllocationPlan:
    """Build the integer allocation plan for one (method, strategy) pair."""
    method = _coerce_method(method)
    strategy = _coerce_strategy(strategy)
    m = gt.num_attributes
    if budget.num_agents != m:
        raise ConfigurationError(
            f"budget is for {budget.num_agents} agents but the model has {m} attributes"
        )
    if apriori_neyman not in ("joint", "scaled"):
        raise ConfigurationError(f"unknown a-priori neyman mode {apriori_neyman!r}")
    pi = stratum_measure(gt, measure)
    per = budget.per_agent

    solo = np.array([agent_design(method, gt, i, pi) for i in range(m)])

    if (
        strategy in (CollabStrategy.NONE, CollabStrategy.A_POSTERIORI)
        or method is SamplingMethod.UNIFORM
        or m == 1
    ):
        # a-priori coordination changes nothing for uniform sampling (every
        # agent already samples the shared population measure) or for a
        # single agent (nobody to coordinate with)
        counts = np.array(
            [
                _round_agent_design(solo[i], per, gt, i, method, pi)
                for i in range(m)
            ]
        )
        return AllocationPlan(method, strategy, budget, measure, counts, solo)

    # coordinated pooled designs
    if method is SamplingMethod.STRATIFIED:
        occupied = pi > 0
        pooled_real = np.where(occupied, 1.0 / occupied.sum(), 0.0) * budget.total
    else:
        if apriori_neyman == "joint":
            pooled_real = neyman_joint(gt, budget, measure=measure).allocation
        else:
            pooled_real = scaled_apriori_neyman_design(gt, pi) * budget.total
    pooled_int = round_allocation(pooled_real, budget.total)
    counts = _split_pooled(pooled_int, m, per)
    shared = np.tile(pooled_real / budget.total, (m, 1))
    return AllocationPlan(method, strategy, budget, measure, counts, shared)
