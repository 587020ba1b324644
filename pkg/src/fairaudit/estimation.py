"""Disparity estimators and audit outcome records.

Two estimators cover all designs. The simple estimator divides pooled
positives by pooled queries per group; it is the right choice whenever
the queries inside a group are identically distributed (uniform sampling
under any collaboration, and solo stratified or optimised designs, whose
within-group composition follows one fixed conditional). Pooled logs from
heterogeneous designs mix different stratum compositions, so there the
per-stratum weighted estimator is used instead: it stays unbiased for any
mix as long as every weighted stratum received at least one query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import CollabStrategy, SamplingMethod, conditional_weights, stratum_measure
from .exceptions import EstimationError
from .strata import GroundTruth, group_mask

DSA_COMPLIANCE_BAND = 0.2


@dataclass(frozen=True)
class QueryLog:
    """Per-stratum query and positive-response counts visible to one estimator."""

    num_attributes: int
    queries: np.ndarray
    positives: np.ndarray
    agent: int | None = None
    pooled: bool = False

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.int64)
        p = np.asarray(self.positives, dtype=np.int64)
        n = 1 << self.num_attributes
        if q.shape != (n,) or p.shape != (n,):
            raise EstimationError(f"expected {n} strata in the query log")
        if np.any(q < 0) or np.any(p < 0) or np.any(p > q):
            raise EstimationError("positives must lie between 0 and the query count")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "positives", p)

    @staticmethod
    def pool(logs: list["QueryLog"]) -> "QueryLog":
        if not logs:
            raise EstimationError("cannot pool an empty list of logs")
        m = logs[0].num_attributes
        if any(lg.num_attributes != m for lg in logs):
            raise EstimationError("logs disagree on the number of attributes")
        q = np.sum([lg.queries for lg in logs], axis=0)
        p = np.sum([lg.positives for lg in logs], axis=0)
        return QueryLog(m, q, p, agent=None, pooled=True)


def estimate_dp_simple(log: QueryLog, attribute: int) -> float:
    """Difference of pooled positive rates between the two attribute groups."""
    mask1 = group_mask(log.num_attributes, attribute, 1)
    q1 = int(log.queries[mask1].sum())
    q0 = int(log.queries[~mask1].sum())
    if q1 == 0 or q0 == 0:
        raise EstimationError(
            f"attribute {attribute}: both groups need at least one query "
            f"(got {q1} and {q0})"
        )
    p1 = int(log.positives[mask1].sum())
    p0 = int(log.positives[~mask1].sum())
    return p1 / q1 - p0 / q0


def estimate_dp_stratified(
    log: QueryLog,
    attribute: int,
    gt: GroundTruth,
    weights: str = "empirical",
    allow_partial: bool = False,
) -> float:
    """Weighted difference of per-stratum positive rates between the groups.

    Weights are the population's conditional stratum shares within each
    group. With allow_partial, weights of unqueried strata are dropped and
    the rest renormalised instead of raising; the induced bias is bounded
    by the dropped mass.
    """
    pi = stratum_measure(gt, weights)
    estimates = []
    for value in (1, 0):
        w = conditional_weights(pi, log.num_attributes, attribute, value)
        active = w > 0
        unserved = active & (log.queries == 0)
        if np.any(unserved):
            if not allow_partial:
                missing = np.nonzero(unserved)[0].tolist()
                raise EstimationError(
                    f"attribute {attribute} group {value}: weighted strata "
                    f"{missing} received no queries"
                )
            w = np.where(unserved, 0.0, w)
            total = w.sum()
            if total <= 0:
                raise EstimationError(
                    f"attribute {attribute} group {value}: no weighted stratum was queried"
                )
            w = w / total
        rates = np.divide(
            log.positives, log.queries, out=np.zeros_like(w), where=log.queries > 0
        )
        estimates.append(float(w @ rates))
    return estimates[0] - estimates[1]


def estimator_for(method: SamplingMethod, strategy: CollabStrategy) -> str:
    """Which estimator keeps the given design unbiased."""
    if method is SamplingMethod.UNIFORM:
        return "simple"
    if strategy is CollabStrategy.NONE:
        return "simple"
    return "stratified"


def standard_error(sigma1: float, sigma0: float, count1, count0) -> float:
    """Summed per-group standard errors for one agent's disparity estimate."""
    if sigma1 < 0 or sigma0 < 0:
        raise EstimationError("sigmas must be non-negative")
    if count1 <= 0 or count0 <= 0:
        raise EstimationError("both group counts must be positive")
    return sigma1 / np.sqrt(count1) + sigma0 / np.sqrt(count0)


def average_dp_error(per_agent_errors) -> float:
    errors = np.asarray(per_agent_errors, dtype=float)
    if errors.size == 0:
        raise EstimationError("need at least one per-agent error")
    return float(errors.mean())


@dataclass(frozen=True)
class AuditOutcome:
    """Result of one repetition of one (method, strategy) audit."""

    repetition: int
    method: SamplingMethod
    strategy: CollabStrategy
    attributes: tuple[int, ...]
    dp_true: np.ndarray
    dp_estimate: np.ndarray
    group_counts: np.ndarray  # (agents, 2): queries with bit set, bit clear

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.dp_estimate - self.dp_true)

    @property
    def average_error(self) -> float:
        return average_dp_error(self.abs_error)

    @property
    def dsa_compliant(self) -> np.ndarray:
        """Whether each estimate sits inside the regulatory tolerance band."""
        return np.abs(self.dp_estimate) <= DSA_COMPLIANCE_BAND

    def to_rows(self) -> list[dict]:
        rows = []
        for a, attr in enumerate(self.attributes):
            rows.append(
                {
                    "repetition": self.repetition,
                    "method": self.method.value,
                    "strategy": self.strategy.value,
                    "agent": a,
                    "attribute": attr,
                    "dp_true": float(self.dp_true[a]),
                    "dp_estimate": float(self.dp_estimate[a]),
                    "abs_error": float(self.abs_error[a]),
                    "R_i": int(self.group_counts[a, 0]),
                    "R_i_bar": int(self.group_counts[a, 1]),
                }
            )
        return rows


OUTCOME_COLUMNS = [
    "repetition",
    "method",
    "strategy",
    "agent",
    "attribute",
    "dp_true",
    "dp_estimate",
    "abs_error",
    "R_i",
    "R_i_bar",
]
