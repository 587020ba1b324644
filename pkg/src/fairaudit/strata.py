"""Strata bookkeeping, budgets, and population-level ground truth.

A population is described by m binary protected attributes. Crossing them
yields 2**m strata. Stratum indices use a fixed bit convention: attribute 0
is the least significant bit, so the stratum holding attribute values
(b_0, ..., b_{m-1}) has index sum(b_j * 2**j).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

MAX_ATTRIBUTES = 20

_PROB_ATOL = 1e-9


def stratum_index(bits: tuple[int, ...]) -> int:
    """Map a bit vector (attribute 0 first) to its stratum index."""
    if not bits:
        raise ConfigurationError("stratum bits must be non-empty")
    if any(b not in (0, 1) for b in bits):
        raise ConfigurationError(f"stratum bits must be 0/1, got {bits!r}")
    return sum(b << j for j, b in enumerate(bits))


def stratum_bits(index: int, num_attributes: int) -> tuple[int, ...]:
    """Inverse of stratum_index for a given attribute count."""
    _check_num_attributes(num_attributes)
    if not 0 <= index < (1 << num_attributes):
        raise ConfigurationError(
            f"stratum index {index} out of range for {num_attributes} attributes"
        )
    return tuple((index >> j) & 1 for j in range(num_attributes))


def _check_num_attributes(num_attributes: int) -> None:
    if not 1 <= num_attributes <= MAX_ATTRIBUTES:
        raise ConfigurationError(
            f"number of attributes must be in [1, {MAX_ATTRIBUTES}], got {num_attributes}"
        )


@dataclass(frozen=True)
class StratumId:
    """One cell of the cross-classification of all audited attributes."""

    bits: tuple[int, ...]

    def __post_init__(self):
        stratum_index(self.bits)  # validates

    @property
    def index(self) -> int:
        return stratum_index(self.bits)

    @classmethod
    def from_index(cls, index: int, num_attributes: int) -> "StratumId":
        return cls(stratum_bits(index, num_attributes))

    def attribute_value(self, attribute: int) -> int:
        return self.bits[attribute]


def enumerate_strata(num_attributes: int) -> list[StratumId]:
    """All 2**m strata in index order."""
    _check_num_attributes(num_attributes)
    return [
        StratumId(bits[::-1])
        for bits in itertools.product((0, 1), repeat=num_attributes)
    ]


def group_strata(num_attributes: int, attribute: int, value: int) -> list[int]:
    """Indices of the strata where the given attribute takes the given value."""
    _check_num_attributes(num_attributes)
    if not 0 <= attribute < num_attributes:
        raise ConfigurationError(f"attribute {attribute} out of range")
    if value not in (0, 1):
        raise ConfigurationError(f"attribute value must be 0/1, got {value}")
    return [
        k for k in range(1 << num_attributes) if ((k >> attribute) & 1) == value
    ]


def group_mask(num_attributes: int, attribute: int, value: int) -> np.ndarray:
    """Boolean mask over stratum indices for one attribute group."""
    idx = np.arange(1 << num_attributes)
    return ((idx >> attribute) & 1) == value


@dataclass(frozen=True)
class BudgetSpec:
    """Per-agent query budget. Total pooled budget is num_agents * per_agent."""

    per_agent: int
    num_agents: int

    def __post_init__(self):
        if self.per_agent < 1:
            raise ConfigurationError(f"per-agent budget must be >= 1, got {self.per_agent}")
        _check_num_attributes(self.num_agents)

    @property
    def total(self) -> int:
        return self.per_agent * self.num_agents


@dataclass(frozen=True)
class GroundTruth:
    """Population-level facts the audit tries to recover.

    stratum_prob[k]  share of the population in stratum k (sums to 1)
    positive_rate[k] share of positive classifier outputs inside stratum k
    stratum_count[k] dataset rows in stratum k, or None for synthetic models
    """

    num_attributes: int
    stratum_prob: np.ndarray
    positive_rate: np.ndarray
    stratum_count: np.ndarray | None = None
    marginals: np.ndarray = field(init=False)
    disparity: np.ndarray = field(init=False)

    def __post_init__(self):
        m = self.num_attributes
        _check_num_attributes(m)
        n = 1 << m
        prob = np.asarray(self.stratum_prob, dtype=float)
        rate = np.asarray(self.positive_rate, dtype=float)
        if prob.shape != (n,) or rate.shape != (n,):
            raise ConfigurationError(
                f"expected {n} strata, got prob {prob.shape} and rate {rate.shape}"
            )
        if np.any(prob < -_PROB_ATOL) or abs(prob.sum() - 1.0) > 1e-9:
            raise ConfigurationError("stratum probabilities must be >= 0 and sum to 1")
        if np.any((rate < -_PROB_ATOL) | (rate > 1 + _PROB_ATOL)):
            raise ConfigurationError("positive rates must lie in [0, 1]")
        prob = np.clip(prob, 0.0, None)
        prob = prob / prob.sum()
        rate = np.clip(rate, 0.0, 1.0)
        object.__setattr__(self, "stratum_prob", prob)
        object.__setattr__(self, "positive_rate", rate)
        if self.stratum_count is not None:
            cnt = np.asarray(self.stratum_count, dtype=np.int64)
            if cnt.shape != (n,) or np.any(cnt < 0):
                raise ConfigurationError("stratum counts must be a non-negative vector per stratum")
            object.__setattr__(self, "stratum_count", cnt)

        marginals = np.array(
            [prob[group_mask(m, i, 1)].sum() for i in range(m)]
        )
        object.__setattr__(self, "marginals", marginals)
        disparity = np.array(
            [self.group_rate(i, 1) - self.group_rate(i, 0) for i in range(m)]
        )
        object.__setattr__(self, "disparity", disparity)

    @property
    def num_strata(self) -> int:
        return 1 << self.num_attributes

    def nonempty(self) -> np.ndarray:
        """Strata that actually contain population mass."""
        if self.stratum_count is not None:
            return self.stratum_count > 0
        return self.stratum_prob > 0.0

    def group_weights(self, attribute: int, value: int) -> np.ndarray:
        """P(stratum | attribute group): conditional weights over all strata.

        Entries outside the group are zero; inside, proportional to
        stratum_prob and renormalised to 1.
        """
        mask = group_mask(self.num_attributes, attribute, value)
        w = np.where(mask, self.stratum_prob, 0.0)
        total = w.sum()
        if total <= 0.0:
            raise ConfigurationError(
                f"attribute {attribute} group {value} has zero population mass"
            )
        return w / total

    def group_rate(self, attribute: int, value: int) -> float:
        w = self.group_weights(attribute, value)
        return float(w @ self.positive_rate)

    def group_sigma(self, attribute: int, value: int) -> float:
        """Bernoulli standard deviation of the response within one group."""
        q = self.group_rate(attribute, value)
        return float(np.sqrt(q * (1.0 - q)))

    def stratum_sigma(self) -> np.ndarray:
        return np.sqrt(self.positive_rate * (1.0 - self.positive_rate))

    def independent_prob(self) -> np.ndarray:
        """Product measure over strata built from the attribute marginals."""
        m = self.num_attributes
        prob = np.ones(self.num_strata)
        for i in range(m):
            p = self.marginals[i]
            bit = ((np.arange(self.num_strata) >> i) & 1).astype(float)
            prob *= np.where(bit == 1.0, p, 1.0 - p)
        return prob

    def with_measure(self, measure: str) -> "GroundTruth":
        """Same response rates under either the empirical or the product measure."""
        if measure == "empirical":
            return self
        if measure == "independent":
            return GroundTruth(
                num_attributes=self.num_attributes,
                stratum_prob=self.independent_prob(),
                positive_rate=self.positive_rate.copy(),
                stratum_count=None,
            )
        raise ConfigurationError(f"unknown measure {measure!r}")

    def restrict(self, attributes: list[int]) -> "GroundTruth":
        """Marginalise down to a subset of attributes (audit of a sub-panel)."""
        m = self.num_attributes
        sub = list(attributes)
        if len(set(sub)) != len(sub) or any(not 0 <= a < m for a in sub):
            raise ConfigurationError(f"invalid attribute subset {attributes!r}")
        ms = len(sub)
        n_sub = 1 << ms
        prob = np.zeros(n_sub)
        mass_pos = np.zeros(n_sub)
        counts = np.zeros(n_sub, dtype=np.int64) if self.stratum_count is not None else None
        for k in range(self.num_strata):
            ks = sum((((k >> a) & 1) << j) for j, a in enumerate(sub))
            prob[ks] += self.stratum_prob[k]
            mass_pos[ks] += self.stratum_prob[k] * self.positive_rate[k]
            if counts is not None:
                counts[ks] += self.stratum_count[k]
        rate = np.divide(mass_pos, prob, out=np.zeros(n_sub), where=prob > 0)
        return GroundTruth(ms, prob, rate, counts)


def synthetic_ground_truth(
    marginals: list[float] | np.ndarray,
    positive_rate: list[float] | np.ndarray,
) -> GroundTruth:
    """Build a synthetic model with independent attributes and given stratum rates."""
    marginals = np.asarray(marginals, dtype=float)
    m = len(marginals)
    _check_num_attributes(m)
    if np.any((marginals <= 0) | (marginals >= 1)):
        raise ConfigurationError("synthetic marginals must lie strictly in (0, 1)")
    prob = np.ones(1 << m)
    for i in range(m):
        bit = ((np.arange(1 << m) >> i) & 1).astype(float)
        prob *= np.where(bit == 1.0, marginals[i], 1.0 - marginals[i])
    return GroundTruth(m, prob, np.asarray(positive_rate, dtype=float))


@dataclass(frozen=True)
class ScanTemplate:
    """One-attribute audit template extended to m look-alike attributes.

    marginal      P(X_j = 1) shared by every replicated attribute
    rate_when_1   response rate contribution when a bit is set
    rate_when_0   response rate contribution when a bit is clear

    The extended stratum rate is the mean of per-attribute contributions,
    which keeps every rate inside [0, 1] for any m.
    """

    marginal: float
    rate_when_1: float
    rate_when_0: float

    def __post_init__(self):
        if not 0 < self.marginal < 1:
            raise ConfigurationError("template marginal must lie in (0, 1)")
        for r in (self.rate_when_1, self.rate_when_0):
            if not 0 <= r <= 1:
                raise ConfigurationError("template rates must lie in [0, 1]")

    def extend(self, num_attributes: int) -> GroundTruth:
        _check_num_attributes(num_attributes)
        n = 1 << num_attributes
        idx = np.arange(n)
        ones = np.zeros(n)
        for j in range(num_attributes):
            ones += (idx >> j) & 1
        rate = (ones * self.rate_when_1 + (num_attributes - ones) * self.rate_when_0) / num_attributes
        return synthetic_ground_truth(
            [self.marginal] * num_attributes, rate
        )
