"""Experiment orchestration: Monte-Carlo audits, sweeps, and bound checks.

Runs are deterministic: repetition r derives its seed as base_seed XOR r,
and every (repetition, sampling method, plan) simulation draws from its own
SeedSequence keyed on those indices, so results do not depend on execution
order and shared plans reuse identical draws across the strategies that
compare them (no-collaboration and pooling read the same per-agent logs).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, fields, replace
from itertools import combinations
from pathlib import Path

import numpy as np
import yaml

from .allocation import (
    AllocationPlan,
    CollabStrategy,
    SamplingMethod,
    _coerce_method,
    _coerce_strategy,
    allocate,
)
from .bounds import RelationReport, closed_form_error, verify_relations
from .dataset import Population, ingest, load_bundled_schema, load_schema
from .estimation import (
    OUTCOME_COLUMNS,
    AuditOutcome,
    QueryLog,
    estimate_dp_simple,
    estimate_dp_stratified,
    estimator_for,
)
from .exceptions import AuditError, ConfigurationError
from .strata import BudgetSpec, GroundTruth, group_mask, synthetic_ground_truth

ALL_METHODS = tuple(SamplingMethod)
ALL_STRATEGIES = tuple(CollabStrategy)

SWEEP_COLUMNS = ["sweep", "value", "method", "strategy", "mean_abs_error"]
BOUNDS_COLUMNS = [
    "method",
    "strategy",
    "closed_form",
    "simulated_mean",
    "simulated_sd",
    "repetitions",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment description; file values are overridden by CLI flags."""

    dataset: str | None = None
    schema: str | None = None
    synthetic_marginals: tuple | None = None
    synthetic_rates: tuple | None = None
    attributes: tuple | None = None
    methods: tuple = ALL_METHODS
    strategies: tuple = ALL_STRATEGIES
    per_agent_budget: int = 250
    budgets: tuple | None = None
    agent_counts: tuple | None = None
    repetitions: int = 300
    base_seed: int = 0
    output: str | None = None
    weights: str = "empirical"
    apriori_neyman: str = "joint"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be at least 1")
        if self.per_agent_budget < 2:
            raise ConfigurationError("per-agent budget must be at least 2")
        if self.budgets is not None and any(b < 2 for b in self.budgets):
            raise ConfigurationError("all budgets must be at least 2")
        if self.agent_counts is not None and any(a < 1 for a in self.agent_counts):
            raise ConfigurationError("agent counts must be positive")
        if self.weights not in ("empirical", "independent"):
            raise ConfigurationError(
                f"weights must be 'empirical' or 'independent', got {self.weights!r}"
            )
        if self.apriori_neyman not in ("joint", "scaled"):
            raise ConfigurationError(
                f"apriori_neyman must be 'joint' or 'scaled', got {self.apriori_neyman!r}"
            )
        object.__setattr__(self, "methods", tuple(_coerce_method(m) for m in self.methods))
        object.__setattr__(
            self, "strategies", tuple(_coerce_strategy(s) for s in self.strategies)
        )

    @staticmethod
    def from_file(path, **overrides) -> "ExperimentConfig":
        """Read a YAML config; keyword overrides win over file values."""
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown config key(s) {unknown} in {path}")
        merged = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
        for key in (
            "attributes",
            "methods",
            "strategies",
            "budgets",
            "agent_counts",
            "synthetic_marginals",
            "synthetic_rates",
        ):
            if key in merged and merged[key] is not None:
                merged[key] = tuple(merged[key])
        return ExperimentConfig(**merged)


def load_population(config: ExperimentConfig) -> Population:
    """Materialise the audited population the config points at."""
    if config.dataset is not None:
        if config.schema is None:
            raise ConfigurationError("a dataset needs a schema (bundled name or path)")
        candidate = Path(config.schema)
        if candidate.suffix in (".yaml", ".yml", ".json") or candidate.exists():
            schema = load_schema(candidate)
        else:
            schema = load_bundled_schema(config.schema)
        if config.attributes is not None:
            names = [str(a) for a in config.attributes]
            schema = schema.select(names)
        return ingest(config.dataset, schema)
    if config.synthetic_marginals is None:
        raise ConfigurationError(
            "config needs either a dataset+schema or synthetic marginals"
        )
    gt = synthetic_ground_truth(
        np.asarray(config.synthetic_marginals, dtype=float),
        (
            np.asarray(config.synthetic_rates, dtype=float)
            if config.synthetic_rates is not None
            else np.full(1 << len(config.synthetic_marginals), 0.5)
        ),
    )
    return population_from_ground_truth(gt)


def population_from_ground_truth(
    gt: GroundTruth, virtual_rows: int = 10**9
) -> Population:
    """Synthetic oracle: a Population whose stratum rates follow `gt` exactly.

    Row counts are virtual (only the rates matter to the oracle); strata with
    zero probability stay empty so allocation and estimation skip them.
    """
    counts = np.where(gt.stratum_prob > 0, virtual_rows, 0).astype(np.int64)
    with_rates = gt.positive_rate * counts
    positives = np.rint(with_rates).astype(np.int64)
    rates = np.zeros_like(gt.positive_rate)
    occupied = counts > 0
    rates[occupied] = positives[occupied] / counts[occupied]
    synthetic = GroundTruth(
        gt.num_attributes, gt.stratum_prob.copy(), rates, stratum_count=counts
    )
    return Population(
        gt.num_attributes,
        counts,
        positives,
        synthetic,
        tuple(f"attr{i}" for i in range(gt.num_attributes)),
        name="synthetic",
    )


def _simulate_plan(
    population: Population, plan: AllocationPlan, rng: np.random.Generator
) -> list[QueryLog]:
    """One log per agent row: batched oracle draws at the planned counts."""
    logs = []
    for agent in range(plan.counts.shape[0]):
        row = plan.counts[agent]
        positives = np.zeros_like(row)
        for k in np.nonzero(row)[0]:
            positives[k] = population.respond_batch(int(k), int(row[k]), rng)
        logs.append(
            QueryLog(population.num_attributes, row.copy(), positives, agent=agent)
        )
    return logs


def _estimate_pair(
    method: SamplingMethod,
    strategy: CollabStrategy,
    plan: AllocationPlan,
    logs: list[QueryLog],
    gt: GroundTruth,
    weights: str,
) -> np.ndarray:
    m = gt.num_attributes
    kind = estimator_for(method, strategy)
    estimates = np.empty(m)
    pooled = QueryLog.pool(logs) if strategy is not CollabStrategy.NONE else None
    for agent in range(m):
        if kind == "simple":
            log = logs[agent] if pooled is None else pooled
            estimates[agent] = estimate_dp_simple(log, agent)
        else:
            estimates[agent] = estimate_dp_stratified(
                pooled if pooled is not None else logs[agent],
                agent,
                gt,
                weights=weights,
                allow_partial=True,
            )
    return estimates


def run_audit(config: ExperimentConfig, population: Population | None = None):
    """Yield one AuditOutcome per (repetition, method, strategy).

    A failing pair is reported as a warning carrying its (repetition,
    method, strategy) context and does not stop the other pairs.
    """
    if population is None:
        population = load_population(config)
    gt = population.ground_truth
    m = population.num_attributes
    budget = BudgetSpec(config.per_agent_budget, m)
    dp_true = gt.disparity.copy()

    # plans are repetition-independent; build each needed one exactly once.
    # Stream keys follow design identity, not the requested subset: a
    # coordinated plan that equals the solo plan reads the solo stream, so
    # strategies that coincide by construction coincide exactly in any run.
    plans: dict = {}
    streams: dict = {}
    for mi, method in enumerate(ALL_METHODS):
        if method not in config.methods:
            continue
        needed = set()
        for strategy in config.strategies:
            key = "solo"
            if strategy is CollabStrategy.A_PRIORI and method is not SamplingMethod.UNIFORM:
                key = "coordinated"
            needed.add(key)
        solo_plan = allocate(
            method,
            CollabStrategy.NONE,
            gt,
            budget,
            measure=config.weights,
            apriori_neyman=config.apriori_neyman,
        )
        for key in ("solo", "coordinated"):
            if key not in needed:
                continue
            if key == "solo":
                plan, pi = solo_plan, 0
            else:
                plan = allocate(
                    method,
                    CollabStrategy.A_PRIORI,
                    gt,
                    budget,
                    measure=config.weights,
                    apriori_neyman=config.apriori_neyman,
                )
                pi = 0 if np.array_equal(plan.counts, solo_plan.counts) else 1
            plans[(method, key)] = plan
            streams[(method, key)] = (mi, pi)

    for rep in range(config.repetitions):
        rep_seed = config.base_seed ^ rep
        plan_logs: dict = {}
        for (method, key), plan in plans.items():
            mi, pi = streams[(method, key)]
            if pi == 0 and key == "coordinated" and (method, "solo") in plan_logs:
                plan_logs[(method, key)] = plan_logs[(method, "solo")]
                continue
            rng = np.random.default_rng(np.random.SeedSequence((rep_seed, mi, pi)))
            plan_logs[(method, key)] = _simulate_plan(population, plan, rng)

        for method in config.methods:
            for strategy in config.strategies:
                key = "solo"
                if strategy is CollabStrategy.A_PRIORI and method is not SamplingMethod.UNIFORM:
                    key = "coordinated"
                plan = plans[(method, key)]
                logs = plan_logs[(method, key)]
                try:
                    estimates = _estimate_pair(
                        method, strategy, plan, logs, gt, config.weights
                    )
                except AuditError as exc:
                    warnings.warn(
                        f"repetition {rep}, {method.value}/{strategy.value}: {exc}",
                        stacklevel=2,
                    )
                    continue
                if strategy is CollabStrategy.NONE:
                    available = [plan.counts[agent] for agent in range(m)]
                else:
                    available = [plan.pooled_counts()] * m
                group_counts = np.empty((m, 2), dtype=np.int64)
                for agent in range(m):
                    mask1 = group_mask(m, agent, 1)
                    group_counts[agent, 0] = int(available[agent][mask1].sum())
                    group_counts[agent, 1] = int(available[agent][~mask1].sum())
                yield AuditOutcome(
                    repetition=rep,
                    method=method,
                    strategy=strategy,
                    attributes=population.attribute_names,
                    dp_true=dp_true,
                    dp_estimate=estimates,
                    group_counts=group_counts,
                )


def summarise(outcomes) -> dict:
    """Mean absolute estimation error per (method, strategy), over everything."""
    sums: dict = {}
    counts: dict = {}
    for outcome in outcomes:
        key = (outcome.method.value, outcome.strategy.value)
        err = float(np.mean(np.abs(outcome.dp_estimate - outcome.dp_true)))
        sums[key] = sums.get(key, 0.0) + err
        counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}


def sweep_budget(config: ExperimentConfig, population: Population | None = None) -> list[dict]:
    """Mean error per (budget, method, strategy), long format."""
    if config.budgets is None:
        raise ConfigurationError("sweep-budget needs a list of budgets")
    if population is None:
        population = load_population(config)
    rows = []
    for R in config.budgets:
        cfg = replace(config, per_agent_budget=int(R), budgets=None)
        means = summarise(run_audit(cfg, population))
        for (method, strategy), err in sorted(means.items()):
            rows.append(
                {
                    "sweep": "budget",
                    "value": int(R),
                    "method": method,
                    "strategy": strategy,
                    "mean_abs_error": err,
                }
            )
    return rows


def sweep_agents(config: ExperimentConfig, population: Population | None = None) -> list[dict]:
    """Mean error per (panel size, method, strategy), averaged over all
    attribute combinations of that size."""
    if config.agent_counts is None:
        raise ConfigurationError("sweep-agents needs a list of agent counts")
    if population is None:
        population = load_population(config)
    pool = population.num_attributes
    if max(config.agent_counts) > pool:
        raise ConfigurationError(
            f"agent count {max(config.agent_counts)} exceeds the "
            f"{pool} available attributes"
        )
    rows = []
    for m in config.agent_counts:
        sums: dict = {}
        counts: dict = {}
        for combo_index, combo in enumerate(combinations(range(pool), int(m))):
            sub = population if len(combo) == pool else population.restrict(combo)
            cfg = replace(
                config,
                agent_counts=None,
                base_seed=config.base_seed + 7919 * combo_index,
            )
            for key, err in summarise(run_audit(cfg, sub)).items():
                sums[key] = sums.get(key, 0.0) + err
                counts[key] = counts.get(key, 0) + 1
        for key in sorted(sums):
            rows.append(
                {
                    "sweep": "agents",
                    "value": int(m),
                    "method": key[0],
                    "strategy": key[1],
                    "mean_abs_error": sums[key] / counts[key],
                }
            )
    return rows


def bounds_check(
    config: ExperimentConfig, population: Population | None = None
) -> tuple[RelationReport, list[dict]]:
    """Relation report plus simulated-vs-predicted error per design pair."""
    if population is None:
        population = load_population(config)
    gt = population.ground_truth
    budget = BudgetSpec(config.per_agent_budget, population.num_attributes)
    report = verify_relations(gt, budget, measure=config.weights)

    per_pair: dict = {}
    for outcome in run_audit(config, population):
        key = (outcome.method, outcome.strategy)
        per_pair.setdefault(key, []).append(
            float(np.mean(np.abs(outcome.dp_estimate - outcome.dp_true)))
        )
    rows = []
    for (method, strategy), errs in sorted(
        per_pair.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
    ):
        predicted = closed_form_error(
            method,
            strategy,
            gt,
            budget,
            measure=config.weights,
            apriori_neyman=config.apriori_neyman,
        )
        rows.append(
            {
                "method": method.value,
                "strategy": strategy.value,
                "closed_form": predicted,
                "simulated_mean": float(np.mean(errs)),
                "simulated_sd": float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0,
                "repetitions": len(errs),
            }
        )
    return report, rows


def _format_cell(value) -> str:
    if isinstance(value, float):
        return "%.12g" % value
    return str(value)


def write_rows(path, fieldnames: list[str], rows: list[dict]) -> None:
    """Deterministic CSV: fixed column order, %.12g float formatting."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_format_cell(row[name]) for name in fieldnames])


def outcome_rows(outcomes) -> list[dict]:
    rows = []
    for outcome in outcomes:
        rows.extend(outcome.to_rows())
    return rows


def write_outcomes(path, outcomes) -> None:
    write_rows(path, OUTCOME_COLUMNS, outcome_rows(outcomes))
