"""Closed-form error laws and the relations that connect them.

For every (sampling method, collaboration strategy) pair there is a
closed-form prediction of the audit error: the mean over agents of the
summed per-group standard errors, evaluated at the real-valued query
counts the design implies. Designs whose estimator averages per-stratum
rates (pooled stratified and optimised designs) aggregate per-stratum
variances with the conditional group weights; all other designs use the
group-level sigma directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    CollabStrategy,
    SamplingMethod,
    agent_design,
    conditional_weights,
    group_sigma_under,
    neyman_joint,
    neyman_two_group_fraction,
    scaled_apriori_neyman_design,
    stratum_measure,
    _coerce_method,
    _coerce_strategy,
)
from .exceptions import AllocationError, ConfigurationError
from .strata import BudgetSpec, GroundTruth, ScanTemplate, group_mask

EQUALITY_RTOL = 1e-9
INEQUALITY_SLACK = -1e-12

# an attribute this lopsided makes coordinated per-stratum planning diverge
DIVERGENCE_THRESHOLD = 1.0 / np.sqrt(2.0)


def _weighted_group_se(
    gt: GroundTruth,
    pi: np.ndarray,
    attribute: int,
    value: int,
    stratum_counts: np.ndarray,
) -> float:
    """Standard error of the weighted per-stratum group estimate."""
    w = conditional_weights(pi, gt.num_attributes, attribute, value)
    var = gt.positive_rate * (1.0 - gt.positive_rate)
    active = (w > 0) & (var > 0)
    if np.any(active & (stratum_counts <= 0)):
        bad = np.nonzero(active & (stratum_counts <= 0))[0].tolist()
        raise ConfigurationError(f"weighted strata {bad} carry no queries")
    contrib = np.zeros_like(w)
    np.divide(w * w * var, stratum_counts, out=contrib, where=active)
    return float(np.sqrt(contrib.sum()))


def closed_form_per_agent(
    method,
    strategy,
    gt: GroundTruth,
    budget: BudgetSpec,
    measure: str = "empirical",
    apriori_neyman: str = "joint",
    floor: float = 1.0,
) -> np.ndarray:
    """Predicted per-agent error for one design, at unrounded counts.

    `floor` is the per-stratum minimum the jointly optimised design must
    respect, matching realisable plans; pass 0.0 for the fully continuous
    relaxation.
    """
    method = _coerce_method(method)
    strategy = _coerce_strategy(strategy)
    m = gt.num_attributes
    if budget.num_agents != m:
        raise ConfigurationError("budget and model disagree on the number of agents")
    if apriori_neyman not in ("joint", "scaled"):
        raise ConfigurationError(f"unknown a-priori neyman mode {apriori_neyman!r}")
    pi = stratum_measure(gt, measure)
    R = float(budget.per_agent)
    total = float(budget.total)

    sigmas = np.array(
        [
            (group_sigma_under(pi, gt, i, 1), group_sigma_under(pi, gt, i, 0))
            for i in range(m)
        ]
    )
    marginals = np.array(
        [float(np.where(group_mask(m, i, 1), pi, 0.0).sum()) for i in range(m)]
    )

    def simple(i: int, n1: float, n0: float) -> float:
        # a zero-sigma group contributes no sampling error even at zero share
        t1 = sigmas[i, 0] / np.sqrt(n1) if sigmas[i, 0] > 0 else 0.0
        t0 = sigmas[i, 1] / np.sqrt(n0) if sigmas[i, 1] > 0 else 0.0
        return t1 + t0

    def weighted(i: int, counts: np.ndarray) -> float:
        return _weighted_group_se(gt, pi, i, 1, counts) + _weighted_group_se(
            gt, pi, i, 0, counts
        )

    if method is SamplingMethod.UNIFORM:
        scale = 1.0 if strategy is CollabStrategy.NONE else float(m)
        return np.array(
            [simple(i, scale * marginals[i] * R, scale * (1 - marginals[i]) * R) for i in range(m)]
        )

    if method is SamplingMethod.STRATIFIED:
        if strategy is CollabStrategy.NONE:
            return np.array([simple(i, R / 2.0, R / 2.0) for i in range(m)])
        if strategy is CollabStrategy.A_POSTERIORI:
            pooled = R * np.sum(
                [agent_design(method, gt, j, pi) for j in range(m)], axis=0
            )
            return np.array([weighted(i, pooled) for i in range(m)])
        occupied = pi > 0
        pooled = np.where(occupied, total / occupied.sum(), 0.0)
        return np.array([weighted(i, pooled) for i in range(m)])

    # optimised two-group / pooled designs
    fractions = np.array(
        [neyman_two_group_fraction(sigmas[i, 0], sigmas[i, 1]) for i in range(m)]
    )
    if strategy is CollabStrategy.NONE:
        return np.array(
            [simple(i, fractions[i] * R, (1 - fractions[i]) * R) for i in range(m)]
        )
    if strategy is CollabStrategy.A_POSTERIORI:
        pooled = R * np.sum(
            [agent_design(method, gt, j, pi) for j in range(m)], axis=0
        )
        return np.array([weighted(i, pooled) for i in range(m)])
    if apriori_neyman == "scaled":
        return np.array(
            [
                simple(i, m * fractions[i] * R, m * (1 - fractions[i]) * R)
                for i in range(m)
            ]
        )
    joint = neyman_joint(gt, budget, measure=measure, floor=floor)
    return np.array([weighted(i, joint.allocation) for i in range(m)])


def closed_form_error(
    method,
    strategy,
    gt: GroundTruth,
    budget: BudgetSpec,
    measure: str = "empirical",
    apriori_neyman: str = "joint",
    floor: float = 1.0,
) -> float:
    """Predicted average audit error for one design."""
    return float(
        closed_form_per_agent(
            method,
            strategy,
            gt,
            budget,
            measure=measure,
            apriori_neyman=apriori_neyman,
            floor=floor,
        ).mean()
    )


@dataclass(frozen=True)
class RelationResult:
    name: str
    kind: str  # equality | inequality | asymptotic | existence
    lhs: float
    rhs: float
    slack: float
    holds: bool
    note: str = ""


@dataclass(frozen=True)
class RelationReport:
    num_agents: int
    per_agent_budget: int
    results: tuple[RelationResult, ...] = field(default_factory=tuple)

    def required_hold(self) -> bool:
        """All equalities and inequalities hold (trend and witness checks aside)."""
        return all(
            r.holds for r in self.results if r.kind in ("equality", "inequality")
        )

    def by_name(self, name: str) -> RelationResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def summary_lines(self) -> list[str]:
        lines = []
        for r in self.results:
            status = "PASS" if r.holds else "FAIL"
            if r.kind == "existence":
                status = "WITNESSED" if r.holds else "NOT WITNESSED"
            lines.append(
                f"[{status}] {r.name} ({r.kind}): lhs={r.lhs:.6g} rhs={r.rhs:.6g} "
                f"slack={r.slack:.3e}{' | ' + r.note if r.note else ''}"
            )
        return lines

    def to_rows(self) -> list[dict]:
        return [
            {
                "relation": r.name,
                "kind": r.kind,
                "lhs": r.lhs,
                "rhs": r.rhs,
                "slack": r.slack,
                "holds": r.holds,
                "note": r.note,
            }
            for r in self.results
        ]


def _equality(name: str, lhs: float, rhs: float, note: str = "") -> RelationResult:
    scale = max(abs(lhs), abs(rhs), 1e-30)
    slack = abs(lhs - rhs) / scale
    return RelationResult(name, "equality", lhs, rhs, slack, slack <= EQUALITY_RTOL, note)


def _inequality(name: str, lhs: float, rhs: float, note: str = "") -> RelationResult:
    slack = rhs - lhs
    return RelationResult(
        name, "inequality", lhs, rhs, slack, slack >= INEQUALITY_SLACK, note
    )


def _fair_twin(gt: GroundTruth) -> GroundTruth:
    """Same strata, response rate flattened to the population mean."""
    mean_rate = float(gt.stratum_prob @ gt.positive_rate)
    return GroundTruth(
        gt.num_attributes,
        gt.stratum_prob.copy(),
        np.full(gt.num_strata, mean_rate),
        gt.stratum_count.copy() if gt.stratum_count is not None else None,
    )


def _ratio_trend(
    template: ScanTemplate,
    numerator: tuple[str, str],
    denominator: tuple[str, str],
    per_agent_budget: int,
    m_values: range,
    burn_in: int = 3,
    band: tuple[float, float] = (0.95, 1.0),
) -> tuple[bool, str]:
    """Check that a closed-form error ratio approaches 1 from below as agents join."""
    ratios = []
    for m in m_values:
        gt = template.extend(m)
        budget = BudgetSpec(per_agent_budget, m)
        num = closed_form_error(*numerator, gt, budget)
        den = closed_form_error(*denominator, gt, budget)
        ratios.append(num / den)
    tail = [r for m, r in zip(m_values, ratios) if m >= burn_in]
    monotone = all(b >= a - 1e-12 for a, b in zip(tail, tail[1:]))
    inside = band[0] <= ratios[-1] <= band[1] + 1e-12
    note = f"final ratio {ratios[-1]:.4f}, monotone tail {monotone}"
    return monotone and inside, note


def verify_relations(
    gt: GroundTruth,
    budget: BudgetSpec,
    measure: str = "empirical",
    scan_budget: int | None = None,
    max_scan_agents: int = 12,
) -> RelationReport:
    """Evaluate every closed-form relation on one instance.

    Equalities and inequalities are checked directly at this instance's
    size. Asymptotic relations are checked as trends over a synthetic scan
    built from each attribute's one-attribute template. Existence relations
    report whether this instance witnesses them.
    """
    m = gt.num_attributes
    R = budget.per_agent
    results: list[RelationResult] = []

    def eps(method, strategy, **kw):
        return closed_form_error(method, strategy, gt, budget, measure=measure, **kw)

    unif_none = eps("uniform", "none")
    unif_post = eps("uniform", "a-posteriori")
    unif_prior = eps("uniform", "a-priori")
    strat_none = eps("stratified", "none")
    strat_post = eps("stratified", "a-posteriori")
    strat_prior = eps("stratified", "a-priori")
    ney_none = eps("neyman", "none")
    ney_post = eps("neyman", "a-posteriori")
    ney_prior_scaled = eps("neyman", "a-priori", apriori_neyman="scaled")
    ney_prior_joint = eps("neyman", "a-priori", apriori_neyman="joint")

    results.append(
        _equality("uniform_apriori_equals_aposteriori", unif_prior, unif_post)
    )
    results.append(
        _equality(
            "uniform_collaboration_scaling",
            unif_post,
            unif_none / np.sqrt(m),
            note="pooling m uniform designs divides the error by sqrt(m)",
        )
    )
    results.append(
        _inequality(
            "optimised_apriori_bound",
            ney_prior_scaled,
            ney_none / np.sqrt(m),
            note=f"scaled coordinated design; jointly optimised value {ney_prior_joint:.6g}",
        )
    )
    results.append(
        _inequality(
            "optimised_vs_uniform_solo",
            ney_none / np.sqrt(m),
            unif_none,
            note="solo optimised design beats solo uniform, even before the sqrt(m) gain",
        )
    )
    results.append(_inequality("optimised_pooling_gain", ney_post, ney_none))
    results.append(_inequality("stratified_pooling_gain", strat_post, strat_none))
    results.append(
        _inequality(
            "joint_dominates_stratified_apriori",
            ney_prior_joint,
            strat_prior,
            note="the optimiser may always fall back to the even per-stratum split",
        )
    )
    results.append(
        _inequality(
            "joint_dominates_uniform_apriori",
            ney_prior_joint,
            unif_prior,
            note="the pooled uniform design is feasible and its weighted value is no larger",
        )
    )

    # asymptotic trends, scanned on per-attribute fair templates
    scan_R = scan_budget if scan_budget is not None else R
    mean_rate = float(gt.stratum_prob @ gt.positive_rate)
    mean_rate = min(max(mean_rate, 0.05), 0.95)
    trend_notes = {"optimised": [], "stratified": []}
    trend_holds = {"optimised": True, "stratified": True}
    for i in range(m):
        p = float(np.clip(gt.marginals[i], 0.05, 0.95))
        template = ScanTemplate(p, mean_rate, mean_rate)
        for label, pair in (
            ("optimised", ("neyman", "a-posteriori")),
            ("stratified", ("stratified", "a-posteriori")),
        ):
            ok, note = _ratio_trend(
                template,
                pair,
                ("uniform", "a-posteriori"),
                scan_R,
                range(2, max_scan_agents + 1),
            )
            trend_holds[label] = trend_holds[label] and ok
            trend_notes[label].append(f"attr {i}: {note}")
    results.append(
        RelationResult(
            "optimised_pooling_washes_out",
            "asymptotic",
            float("nan"),
            float("nan"),
            0.0,
            trend_holds["optimised"],
            "; ".join(trend_notes["optimised"]),
        )
    )
    results.append(
        RelationResult(
            "stratified_pooling_washes_out",
            "asymptotic",
            float("nan"),
            float("nan"),
            0.0,
            trend_holds["stratified"],
            "; ".join(trend_notes["stratified"]),
        )
    )

    # coordinated per-stratum planning diverges when every attribute is lopsided
    lopsided = bool(np.all(np.maximum(gt.marginals, 1 - gt.marginals) > DIVERGENCE_THRESHOLD))
    div_values = []
    for scan_m in range(6, max_scan_agents + 1):
        template = ScanTemplate(
            float(np.clip(np.maximum(gt.marginals, 1 - gt.marginals).mean(), 0.05, 0.95)),
            mean_rate,
            mean_rate,
        )
        div_values.append(
            closed_form_error(
                "stratified", "a-priori", template.extend(scan_m), BudgetSpec(scan_R, scan_m)
            )
        )
    increasing = all(b > a for a, b in zip(div_values, div_values[1:]))
    if lopsided:
        div_holds = increasing
        div_note = f"all attributes lopsided; scan errors {['%.4f' % v for v in div_values]}"
    else:
        div_holds = True
        div_note = "instance not uniformly lopsided; divergence not required"
    results.append(
        RelationResult(
            "coordinated_planning_divergence",
            "asymptotic",
            float("nan"),
            float("nan"),
            0.0,
            div_holds,
            div_note,
        )
    )

    # on a fair model the solo optimum is the even split
    fair = _fair_twin(gt)
    fair_strat = closed_form_error("stratified", "none", fair, budget, measure=measure)
    fair_ney = closed_form_error("neyman", "none", fair, budget, measure=measure)
    results.append(
        _equality(
            "fair_model_even_split_optimal",
            fair_strat,
            fair_ney,
            note="evaluated on this instance's response-flattened twin",
        )
    )

    results.append(
        RelationResult(
            "pooling_can_beat_planning",
            "existence",
            strat_post,
            strat_prior,
            strat_prior - strat_post,
            strat_post < strat_prior,
            "witnessed when pooled ad-hoc queries beat the coordinated even spread",
        )
    )

    return RelationReport(m, R, tuple(results))


def asymptotic_scan(
    template: ScanTemplate,
    m_values,
    per_agent_budget: int,
    apriori_neyman: str = "joint",
) -> list[dict]:
    """Closed-form errors of all nine designs as the agent panel grows.

    Designs whose floored optimisation is infeasible at a given size (the
    budget cannot cover every stratum) report NaN for that size.
    """
    rows = []
    for m in m_values:
        gt = template.extend(int(m))
        budget = BudgetSpec(per_agent_budget, int(m))
        for method in SamplingMethod:
            for strategy in CollabStrategy:
                try:
                    eps = closed_form_error(
                        method,
                        strategy,
                        gt,
                        budget,
                        apriori_neyman=apriori_neyman,
                    )
                except AllocationError:
                    eps = float("nan")
                rows.append(
                    {
                        "num_agents": int(m),
                        "method": method.value,
                        "strategy": strategy.value,
                        "epsilon": eps,
                    }
                )
    return rows
