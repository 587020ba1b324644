"""Query-allocation tests: rounding, optimal splits, and full plans."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.allocation import (
    AllocationPlan,
    CollabStrategy,
    SamplingMethod,
    agent_design,
    allocate,
    conditional_weights,
    group_sigma_under,
    neyman_joint,
    neyman_two_group,
    neyman_two_group_fraction,
    round_allocation,
    scaled_apriori_neyman_design,
    stratum_measure,
)
from fairaudit.exceptions import AllocationError, ConfigurationError
from fairaudit.strata import BudgetSpec, GroundTruth, synthetic_ground_truth

ALL_PAIRS = [(m, s) for m in SamplingMethod for s in CollabStrategy]


def toy_model() -> GroundTruth:
    counts = np.array([50, 30, 80, 40], dtype=float)
    return GroundTruth(2, counts / counts.sum(), np.array([0.1, 0.6, 0.3, 0.9]), counts)


def test_round_allocation_largest_remainder():
    np.testing.assert_array_equal(round_allocation([2.5, 2.5], 5), [3, 2])
    np.testing.assert_array_equal(round_allocation([1.2, 1.2, 2.6], 5), [1, 1, 3])
    np.testing.assert_array_equal(round_allocation([0.0, 10.0], 10), [0, 10])


@given(
    st.lists(st.floats(0.0, 100.0), min_size=1, max_size=40),
    st.integers(0, 500),
)
def test_round_allocation_properties(real, total):
    real = np.asarray(real)
    if real.sum() == 0:
        real = real + 1.0
    scaled = real / real.sum() * total
    rounded = round_allocation(scaled, total)
    assert rounded.sum() == total
    assert np.all(rounded >= 0)
    assert np.all(np.abs(rounded - scaled) < 1.0)


def test_two_group_fraction_power_rule():
    a, b = 0.4 ** (2 / 3), 0.1 ** (2 / 3)
    assert neyman_two_group_fraction(0.4, 0.1) == pytest.approx(a / (a + b))
    assert neyman_two_group_fraction(0.3, 0.3) == 0.5
    assert neyman_two_group_fraction(0.0, 0.0) == 0.5
    with pytest.raises(ConfigurationError):
        neyman_two_group_fraction(-0.1, 0.2)


def test_two_group_split_known_cases():
    assert neyman_two_group(0.4, 0.1, 100) == (72, 28, False)
    # a noiseless side still gets the one query estimators need
    assert neyman_two_group(0.5, 0.0, 10) == (9, 1, False)
    assert neyman_two_group(0.0, 0.5, 10) == (1, 9, False)
    with pytest.warns(UserWarning):
        split = neyman_two_group(0.0, 0.0, 10)
    assert split == (5, 5, True)
    with pytest.raises(ConfigurationError):
        neyman_two_group(0.3, 0.3, 1)


def test_stratum_measure_variants():
    gt = toy_model()
    np.testing.assert_allclose(stratum_measure(gt, "empirical"), gt.stratum_prob)
    indep = stratum_measure(gt, "independent")
    np.testing.assert_allclose(indep, gt.with_measure("independent").stratum_prob)
    with pytest.raises(ConfigurationError):
        stratum_measure(gt, "nope")


def test_conditional_weights_normalise_within_group():
    gt = toy_model()
    pi = stratum_measure(gt, "empirical")
    for attr in range(2):
        for value in (1, 0):
            w = conditional_weights(pi, 2, attr, value)
            assert w.sum() == pytest.approx(1.0)
            outside = [k for k in range(4) if ((k >> attr) & 1) != value]
            assert np.all(w[outside] == 0.0)


def test_group_sigma_under_matches_model():
    gt = toy_model()
    pi = stratum_measure(gt, "empirical")
    for attr in range(2):
        for value in (1, 0):
            assert group_sigma_under(pi, gt, attr, value) == pytest.approx(
                gt.group_sigma(attr, value)
            )


def test_agent_design_shapes():
    gt = toy_model()
    pi = stratum_measure(gt, "empirical")
    np.testing.assert_allclose(agent_design(SamplingMethod.UNIFORM, gt, 0, pi), pi)
    strat = agent_design(SamplingMethod.STRATIFIED, gt, 0, pi)
    w1 = conditional_weights(pi, 2, 0, 1)
    w0 = conditional_weights(pi, 2, 0, 0)
    np.testing.assert_allclose(strat, 0.5 * w1 + 0.5 * w0)
    ney = agent_design(SamplingMethod.NEYMAN, gt, 0, pi)
    t = neyman_two_group_fraction(gt.group_sigma(0, 1), gt.group_sigma(0, 0))
    np.testing.assert_allclose(ney, t * w1 + (1 - t) * w0)
    for design in (strat, ney):
        assert design.sum() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 4),
    st.integers(20, 400),
    st.randoms(use_true_random=False),
)
def test_every_plan_conserves_the_budget(m, per_agent, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    gt = synthetic_ground_truth(
        rng.uniform(0.15, 0.85, size=m), rng.uniform(0.05, 0.95, size=1 << m)
    )
    budget = BudgetSpec(per_agent, m)
    for method, strategy in ALL_PAIRS:
        plan = allocate(method, strategy, gt, budget)
        assert plan.counts.shape == (m, 1 << m)
        np.testing.assert_array_equal(plan.counts.sum(axis=1), per_agent)
        assert plan.pooled_counts().sum() == budget.total


def test_solo_rounding_keeps_group_totals_tight():
    """Each agent's own two group totals stay within one query of the
    real-valued design (side totals are rounded before strata)."""
    rng = np.random.default_rng(8)
    for _ in range(25):
        m = int(rng.integers(2, 5))
        gt = synthetic_ground_truth(
            rng.uniform(0.15, 0.85, size=m), rng.uniform(0.05, 0.95, size=1 << m)
        )
        per = int(rng.integers(30, 300))
        for method in SamplingMethod:
            plan = allocate(method, CollabStrategy.NONE, gt, BudgetSpec(per, m))
            for agent in range(m):
                got1, got0 = plan.group_totals(agent)
                want = plan.expected_available(agent)
                mask = np.array([((k >> agent) & 1) for k in range(1 << m)], bool)
                assert abs(got1 - want[mask].sum()) < 1.0
                assert abs(got0 - want[~mask].sum()) < 1.0


def test_uniform_apriori_reuses_the_solo_design():
    gt = toy_model()
    budget = BudgetSpec(100, 2)
    solo = allocate("uniform", "none", gt, budget)
    prior = allocate("uniform", "a-priori", gt, budget)
    np.testing.assert_array_equal(solo.counts, prior.counts)


def test_single_agent_has_nobody_to_coordinate_with():
    gt = synthetic_ground_truth([0.3], [0.2, 0.7])
    budget = BudgetSpec(80, 1)
    for method in SamplingMethod:
        solo = allocate(method, "none", gt, budget)
        prior = allocate(method, "a-priori", gt, budget)
        np.testing.assert_array_equal(solo.counts, prior.counts)


def test_stratified_apriori_spreads_evenly():
    gt = toy_model()
    plan = allocate("stratified", "a-priori", gt, BudgetSpec(100, 2))
    pooled = plan.pooled_counts()
    assert pooled.max() - pooled.min() <= 1


def test_neyman_joint_satisfies_kkt():
    rng = np.random.default_rng(9)
    for _ in range(10):
        m = int(rng.integers(2, 5))
        gt = synthetic_ground_truth(
            rng.uniform(0.15, 0.85, size=m), rng.uniform(0.05, 0.95, size=1 << m)
        )
        budget = BudgetSpec(int(rng.integers(60, 400)), m)
        joint = neyman_joint(gt, budget)
        assert joint.kkt_residual <= 1e-9
        assert joint.allocation.sum() == pytest.approx(budget.total)
        assert np.all(joint.allocation >= 1.0 - 1e-12)
        relaxed = neyman_joint(gt, budget, floor=0.0)
        assert relaxed.objective <= joint.objective + 1e-12


def test_neyman_joint_infeasible_floor_raises():
    gt = synthetic_ground_truth([0.5, 0.5, 0.5], [0.5] * 8)
    with pytest.raises(AllocationError):
        neyman_joint(gt, BudgetSpec(2, 3))


def test_scaled_apriori_design_is_a_distribution():
    gt = toy_model()
    pi = stratum_measure(gt, "independent")
    design = scaled_apriori_neyman_design(gt, pi)
    assert design.sum() == pytest.approx(1.0)
    assert np.all(design >= 0)


def test_plan_validation_and_csv(tmp_path):
    gt = toy_model()
    budget = BudgetSpec(50, 2)
    plan = allocate("uniform", "none", gt, budget)
    with pytest.raises(AllocationError):
        AllocationPlan(
            plan.method, plan.strategy, budget, plan.measure,
            plan.counts[:1], plan.real_designs,
        )
    bad = plan.counts.copy()
    bad[0, 0] += 1
    with pytest.raises(AllocationError):
        AllocationPlan(
            plan.method, plan.strategy, budget, plan.measure, bad, plan.real_designs
        )
    out = tmp_path / "plan.csv"
    plan.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "agent,stratum_index,count"
    assert len(lines) == 1 + 2 * 4
    totals = {}
    for line in lines[1:]:
        agent, _, count = line.split(",")
        totals[agent] = totals.get(agent, 0) + int(count)
    assert totals == {"0": 50, "1": 50}


def test_available_counts_follow_the_strategy():
    gt = toy_model()
    budget = BudgetSpec(60, 2)
    solo = allocate("stratified", "none", gt, budget)
    np.testing.assert_array_equal(solo.available_counts(0), solo.counts[0])
    pooled = allocate("stratified", "a-posteriori", gt, budget)
    np.testing.assert_array_equal(
        pooled.available_counts(0), pooled.counts.sum(axis=0)
    )


def test_deterministic_group_still_receives_its_forced_queries():
    # every response in attribute 1 group 0 is negative, so the optimised
    # design puts zero weight there; the forced minimum must fall back to
    # the sampling measure instead of failing
    gt = synthetic_ground_truth([0.5, 0.2], [0.0, 0.0, 0.5, 0.75])
    budget = BudgetSpec(40, 2)
    plan = allocate("neyman", "none", gt, budget)
    assert plan.counts[1, :2].sum() >= 1
    np.testing.assert_array_equal(plan.counts.sum(axis=1), [40, 40])
    pooled = allocate("neyman", "a-posteriori", gt, budget)
    assert int(pooled.counts.sum()) == 80
