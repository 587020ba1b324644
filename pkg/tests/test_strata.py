"""Stratum bookkeeping and ground-truth model tests."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairaudit.exceptions import ConfigurationError
from fairaudit.strata import (
    MAX_ATTRIBUTES,
    BudgetSpec,
    GroundTruth,
    ScanTemplate,
    StratumId,
    enumerate_strata,
    group_mask,
    group_strata,
    stratum_bits,
    stratum_index,
    synthetic_ground_truth,
)


def toy_model() -> GroundTruth:
    counts = np.array([50, 30, 80, 40], dtype=float)
    rates = np.array([0.1, 0.6, 0.3, 0.9])
    return GroundTruth(2, counts / counts.sum(), rates, counts)


@given(st.integers(1, MAX_ATTRIBUTES).flatmap(
    lambda m: st.tuples(st.just(m), st.integers(0, (1 << m) - 1))
))
def test_index_bits_roundtrip(case):
    m, index = case
    bits = stratum_bits(index, m)
    assert len(bits) == m
    assert stratum_index(bits) == index


def test_attribute_zero_is_the_low_bit():
    assert stratum_index((1, 0, 0)) == 1
    assert stratum_index((0, 1, 0)) == 2
    assert stratum_index((1, 1, 0)) == 3
    assert stratum_index((0, 0, 1)) == 4
    assert stratum_bits(5, 3) == (1, 0, 1)


def test_stratum_id_accessors():
    sid = StratumId.from_index(6, 3)
    assert sid.index == 6
    assert sid.attribute_value(0) == 0
    assert sid.attribute_value(1) == 1
    assert sid.attribute_value(2) == 1


def test_enumerate_strata_orders_by_index():
    strata = enumerate_strata(3)
    assert len(strata) == 8
    assert [s.index for s in strata] == list(range(8))


def test_group_strata_against_bruteforce():
    # value=1 for attribute 2 of 3 selects the upper half of the index range
    assert group_strata(3, 2, 1) == [4, 5, 6, 7]
    assert group_strata(3, 2, 0) == [0, 1, 2, 3]
    rng = np.random.default_rng(1)
    for _ in range(20):
        m = int(rng.integers(1, 8))
        attr = int(rng.integers(0, m))
        value = int(rng.integers(0, 2))
        expected = [
            k for k in range(1 << m) if stratum_bits(k, m)[attr] == value
        ]
        assert group_strata(m, attr, value) == expected
        mask = group_mask(m, attr, value)
        assert mask.sum() == 1 << (m - 1)
        assert sorted(np.nonzero(mask)[0].tolist()) == expected


def test_budget_spec():
    spec = BudgetSpec(250, 5)
    assert spec.total == 1250
    with pytest.raises(ConfigurationError):
        BudgetSpec(0, 3)
    with pytest.raises(ConfigurationError):
        BudgetSpec(10, 0)


def test_ground_truth_marginals_and_disparity():
    gt = toy_model()
    # attribute 0: strata {1, 3} hold 70 of 200 rows
    assert gt.marginals[0] == pytest.approx(0.35)
    assert gt.marginals[1] == pytest.approx(0.6)
    rate_a0_1 = (30 * 0.6 + 40 * 0.9) / 70
    rate_a0_0 = (50 * 0.1 + 80 * 0.3) / 130
    assert gt.group_rate(0, 1) == pytest.approx(rate_a0_1)
    assert gt.group_rate(0, 0) == pytest.approx(rate_a0_0)
    assert gt.disparity[0] == pytest.approx(rate_a0_1 - rate_a0_0)


def test_group_weights_are_conditional_shares():
    gt = toy_model()
    w = gt.group_weights(1, 1)
    assert w.sum() == pytest.approx(1.0)
    # strata {2, 3} carry attribute 1; shares are 80:40
    assert w[2] == pytest.approx(80 / 120)
    assert w[3] == pytest.approx(40 / 120)
    assert w[0] == 0.0 and w[1] == 0.0


def test_stratum_sigma():
    gt = toy_model()
    np.testing.assert_allclose(
        gt.stratum_sigma(), np.sqrt(gt.positive_rate * (1 - gt.positive_rate))
    )


def test_with_measure_independent_keeps_rates():
    gt = toy_model()
    indep = gt.with_measure("independent")
    np.testing.assert_allclose(indep.positive_rate, gt.positive_rate)
    expected = np.array(
        [(0.65 * 0.4), (0.35 * 0.4), (0.65 * 0.6), (0.35 * 0.6)]
    )
    np.testing.assert_allclose(indep.stratum_prob, expected)
    with pytest.raises(ConfigurationError):
        gt.with_measure("bogus")


def test_restrict_marginalises_counts_and_rates():
    gt = toy_model()
    sub = gt.restrict([1])
    assert sub.num_attributes == 1
    # attribute 1 clear pools strata {0, 1}: 80 rows, 50*0.1 + 30*0.6 positives
    assert sub.stratum_prob[0] == pytest.approx(80 / 200)
    assert sub.positive_rate[0] == pytest.approx((50 * 0.1 + 30 * 0.6) / 80)
    assert sub.positive_rate[1] == pytest.approx((80 * 0.3 + 40 * 0.9) / 120)
    assert sub.disparity[0] == pytest.approx(gt.disparity[1])


def test_synthetic_ground_truth_validates():
    gt = synthetic_ground_truth([0.4, 0.6], [0.1, 0.2, 0.3, 0.4])
    assert gt.stratum_prob.sum() == pytest.approx(1.0)
    assert gt.stratum_prob[3] == pytest.approx(0.4 * 0.6)
    with pytest.raises(ConfigurationError):
        synthetic_ground_truth([0.0, 0.5], [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ConfigurationError):
        synthetic_ground_truth([1.5], [0.1, 0.2])


def test_scan_template_extension():
    template = ScanTemplate(0.7, 0.9, 0.2)
    gt1 = template.extend(1)
    assert gt1.positive_rate[0] == pytest.approx(0.2)
    assert gt1.positive_rate[1] == pytest.approx(0.9)
    gt3 = template.extend(3)
    np.testing.assert_allclose(gt3.marginals, 0.7)
    assert gt3.stratum_prob.sum() == pytest.approx(1.0)
    # stratum 0b101 mixes two set bits with one clear bit
    assert gt3.positive_rate[5] == pytest.approx((2 * 0.9 + 0.2) / 3)
    with pytest.raises(ConfigurationError):
        ScanTemplate(1.0, 0.5, 0.5)
    with pytest.raises(ConfigurationError):
        ScanTemplate(0.5, 1.2, 0.5)
