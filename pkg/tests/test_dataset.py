"""CSV ingestion, schemas, and the black-box response oracle."""

import io
import textwrap

import numpy as np
import pytest

from fairaudit.dataset import (
    AttributeSchema,
    DatasetSchema,
    Population,
    bundled_schema_names,
    ground_truth_sigma,
    ingest,
    load_bundled_schema,
    load_schema,
    schema_from_mapping,
)
from fairaudit.exceptions import (
    ConfigurationError,
    IngestionError,
    OracleError,
    SchemaError,
)


def tiny_schema() -> DatasetSchema:
    return DatasetSchema(
        label_column="approved",
        label_positive_values=frozenset({"yes"}),
        attributes=(
            AttributeSchema("male", "sex", positive_values=frozenset({"m"})),
            AttributeSchema("adult", "age", threshold=("ge", 18.0)),
        ),
        name="tiny",
    )


def tiny_csv(rows) -> io.BytesIO:
    header = "sex,age,approved,ignored\n"
    return io.BytesIO((header + "\n".join(rows)).encode())


def test_ingest_counts_strata_and_rates():
    pop = ingest(
        tiny_csv(["m,30,yes,x", "m,12,no,x", "f,40,yes,x", "f,20,no,x"]),
        tiny_schema(),
    )
    assert pop.num_attributes == 2
    assert pop.num_rows == 4
    assert pop.dropped_rows == 0
    # stratum order: (male, adult) bits with male the low bit
    np.testing.assert_array_equal(pop.stratum_count, [0, 1, 2, 1])
    np.testing.assert_array_equal(pop.stratum_positives, [0, 0, 1, 1])
    gt = pop.ground_truth
    assert gt.marginals[0] == pytest.approx(0.5)
    assert gt.disparity[0] == pytest.approx(0.5 - 0.5)


def test_missing_values_drop_rows():
    pop = ingest(
        tiny_csv(["m,30,yes,x", "?,12,no,x", "f,,yes,x", "f,20,no,x", "m,12,no,x"]),
        tiny_schema(),
    )
    assert pop.num_rows == 3
    assert pop.dropped_rows == 2


def test_per_attribute_missing_override_keeps_blanks():
    schema = DatasetSchema(
        label_column="approved",
        label_positive_values=frozenset({"yes"}),
        attributes=(
            AttributeSchema("male", "sex", positive_values=frozenset({"m"})),
            AttributeSchema(
                "moved",
                "age",
                positive_values=frozenset({"1"}),
                missing_values=frozenset(),
            ),
        ),
    )
    # blank age now reads as 0 instead of dropping the row
    pop = ingest(tiny_csv(["m,,yes,x", "f,1,no,x", "m,1,no,x"]), schema)
    assert pop.num_rows == 3
    assert pop.dropped_rows == 0


def test_threshold_parsing():
    pop = ingest(
        tiny_csv(["m,17.5,yes,x", "m,18,no,x", "f,not-a-number,yes,x", "f,19,no,x"]),
        tiny_schema(),
    )
    assert pop.num_rows == 3
    assert pop.dropped_rows == 1
    gt = pop.ground_truth
    assert gt.marginals[1] == pytest.approx(2 / 3)


def test_schema_errors_name_the_problem():
    schema = tiny_schema()
    with pytest.raises(SchemaError) as err:
        ingest(io.BytesIO(b"sex,approved\nm,yes\nf,no\n"), schema)
    assert "age" in str(err.value)
    with pytest.raises(SchemaError) as err:
        ingest(tiny_csv(["m,30,yes,x", "m,40,no,x"]), schema)
    assert "male" in str(err.value)


def test_ingestion_errors():
    with pytest.raises(IngestionError):
        ingest(io.BytesIO(b""), tiny_schema())
    with pytest.raises(IngestionError):
        ingest(tiny_csv(["?,30,yes,x", ",40,no,x"]), tiny_schema())


def test_attribute_schema_validation():
    with pytest.raises(SchemaError):
        AttributeSchema("both", "col", positive_values=frozenset({"1"}), threshold=("ge", 1.0))
    with pytest.raises(SchemaError):
        AttributeSchema("neither", "col")
    with pytest.raises(SchemaError):
        AttributeSchema("bad-op", "col", threshold=("around", 1.0))
    with pytest.raises(SchemaError):
        DatasetSchema(
            label_column="y",
            label_positive_values=frozenset({"1"}),
            attributes=(
                AttributeSchema("a", "c1", positive_values=frozenset({"1"})),
                AttributeSchema("a", "c2", positive_values=frozenset({"1"})),
            ),
        )


def test_schema_select_and_mapping():
    schema = tiny_schema()
    picked = schema.select(["adult"])
    assert picked.attribute_names() == ["adult"]
    with pytest.raises(SchemaError):
        schema.select(["ghost"])
    doc = {
        "label": {"column": "approved", "positive_values": ["yes"]},
        "attributes": [
            {"name": "male", "column": "sex", "positive_values": ["m"]},
            {"name": "adult", "column": "age", "threshold": {"op": "ge", "value": 18}},
        ],
    }
    parsed = schema_from_mapping(doc)
    assert parsed.attribute_names() == ["male", "adult"]


def test_load_schema_from_yaml(tmp_path):
    text = textwrap.dedent(
        """
        label:
          column: approved
          positive_values: ["yes"]
        attributes:
          - name: male
            column: sex
            positive_values: ["m"]
        """
    )
    path = tmp_path / "tiny.yaml"
    path.write_text(text)
    schema = load_schema(path)
    assert schema.attribute_names() == ["male"]


def test_bundled_schemas_load():
    names = bundled_schema_names()
    assert set(names) == {
        "folktables_acspubliccoverage",
        "german_credit",
        "propublica_compas",
    }
    for name in names:
        schema = load_bundled_schema(name)
        assert 1 <= schema.num_attributes <= 20
    with pytest.raises(SchemaError):
        load_bundled_schema("no_such_dataset")


def test_oracle_responses_follow_stratum_rates():
    # no (male, minor) row, so stratum 1 is empty while both attributes vary
    pop = ingest(
        tiny_csv(["m,30,yes,x", "m,40,no,x", "f,12,no,x", "f,50,yes,x"]),
        tiny_schema(),
    )
    assert not pop.nonempty()[1]
    rng = np.random.default_rng(0)
    draws = [pop.respond(3, rng) for _ in range(20)]
    assert set(draws) <= {0, 1}
    with pytest.raises(OracleError):
        pop.respond(1, rng)
    # batch oracle on an empty stratum only accepts zero-size requests
    assert pop.respond_batch(1, 0, rng) == 0
    with pytest.raises(OracleError):
        pop.respond_batch(1, 3, rng)
    total = pop.respond_batch(3, 10_000, rng)
    assert abs(total / 10_000 - 0.5) < 3 * 0.5 / 100


def test_oracle_mean_matches_rate():
    pop = ingest(
        tiny_csv(["m,30,yes,x", "m,40,yes,x", "m,50,no,x", "f,12,no,x"]),
        tiny_schema(),
    )
    # stratum (male=1, adult=1) holds 3 rows with 2 positives
    rng = np.random.default_rng(1)
    n = 100_000
    mean = np.mean([pop.respond(3, rng) for _ in range(n)])
    se = np.sqrt((2 / 3) * (1 / 3) / n)
    assert abs(mean - 2 / 3) < 3 * se


def test_restrict_marginalises_population():
    pop = ingest(
        tiny_csv(["m,30,yes,x", "m,12,no,x", "f,40,yes,x", "f,20,yes,x"]),
        tiny_schema(),
    )
    sub = pop.restrict([0])
    assert sub.num_attributes == 1
    np.testing.assert_array_equal(sub.stratum_count, [2, 2])
    np.testing.assert_array_equal(sub.stratum_positives, [2, 1])
    assert sub.attribute_names == ("male",)


def test_ground_truth_sigma():
    pop = ingest(
        tiny_csv(["m,30,yes,x", "m,12,no,x", "f,40,no,x", "f,15,no,x"]),
        tiny_schema(),
    )
    got = ground_truth_sigma(pop.ground_truth, 0, 1)
    assert got == pytest.approx(np.sqrt(0.5 * 0.5))
    # a model with an empty attribute group is rejected outright
    from fairaudit.strata import GroundTruth

    with pytest.raises(ConfigurationError):
        GroundTruth(1, np.array([1.0, 0.0]), np.array([0.5, 0.0]))
