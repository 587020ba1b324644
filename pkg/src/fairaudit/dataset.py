"""Dataset ingestion and the label-backed query oracle.

A dataset plus a binarization schema becomes a Population: per-stratum row
counts and positive-label counts, with the derived GroundTruth attached.
Queries are answered by drawing rows uniformly with replacement from the
requested stratum and returning their labels, so the response distribution
of stratum k is Bernoulli with that stratum's positive rate.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .exceptions import (
    ConfigurationError,
    IngestionError,
    OracleError,
    SchemaError,
)
from .strata import MAX_ATTRIBUTES, GroundTruth, StratumId, stratum_index

DEFAULT_MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "none", "null", "?"})

_THRESHOLD_OPS = {
    "lt": np.less,
    "le": np.less_equal,
    "gt": np.greater,
    "ge": np.greater_equal,
}


@dataclass(frozen=True)
class AttributeSchema:
    """Rule turning one raw column into a binary audited attribute.

    Exactly one of `positive_values` (set membership on the raw string) or
    `threshold` (numeric comparison, one of lt/le/gt/ge) must be given.
    `missing_values` overrides the dataset-wide missing tokens for this
    column; None means inherit.
    """

    name: str
    source_column: str
    positive_values: frozenset = frozenset()
    threshold: tuple[str, float] | None = None
    missing_values: frozenset | None = None
    expected_marginal: float | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("attribute name must be non-empty")
        if not self.source_column:
            raise SchemaError(f"attribute {self.name!r} needs a source column")
        has_values = len(self.positive_values) > 0
        has_threshold = self.threshold is not None
        if has_values == has_threshold:
            raise SchemaError(
                f"attribute {self.name!r} must define exactly one of "
                "positive_values or threshold"
            )
        if has_threshold:
            op, _ = self.threshold
            if op not in _THRESHOLD_OPS:
                raise SchemaError(
                    f"attribute {self.name!r}: unknown threshold op {op!r} "
                    f"(expected one of {sorted(_THRESHOLD_OPS)})"
                )

    def binarize(self, raw: pd.Series, missing: frozenset) -> tuple[np.ndarray, np.ndarray]:
        """Return (bits, usable) for a stripped string column."""
        tokens = self.missing_values if self.missing_values is not None else missing
        lowered = raw.str.lower()
        usable = ~lowered.isin(tokens)
        if self.threshold is not None:
            op, cut = self.threshold
            numeric = pd.to_numeric(raw, errors="coerce")
            usable &= numeric.notna()
            bits = _THRESHOLD_OPS[op](numeric.to_numpy(dtype=float), float(cut))
        else:
            bits = raw.isin(self.positive_values).to_numpy()
        return bits.astype(np.int64), usable.to_numpy()


@dataclass(frozen=True)
class DatasetSchema:
    """Binarization rules for one dataset: a label column plus m attributes."""

    label_column: str
    label_positive_values: frozenset
    attributes: tuple
    missing_values: frozenset = DEFAULT_MISSING_TOKENS
    name: str = ""

    def __post_init__(self):
        if not self.label_column:
            raise SchemaError("label column must be non-empty")
        if not self.label_positive_values:
            raise SchemaError("label needs at least one positive raw value")
        if not self.attributes:
            raise SchemaError("schema needs at least one attribute")
        if len(self.attributes) > MAX_ATTRIBUTES:
            raise SchemaError(
                f"schema has {len(self.attributes)} attributes; "
                f"the cap is {MAX_ATTRIBUTES}"
            )
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in schema: {names}")
        if self.label_column in {a.source_column for a in self.attributes}:
            raise SchemaError(
                f"label column {self.label_column!r} may not double as an attribute"
            )

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def select(self, names) -> "DatasetSchema":
        """Schema restricted to the named attributes, in the given order."""
        by_name = {a.name: a for a in self.attributes}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise SchemaError(
                f"unknown attribute(s) {missing}; schema has {sorted(by_name)}"
            )
        return DatasetSchema(
            self.label_column,
            self.label_positive_values,
            tuple(by_name[n] for n in names),
            self.missing_values,
            self.name,
        )


def _parse_attribute(entry: dict) -> AttributeSchema:
    if not isinstance(entry, dict):
        raise SchemaError(f"attribute entry must be a mapping, got {entry!r}")
    threshold = None
    if "threshold" in entry:
        spec = entry["threshold"]
        if not isinstance(spec, dict) or "op" not in spec or "value" not in spec:
            raise SchemaError(
                f"attribute {entry.get('name')!r}: threshold needs op and value"
            )
        threshold = (str(spec["op"]), float(spec["value"]))
    missing = entry.get("missing_values")
    return AttributeSchema(
        name=str(entry.get("name", "")),
        source_column=str(entry.get("column", "")),
        positive_values=frozenset(str(v) for v in entry.get("positive_values", [])),
        threshold=threshold,
        missing_values=(
            frozenset(str(v).lower() for v in missing) if missing is not None else None
        ),
        expected_marginal=(
            float(entry["expected_marginal"]) if "expected_marginal" in entry else None
        ),
    )


def schema_from_mapping(doc: dict) -> DatasetSchema:
    """Build a schema from a parsed config tree (the YAML/JSON layout)."""
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a mapping")
    label = doc.get("label")
    if not isinstance(label, dict):
        raise SchemaError("schema needs a 'label' mapping with column and positive_values")
    attrs = doc.get("attributes")
    if not isinstance(attrs, list):
        raise SchemaError("schema needs an 'attributes' list")
    missing = doc.get("missing_values")
    kwargs = {}
    if missing is not None:
        kwargs["missing_values"] = frozenset(str(v).lower() for v in missing)
    return DatasetSchema(
        label_column=str(label.get("column", "")),
        label_positive_values=frozenset(
            str(v) for v in label.get("positive_values", [])
        ),
        attributes=tuple(_parse_attribute(e) for e in attrs),
        name=str(doc.get("name", "")),
        **kwargs,
    )


def load_schema(source) -> DatasetSchema:
    """Load a schema from a YAML/JSON file path or file object."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable schema document: {exc}") from exc
    return schema_from_mapping(doc)


def bundled_schema_names() -> list[str]:
    root = resources.files("fairaudit") / "schemas"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled_schema(name: str) -> DatasetSchema:
    """Load one of the schemas shipped with the package."""
    root = resources.files("fairaudit") / "schemas"
    candidate = root / f"{name}.yaml"
    if not candidate.is_file():
        raise SchemaError(
            f"no bundled schema {name!r}; available: {bundled_schema_names()}"
        )
    return load_schema(io.StringIO(candidate.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Population:
    """Immutable ingested dataset: per-stratum row and positive counts."""

    num_attributes: int
    stratum_count: np.ndarray
    stratum_positives: np.ndarray
    ground_truth: GroundTruth
    attribute_names: tuple
    dropped_rows: int = 0
    name: str = ""

    def __post_init__(self):
        n = 1 << self.num_attributes
        if self.stratum_count.shape != (n,) or self.stratum_positives.shape != (n,):
            raise ConfigurationError("stratum tables must have one entry per stratum")
        if np.any(self.stratum_positives > self.stratum_count):
            raise ConfigurationError("a stratum has more positives than rows")

    @property
    def num_rows(self) -> int:
        return int(self.stratum_count.sum())

    def nonempty(self) -> np.ndarray:
        return self.stratum_count > 0

    def respond(self, stratum, rng: np.random.Generator) -> int:
        """Label of one row drawn uniformly with replacement from the stratum."""
        k = stratum.index if isinstance(stratum, StratumId) else int(stratum)
        count = int(self.stratum_count[k])
        if count == 0:
            raise OracleError(f"stratum {k} holds no rows; nothing to query")
        # uniform row pick; rows are exchangeable so only the positive count matters
        return int(rng.integers(count) < self.stratum_positives[k])

    def respond_batch(self, stratum, n: int, rng: np.random.Generator) -> int:
        """Number of positive labels over n independent stratum queries.

        Each query is an independent uniform-with-replacement row draw, so
        the positive total is binomial with the stratum's positive rate.
        """
        k = stratum.index if isinstance(stratum, StratumId) else int(stratum)
        count = int(self.stratum_count[k])
        if count == 0:
            if n == 0:
                return 0
            raise OracleError(f"stratum {k} holds no rows; nothing to query")
        rate = self.stratum_positives[k] / count
        return int(rng.binomial(int(n), rate))

    def restrict(self, attribute_indices) -> "Population":
        """Population marginalised onto a subset of attributes (kept order)."""
        kept = list(attribute_indices)
        sub = len(kept)
        counts = np.zeros(1 << sub, dtype=np.int64)
        positives = np.zeros(1 << sub, dtype=np.int64)
        for k in range(self.stratum_count.size):
            j = stratum_index([(k >> a) & 1 for a in kept])
            counts[j] += self.stratum_count[k]
            positives[j] += self.stratum_positives[k]
        return Population(
            sub,
            counts,
            positives,
            self.ground_truth.restrict(kept),
            tuple(self.attribute_names[a] for a in kept),
            self.dropped_rows,
            self.name,
        )


def ingest(csv_source, schema: DatasetSchema) -> Population:
    """Read a CSV, binarize it under the schema, and build the Population.

    Accepts a path, file object, or raw bytes. Rows with a missing value in
    any referenced column are dropped and counted in Population.dropped_rows.
    """
    if isinstance(csv_source, bytes):
        csv_source = io.BytesIO(csv_source)
    try:
        frame = pd.read_csv(csv_source, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise IngestionError(f"unreadable CSV input: {exc}") from exc
    if frame.empty:
        raise IngestionError("CSV has a header but no data rows")

    referenced = [schema.label_column] + [a.source_column for a in schema.attributes]
    absent = sorted({c for c in referenced if c not in frame.columns})
    if absent:
        raise SchemaError(f"CSV is missing referenced column(s): {absent}")

    for column in dict.fromkeys(referenced):
        frame[column] = frame[column].str.strip()

    m = schema.num_attributes
    usable = (
        ~frame[schema.label_column].str.lower().isin(schema.missing_values)
    ).to_numpy()
    bit_columns = []
    for attr in schema.attributes:
        bits, ok = attr.binarize(frame[attr.source_column], schema.missing_values)
        bit_columns.append(bits)
        usable &= ok

    kept = int(usable.sum())
    if kept == 0:
        raise IngestionError("no usable rows after dropping missing values")

    labels = frame[schema.label_column].isin(schema.label_positive_values).to_numpy()
    labels = labels[usable]
    bits = np.stack([b[usable] for b in bit_columns], axis=1)

    constant = [
        schema.attributes[i].name
        for i in range(m)
        if bits[:, i].min() == bits[:, i].max()
    ]
    if constant:
        raise SchemaError(
            f"attribute(s) {constant} are constant after binarization; "
            "they cannot be audited"
        )

    weights = 1 << np.arange(m, dtype=np.int64)
    strata = bits @ weights
    counts = np.bincount(strata, minlength=1 << m).astype(np.int64)
    positives = np.bincount(
        strata, weights=labels.astype(np.int64), minlength=1 << m
    ).astype(np.int64)

    rates = np.zeros(1 << m)
    nonzero = counts > 0
    rates[nonzero] = positives[nonzero] / counts[nonzero]
    gt = GroundTruth(m, counts / kept, rates, stratum_count=counts)
    return Population(
        m,
        counts,
        positives,
        gt,
        tuple(schema.attribute_names()),
        dropped_rows=int(len(frame) - kept),
        name=schema.name,
    )


def ground_truth_sigma(gt: GroundTruth, attr: int, value: int) -> float:
    """Standard deviation of the response within one attribute group."""
    mask_prob = gt.marginals[attr] if value == 1 else 1.0 - gt.marginals[attr]
    if mask_prob <= 0:
        raise ConfigurationError(
            f"group (attribute {attr} = {value}) has zero probability"
        )
    return float(gt.group_sigma(attr, value))
