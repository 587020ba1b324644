"""Exception hierarchy for the audit library."""


class AuditError(Exception):
    """Base class for all library errors."""


class ConfigurationError(AuditError):
    """Invalid experiment configuration or CLI arguments."""


class SchemaError(AuditError):
    """Dataset schema is malformed or inconsistent with the data."""


class IngestionError(AuditError):
    """CSV ingestion failed (missing file, no usable rows, bad header)."""


class OracleError(AuditError):
    """A query was directed at a stratum the oracle cannot serve."""


class AllocationError(AuditError):
    """No valid query allocation exists for the requested design."""


class EstimationError(AuditError):
    """A query log cannot support the requested estimator."""


class OptimizerError(AuditError):
    """The allocation optimizer failed to converge."""
