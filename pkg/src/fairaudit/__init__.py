"""Multi-agent demographic parity audits: simulation, allocation, and error laws."""

from .allocation import (
    AllocationPlan,
    CollabStrategy,
    JointAllocation,
    SamplingMethod,
    allocate,
    neyman_joint,
    neyman_two_group,
    round_allocation,
)
from .bounds import (
    RelationReport,
    RelationResult,
    asymptotic_scan,
    closed_form_error,
    closed_form_per_agent,
    verify_relations,
)
from .dataset import (
    AttributeSchema,
    DatasetSchema,
    Population,
    bundled_schema_names,
    ground_truth_sigma,
    ingest,
    load_bundled_schema,
    load_schema,
)
from .estimation import (
    AuditOutcome,
    QueryLog,
    average_dp_error,
    estimate_dp_simple,
    estimate_dp_stratified,
    standard_error,
)
from .runner import (
    ExperimentConfig,
    bounds_check,
    load_population,
    population_from_ground_truth,
    run_audit,
    summarise,
    sweep_agents,
    sweep_budget,
    write_outcomes,
    write_rows,
)
from .exceptions import (
    AllocationError,
    AuditError,
    ConfigurationError,
    EstimationError,
    IngestionError,
    OptimizerError,
    OracleError,
    SchemaError,
)
from .strata import (
    BudgetSpec,
    GroundTruth,
    ScanTemplate,
    StratumId,
    enumerate_strata,
    group_strata,
    stratum_bits,
    stratum_index,
    synthetic_ground_truth,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan",
    "AllocationError",
    "AttributeSchema",
    "AuditError",
    "AuditOutcome",
    "BudgetSpec",
    "CollabStrategy",
    "ConfigurationError",
    "DatasetSchema",
    "EstimationError",
    "ExperimentConfig",
    "GroundTruth",
    "IngestionError",
    "JointAllocation",
    "OptimizerError",
    "OracleError",
    "Population",
    "QueryLog",
    "RelationReport",
    "RelationResult",
    "SamplingMethod",
    "ScanTemplate",
    "SchemaError",
    "StratumId",
    "allocate",
    "asymptotic_scan",
    "average_dp_error",
    "bounds_check",
    "bundled_schema_names",
    "closed_form_error",
    "closed_form_per_agent",
    "enumerate_strata",
    "estimate_dp_simple",
    "estimate_dp_stratified",
    "ground_truth_sigma",
    "group_strata",
    "ingest",
    "load_bundled_schema",
    "load_population",
    "load_schema",
    "neyman_joint",
    "neyman_two_group",
    "population_from_ground_truth",
    "round_allocation",
    "run_audit",
    "standard_error",
    "stratum_bits",
    "stratum_index",
    "summarise",
    "sweep_agents",
    "sweep_budget",
    "synthetic_ground_truth",
    "verify_relations",
    "write_outcomes",
    "write_rows",
]
