"""Command-line interface for audits, sweeps, and bound checks."""

from __future__ import annotations

import sys

import click
import numpy as np

from .allocation import CollabStrategy, SamplingMethod
from .estimation import DSA_COMPLIANCE_BAND
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
from .runner import (
    BOUNDS_COLUMNS,
    SWEEP_COLUMNS,
    ExperimentConfig,
    bounds_check,
    load_population,
    outcome_rows,
    run_audit,
    summarise,
    sweep_agents,
    sweep_budget,
    write_outcomes,
    write_rows,
)

EXIT_CODES = (
    (ConfigurationError, 2),
    (SchemaError, 2),
    (IngestionError, 3),
    (OracleError, 4),
    (AllocationError, 4),
    (EstimationError, 5),
    (OptimizerError, 6),
)


def _exit_code(exc: AuditError) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return 1


def _fail(exc: AuditError):
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_code(exc))


def _parse_list(text, cast):
    if text is None:
        return None
    items = [part.strip() for part in str(text).split(",") if part.strip()]
    return tuple(cast(part) for part in items)


def _experiment_options(fn):
    decorators = [
        click.option("--dataset", type=click.Path(), help="CSV file to audit."),
        click.option(
            "--schema",
            help="Bundled schema name or path to a schema YAML.",
        ),
        click.option(
            "--attrs",
            help="Comma-separated attribute names (default: all in the schema).",
        ),
        click.option(
            "--synthetic-marginals",
            help="Comma-separated attribute marginals for a synthetic instance.",
        ),
        click.option(
            "--synthetic-rates",
            help="Comma-separated per-stratum positive rates (length 2^m; "
            "default: 0.5 everywhere, a fair model).",
        ),
        click.option(
            "--method",
            type=click.Choice(["uniform", "stratified", "neyman", "all"]),
            default="all",
            show_default=True,
        ),
        click.option(
            "--strategy",
            type=click.Choice(["none", "a-posteriori", "a-priori", "all"]),
            default="all",
            show_default=True,
        ),
        click.option("--budget", type=int, help="Per-agent query budget."),
        click.option("--reps", type=int, help="Monte-Carlo repetitions."),
        click.option("--seed", type=int, help="Base seed for the run."),
        click.option("--out", type=click.Path(), help="Output CSV path."),
        click.option(
            "--weights",
            type=click.Choice(["empirical", "independent"]),
            help="Stratum measure for designs and estimator weights "
            "(default empirical).",
        ),
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True),
            help="YAML experiment config; flags override file values.",
        ),
    ]
    for decorator in reversed(decorators):
        fn = decorator(fn)
    return fn


def _build_config(
    dataset,
    schema,
    attrs,
    synthetic_marginals,
    synthetic_rates,
    method,
    strategy,
    budget,
    reps,
    seed,
    out,
    weights,
    config_path,
    **extra,
):
    overrides = dict(
        dataset=dataset,
        schema=schema,
        attributes=_parse_list(attrs, str),
        synthetic_marginals=_parse_list(synthetic_marginals, float),
        synthetic_rates=_parse_list(synthetic_rates, float),
        methods=None if method in (None, "all") else (method,),
        strategies=None if strategy in (None, "all") else (strategy,),
        per_agent_budget=budget,
        repetitions=reps,
        base_seed=seed,
        output=out,
        weights=weights,
        **extra,
    )
    if config_path is not None:
        return ExperimentConfig.from_file(config_path, **overrides)
    defaults = ExperimentConfig.__dataclass_fields__
    merged = {
        k: (v if v is not None else defaults[k].default)
        for k, v in overrides.items()
    }
    return ExperimentConfig(**merged)


@click.group()
@click.version_option(package_name="fairaudit")
def main():
    """Multi-agent demographic-parity audit simulator."""


@main.command()
@_experiment_options
def ingest(**kwargs):
    """Validate a dataset against a schema and print its summary."""
    try:
        config = _build_config(**kwargs)
        population = load_population(config)
    except AuditError as exc:
        _fail(exc)
    gt = population.ground_truth
    click.echo(f"dataset: {population.name or config.dataset}")
    click.echo(
        f"rows ingested: {population.num_rows} (dropped {population.dropped_rows})"
    )
    click.echo(
        f"attributes: {population.num_attributes}; "
        f"occupied strata: {int(population.nonempty().sum())}/{gt.num_strata}"
    )
    click.echo("attribute          P(X=1)   disparity   within-band")
    for i, name in enumerate(population.attribute_names):
        flag = "yes" if abs(gt.disparity[i]) <= DSA_COMPLIANCE_BAND else "no"
        click.echo(
            f"{name:<18} {gt.marginals[i]:>6.3f}   {gt.disparity[i]:>+8.4f}   {flag}"
        )


@main.command()
@_experiment_options
def audit(**kwargs):
    """Monte-Carlo audit for one budget; writes per-outcome rows."""
    try:
        config = _build_config(**kwargs)
        population = load_population(config)
        outcomes = list(run_audit(config, population))
    except AuditError as exc:
        _fail(exc)
    if config.output:
        write_outcomes(config.output, outcomes)
        click.echo(f"wrote {sum(len(o.attributes) for o in outcomes)} rows to {config.output}")
    for (method, strategy), err in sorted(summarise(outcomes).items()):
        click.echo(f"{method:<12} {strategy:<14} mean abs error {err:.6f}")


@main.command("sweep-budget")
@_experiment_options
@click.option("--budgets", required=True, help="Comma-separated per-agent budgets.")
def sweep_budget_cmd(budgets, **kwargs):
    """Mean error per (budget, method, strategy)."""
    try:
        config = _build_config(budgets=_parse_list(budgets, int), **kwargs)
        rows = sweep_budget(config)
    except AuditError as exc:
        _fail(exc)
    if config.output:
        write_rows(config.output, SWEEP_COLUMNS, rows)
        click.echo(f"wrote {len(rows)} rows to {config.output}")
    else:
        for row in rows:
            click.echo(
                f"R={row['value']:<6} {row['method']:<12} {row['strategy']:<14} "
                f"{row['mean_abs_error']:.6f}"
            )


@main.command("sweep-agents")
@_experiment_options
@click.option(
    "--agents", required=True, help="Comma-separated collaboration sizes."
)
def sweep_agents_cmd(agents, **kwargs):
    """Mean error per (panel size, method, strategy), combination-averaged."""
    try:
        config = _build_config(agent_counts=_parse_list(agents, int), **kwargs)
        rows = sweep_agents(config)
    except AuditError as exc:
        _fail(exc)
    if config.output:
        write_rows(config.output, SWEEP_COLUMNS, rows)
        click.echo(f"wrote {len(rows)} rows to {config.output}")
    else:
        for row in rows:
            click.echo(
                f"m={row['value']:<4} {row['method']:<12} {row['strategy']:<14} "
                f"{row['mean_abs_error']:.6f}"
            )


@main.command("bounds-check")
@_experiment_options
def bounds_check_cmd(**kwargs):
    """Verify closed-form relations and compare them with simulation."""
    try:
        config = _build_config(**kwargs)
        report, rows = bounds_check(config)
    except AuditError as exc:
        _fail(exc)
    for line in report.summary_lines():
        click.echo(line)
    click.echo("")
    click.echo("pair                          predicted   simulated   reps")
    for row in rows:
        click.echo(
            f"{row['method']:<12} {row['strategy']:<14} "
            f"{row['closed_form']:>9.5f}   {row['simulated_mean']:>9.5f}   "
            f"{row['repetitions']}"
        )
    if config.output:
        write_rows(config.output, BOUNDS_COLUMNS, rows)
        click.echo(f"wrote {len(rows)} rows to {config.output}")
    if not report.required_hold():
        click.echo("one or more required relations failed", err=True)
        sys.exit(7)


if __name__ == "__main__":
    main()
