"""Statistics, experiments and reports."""

from kvcomm.analysis.experiments import (
    EXPERIMENTS,
    CorrelationReport,
    ExperimentConfig,
    OffsetVarianceReport,
    kv_proximity_experiment,
    offset_proximity_experiment,
    offset_variance_experiment,
)
from kvcomm.analysis.reports import (
    CSV_COLUMNS,
    SWEEP_COLUMNS,
    approximation_error_profile,
    profile_rows,
    savings_report,
    write_csv,
    write_summary,
    write_sweep_csv,
)
from kvcomm.analysis.stats import similarity_by_layer, spearman

__all__ = [
    "CSV_COLUMNS",
    "EXPERIMENTS",
    "SWEEP_COLUMNS",
    "CorrelationReport",
    "ExperimentConfig",
    "OffsetVarianceReport",
    "approximation_error_profile",
    "kv_proximity_experiment",
    "offset_proximity_experiment",
    "offset_variance_experiment",
    "profile_rows",
    "savings_report",
    "similarity_by_layer",
    "spearman",
    "write_csv",
    "write_summary",
    "write_sweep_csv",
]
