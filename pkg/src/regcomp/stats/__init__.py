"""Experiment harness: configs, replications, reference samplers, tests and reports."""

from .config import ConfigError, ExperimentConfig, Record, load_config_dict, parse_record, validate
from .convergence import TARGETS, RatioReport, RatioRow, convergence_report
from .inference import TestReport, dispersion_test, mixed_poisson_reference, two_sample_test
from .replication import ReplicationTable, exp_functional_samples, run_replications, stream

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RatioReport",
    "RatioRow",
    "Record",
    "ReplicationTable",
    "TARGETS",
    "TestReport",
    "convergence_report",
    "dispersion_test",
    "exp_functional_samples",
    "load_config_dict",
    "mixed_poisson_reference",
    "parse_record",
    "run_replications",
    "stream",
    "two_sample_test",
    "validate",
]
