"""Experiment configuration, datasets, pipelines and CLI."""

from .classify import prediction_error, run_classification, train_stream
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import (
    ClassificationDataset,
    DatasetError,
    DatasetSchema,
    generate_logistic_dataset,
    generate_synthetic_tasks,
    ingest_dataset,
    write_dataset,
)
from .pipelines import VerificationFailed, run_suite

__all__ = [
    "ClassificationDataset", "ConfigError", "DatasetError", "DatasetSchema", "ExperimentConfig",
    "VerificationFailed", "generate_logistic_dataset", "generate_synthetic_tasks", "ingest_dataset",
    "load_config", "parse_config", "prediction_error", "run_classification", "run_suite",
    "train_stream", "write_dataset",
]
