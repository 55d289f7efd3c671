"""Unsupervised anomaly detection in multivariate time series.

Channels are symbolized, pairwise causal patterns are scored on short
windows, the resulting binary pattern vectors are modeled with a restricted
Boltzmann machine, and drift of the free-energy distribution away from the
nominal baseline flags anomalies.
"""

from .detector import (
    AnomalyReport,
    FreeEnergyDistribution,
    PipelineConfig,
    PipelineModel,
    calibrate_threshold,
    fit_pipeline,
    gaussian_kld,
    score_batch,
    score_online,
)
from .errors import ConfigError, DataError, ModelError, StpnadError
from .timeseries_io import TimeSeriesFrame, WindowSpec, load_csv, windows, write_csv

__version__ = "0.1.0"

__all__ = [
    "AnomalyReport",
    "FreeEnergyDistribution",
    "PipelineConfig",
    "PipelineModel",
    "calibrate_threshold",
    "fit_pipeline",
    "gaussian_kld",
    "score_batch",
    "score_online",
    "ConfigError",
    "DataError",
    "ModelError",
    "StpnadError",
    "TimeSeriesFrame",
    "WindowSpec",
    "load_csv",
    "windows",
    "write_csv",
]
