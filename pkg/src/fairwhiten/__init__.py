"""fairwhiten: remove linear target/bias feature correlation by whitening
with a blend-weighted, group-reweighted covariance, train linear heads on
the decorrelated blocks, and measure the resulting fairness/utility
trade-off.

Modules:
    matops      symmetric-matrix kernels and inverse-square-root solvers
    groupcov    per-group statistics and blended covariance estimation
    whiten      fit/apply of the whitening transform plus certificates
    linmodel    linear classifiers, training, group loss weighting
    fairmetrics group fairness and accuracy metrics
    synthdata   deterministic biased synthetic feature datasets
    pipeline    experiment orchestration, reports, CSV ingestion
    cli         command-line entry points (generate/run/sweep/metrics)
"""

from . import (  # noqa: F401
    cli,
    errors,
    fairmetrics,
    groupcov,
    linmodel,
    matops,
    pipeline,
    synthdata,
    whiten,
)

__version__ = "0.1.0"
