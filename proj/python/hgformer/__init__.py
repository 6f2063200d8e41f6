"""Hyperbolic graph transformer for collaborative filtering."""

from ._hgformer import (
    ArgumentError,
    DimensionError,
    Error,
    InvalidTangentError,
    NumericError,
    ParseError,
    centroid,
    distance,
    exp_map,
    factorized_kernel,
    hsm,
    is_on_manifold,
    lift,
    log_map,
    minkowski_inner,
    origin,
    parallel_transport,
    phi,
    run_cli,
    sample_omega,
    synthetic,
    unlift,
)

__all__ = [
    "ArgumentError",
    "DimensionError",
    "Error",
    "InvalidTangentError",
    "NumericError",
    "ParseError",
    "centroid",
    "distance",
    "exp_map",
    "factorized_kernel",
    "hsm",
    "is_on_manifold",
    "lift",
    "log_map",
    "minkowski_inner",
    "origin",
    "parallel_transport",
    "phi",
    "run_cli",
    "sample_omega",
    "synthetic",
    "unlift",
]
