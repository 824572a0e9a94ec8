"""Waiting-time and first-passage analysis for multi-server queues with
Markovian arrivals and impatient customers, built on multi-regime Markov
fluid queues (MRMFQs)."""

from fluidq.arrivals import (
    MapProcess,
    MeDistribution,
    PhDistribution,
    StationaryVectors,
    build_correlated_map,
    build_superposed_mmpp,
    cme_horizon,
    erlang_horizon,
    hyperexp_balanced_means,
    ph_cdf,
    ph_density,
    stationary_vectors,
    validate_map,
)

__version__ = "0.1.0"
