"""Approximate the Bayesian cut-distribution of a two-module model.

The package provides three approximation engines (direct sampling, direct
sampling with a single-normal aggregation, and emulation of the conditional
posterior), the design-of-experiments samplers used to pick cut-parameter
locations, two fully specified reference problems, and the diagnostics
needed to compare the engines against analytic or simulated ground truth.
"""

__version__ = "0.1.0"

from . import diagnostics, doe, families, gp, sampler
from .cutcore import (
    CutApproximation,
    EcpConfig,
    EmulatorBank,
    Mixture,
    ProblemSpec,
    RawSamples,
    direct_sample,
    ecp_sample,
    little_aggregate,
    mixture_density,
)
from .rng import spawn_rng

__all__ = [
    "CutApproximation",
    "EcpConfig",
    "EmulatorBank",
    "Mixture",
    "ProblemSpec",
    "RawSamples",
    "diagnostics",
    "direct_sample",
    "doe",
    "ecp_sample",
    "families",
    "gp",
    "little_aggregate",
    "mixture_density",
    "sampler",
    "spawn_rng",
]
