"""Bit and power loading for multicarrier and OFDM cognitive-radio links."""

from .bitpower import (
    Allocation,
    BerTargets,
    InfeasibleError,
    MoopWeights,
    MultiplierSet,
    allocate_power_capped,
    allocate_relaxed,
    analytic_averages,
    ber_mqam,
    bisect_alpha,
    power_from_bits,
    snr_gap,
    solve_discrete,
)
from .channel import ChannelRealization, OfdmConfig, PathLossModel, PuBand, SensingModel
from .cr import CrCaps, allocate_cr, build_caps
from .ee import EeCaps, EeConfig, UncertainChannel, dinkelbach_solve
from .ga import GaConfig, Op1Problem, evolve
from .harness import MetricRecord, run_experiment
from .oracle import exhaustive_search
from .rate_interference import KnowledgeCoeff, TriWeights, allocate_rate_interference

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "BerTargets",
    "InfeasibleError",
    "MoopWeights",
    "MultiplierSet",
    "allocate_power_capped",
    "allocate_relaxed",
    "analytic_averages",
    "ber_mqam",
    "bisect_alpha",
    "power_from_bits",
    "snr_gap",
    "solve_discrete",
    "ChannelRealization",
    "OfdmConfig",
    "PathLossModel",
    "PuBand",
    "SensingModel",
    "CrCaps",
    "allocate_cr",
    "build_caps",
    "EeCaps",
    "EeConfig",
    "UncertainChannel",
    "dinkelbach_solve",
    "GaConfig",
    "Op1Problem",
    "evolve",
    "MetricRecord",
    "run_experiment",
    "exhaustive_search",
    "KnowledgeCoeff",
    "TriWeights",
    "allocate_rate_interference",
]
