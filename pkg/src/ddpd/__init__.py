"""Planned discrete diffusion at desk scale: exact oracles, samplers, training and ELBOs."""

from .core import LinearSchedule, NoiseKind, VocabSpec, make_rng, make_schedule, validate_pmf
from .oracle import BayesOracle, EnumerableDist, TimeMarginalOracle

__version__ = "0.1.0"

__all__ = [
    "BayesOracle",
    "EnumerableDist",
    "LinearSchedule",
    "NoiseKind",
    "TimeMarginalOracle",
    "VocabSpec",
    "make_rng",
    "make_schedule",
    "validate_pmf",
]
