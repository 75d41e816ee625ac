"""Clustered multitask diffusion LMS: algorithms, performance models and experiments."""

from . import adapt, harness, synth, theory, topology
from .adapt import AdaptConfig, AdaptState
from .topology import ClusteredNetwork, CombinerSet

__version__ = "0.1.0"

__all__ = [
    "adapt",
    "harness",
    "synth",
    "theory",
    "topology",
    "AdaptConfig",
    "AdaptState",
    "ClusteredNetwork",
    "CombinerSet",
    "__version__",
]
