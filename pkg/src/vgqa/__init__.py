"""Hierarchical query-conditioned graph attention for video QA.

A desk-scale library: synthetic compositional benchmark, three-level
graph-attention model, two-stage training, ablation harness, brute-force
references, and attention-trace export.
"""

__version__ = "0.1.0"

from .config import DataConfig, HierarchyConfig, RunConfig, TrainConfig  # noqa: F401
from .errors import (ArchiveError, ConfigError, DataError,  # noqa: F401
                     DivergenceError, GenerationError, VgqaError)
