"""Malliavin calculus on the canonical Lévy space, with Monte Carlo checks."""

from .levy_model import (DensityMeasure, DiscreteMeasure, LevyModel, ShellPartition, ValueSet,
                         shell_partition)
from .canonical_path import CanonicalPath, PathEnsemble, sample_path, uniform_grid

__version__ = "0.1.0"

__all__ = ["CanonicalPath", "DensityMeasure", "DiscreteMeasure", "LevyModel", "PathEnsemble",
           "ShellPartition", "ValueSet", "sample_path", "shell_partition", "uniform_grid"]
