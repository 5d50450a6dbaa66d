"""Parsing binary label images with a split grammar, trained by imitation and
reinforcement learning against an information-gain expert."""

from .grammar import Action, ParseTree, RuleKind
from .raster import LabelGrid, PredictionGrid, Region

__version__ = "0.1.0"

__all__ = ["Action", "LabelGrid", "ParseTree", "PredictionGrid", "Region", "RuleKind"]
