"""Grow / assess / compress class-incremental learning at desk scale."""

from .engine import RunReport, Strategy, evaluate, run, summarize
from .errors import GraceError

__version__ = "0.1.0"

__all__ = ["GraceError", "RunReport", "Strategy", "evaluate", "run", "summarize", "__version__"]
