"""
symflow - symbolic coding of non-uniformly hyperbolic flows

Poincaré sections and the linear Poincaré cocycle, Pesin charts, ε-gpo
graphs, shadowing, Bowen–Sinai refinement and topological Markov flows,
with the quantitative estimates checked as invariants on model flows.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, ScaleLaws, build_config, load_config
from .errors import SymflowError
from .models import MappingTorusModel, build_model
from .pipeline import Pipeline, run_pipeline
from .symbolic import SuspensionFlow, SymbolicShift, parry_entropy, scc_decompose, suspension_entropy
from .types import Stage

__all__ = [
    "__version__",
    "PipelineConfig",
    "ScaleLaws",
    "build_config",
    "load_config",
    "SymflowError",
    "MappingTorusModel",
    "build_model",
    "Pipeline",
    "run_pipeline",
    "SymbolicShift",
    "SuspensionFlow",
    "parry_entropy",
    "scc_decompose",
    "suspension_entropy",
    "Stage",
]
