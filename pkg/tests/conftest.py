"""
Shared fixtures: the cat-map suspension and a reduced pipeline run

The pipeline fixture is session-scoped; it runs once through the entropy
stage and the per-module tests read its state.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Make server.py importable from the repo root
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from symflow.charts import ChartFactory
from symflow.config import build_config
from symflow.hyperbolicity import FrameBuilder
from symflow.models import MappingTorusModel
from symflow.pipeline import run_pipeline
from symflow.sections import LinearPoincareCocycle, build_proper_section
from symflow.types import Stage

CAT = [[2, 1], [1, 1]]
LOG_LAMBDA = float(np.log((3 + np.sqrt(5)) / 2))
RHO = 0.2
EPS = 0.01
CHI = 0.2

# Shorter windows and fewer sanity samples than the defaults
SMALL = {
    "window": 40,
    "manifold_depth": 12,
    "random_orbits": 0,
    "section_samples": 100,
    "sanity_samples": 200,
    "reduction_points": 20,
    "reduction_times": 5,
    "shadow_checks": 5,
    "coding_samples": 2,
}


@pytest.fixture(scope="session")
def cat_model():
    return MappingTorusModel(CAT)


@pytest.fixture(scope="session")
def cat_sections(cat_model):
    return build_proper_section(cat_model, RHO, samples=100, seed=0)


@pytest.fixture(scope="session")
def cat_section(cat_sections):
    return cat_sections[0]


@pytest.fixture(scope="session")
def cocycle(cat_model):
    return LinearPoincareCocycle(cat_model)


@pytest.fixture(scope="session")
def builder(cocycle):
    return FrameBuilder(cocycle, CHI, RHO, EPS, splitting_horizon=2.0)


@pytest.fixture(scope="session")
def factory(builder, cat_section):
    return ChartFactory(builder, cat_section)


@pytest.fixture(scope="session")
def small_config():
    return build_config(SMALL)


@pytest.fixture(scope="session")
def small_pipeline(small_config):
    return run_pipeline(small_config, until=Stage.ENTROPY)
