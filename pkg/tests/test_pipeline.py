"""Tests for the staged pipeline: seeding, stage errors, determinism, artifacts"""
from types import SimpleNamespace

import networkx as nx
import numpy as np
import pytest

from symflow.artifacts import dumps, read_json
from symflow.config import build_config
from symflow.errors import ConfigurationError, StageError
from symflow.models import build_model
from symflow.pipeline import Pipeline, reference_matrix, run_pipeline, seed_points
from symflow.types import Stage

from .conftest import CAT, LOG_LAMBDA, RHO, SMALL


def test_chi_outside_unit_interval_is_rejected():
    with pytest.raises(ConfigurationError):
        build_config(SMALL, chi=2.0)


def test_seed_points_grid_then_random(cat_model):
    config = build_config(random_orbits=3)
    seeds = seed_points(cat_model, config)
    labels = [label for label, _ in seeds]
    assert len(seeds) == 16 + 3
    assert labels[0] == "periodic-0-0"
    assert labels[5] == "periodic-1-1"
    assert labels[-3:] == ["random-0", "random-1", "random-2"]
    assert np.allclose(seeds[5][1], [0.25, 0.25, 0.0])
    for _, p in seeds:
        assert p[-1] == 0.0
        assert np.all((p[:2] >= 0.0) & (p[:2] < 1.0))


def test_seed_points_follow_the_seed(cat_model):
    a = seed_points(cat_model, build_config(seed=1, periodic_denominator=0))
    b = seed_points(cat_model, build_config(seed=1, periodic_denominator=0))
    c = seed_points(cat_model, build_config(seed=2, periodic_denominator=0))
    assert len(a) == 8
    assert all(np.array_equal(p, q) for (_, p), (_, q) in zip(a, b))
    assert not np.array_equal(a[0][1], c[0][1])


def test_seed_points_need_a_mapping_torus():
    model = build_model(build_config(model={"kind": "numeric"}).model)
    with pytest.raises(ConfigurationError):
        seed_points(model, build_config())


def test_reference_matrix(cat_model):
    assert np.array_equal(reference_matrix(cat_model), np.array(CAT))
    block = [[2, 1, 0, 0], [1, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]]
    product = reference_matrix(SimpleNamespace(A=np.array(block)))
    assert product.shape == (4, 4)
    assert np.array_equal(product, np.kron(np.array(CAT), np.array(CAT)))
    coupled = [[2, 1, 1, 0], [1, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]]
    assert reference_matrix(SimpleNamespace(A=np.array(coupled))) is None
    assert reference_matrix(SimpleNamespace(A=np.eye(3, dtype=int))) is None


def test_numeric_model_fails_in_orbit_stage():
    pipeline = Pipeline(build_config(SMALL, model={"kind": "numeric"}))
    with pytest.raises(StageError) as info:
        pipeline.run(Stage.ORBIT)
    assert info.value.stage == "orbit"
    assert isinstance(info.value.cause, ConfigurationError)
    assert pipeline.payloads == {}


def test_orbit_checks_pass(small_pipeline):
    checks = {c.name: c for c in small_pipeline.checks["orbit"]}
    assert set(checks) == {"exponent_recovery", "cocycle_law", "cocycle_norm"}
    assert all(c.passed for c in checks.values())


def test_stage_prefix_is_deterministic(small_pipeline, small_config):
    again = Pipeline(small_config)
    again.run(Stage.ALPHABET)
    for stage in ("orbit", "frames", "alphabet"):
        assert dumps(stage, again.payloads[stage]) == dumps(stage, small_pipeline.payloads[stage])
    assert "graph" not in again.payloads


def test_rerun_keeps_state(small_pipeline):
    model = small_pipeline.state.model
    small_pipeline.run(Stage.ORBIT)
    assert small_pipeline.state.model is model


def test_entropy_payload(small_pipeline):
    data = small_pipeline.state.entropy
    assert {"oracle", "reference", "second_coding", "codings"} <= set(data)
    assert data["oracle"] == pytest.approx(LOG_LAMBDA)
    assert data["reference"]["relative_error"] < 1e-6
    checks = {c.name: c for c in small_pipeline.checks["entropy"]}
    assert "reference_entropy" not in checks
    assert checks["second_roof_below_rho"].passed
    assert checks["second_roof_below_rho"].worst < RHO
    coding = data["second_coding"]
    assert coding["cylinder_depth"] == 3
    assert coding["cylinder_error"] < 1e-9
    assert coding["cylinders"] >= len(coding["rows"])


def test_sampled_entropy_is_gated_on_its_error(small_pipeline):
    coding = small_pipeline.state.entropy["second_coding"]
    check = next(c for c in small_pipeline.checks["entropy"] if c.name == "sampled_entropy")
    assert check.worst == coding["relative_error"]
    assert check.passed == (coding["relative_error"] <= 0.05)
    assert check.violations == int(not check.passed)
    top = coding["rows"][0]["suspension_entropy"] if coding["rows"] else 0.0
    assert check.detail["entropy"] == top
    assert coding["rows"] == sorted(coding["rows"], key=lambda r: -r["size"])


def test_sampled_entropy_error_does_not_grow_with_sampling(small_pipeline):
    denser = run_pipeline(build_config(SMALL, window=60, random_orbits=4, coding_samples=4), until=Stage.ENTROPY)
    small = small_pipeline.state.entropy["second_coding"]["relative_error"]
    large = denser.state.entropy["second_coding"]["relative_error"]
    assert large <= small + 1e-12


def test_transform_contraction_draws_its_own_pairs(small_pipeline, small_config):
    check = next(c for c in small_pipeline.checks["shadow"] if c.name == "graph_transform_contraction")
    assert check.samples == small_config.contraction_pairs == 100
    assert small_config.shadow_checks == 5
    assert check.passed
    assert check.worst <= check.detail["bound"]


def test_alphabet_regularity_is_reported_not_checked(small_pipeline):
    names = [c.name for c in small_pipeline.checks["alphabet"]]
    assert names == ["cg2_grid", "cg3_ratio"]
    regular = small_pipeline.payloads["alphabet"]["regular"]
    assert set(regular) == set(small_pipeline.state.alphabet.sequences)


def test_refine_checks_follow_the_partition(small_pipeline):
    p = small_pipeline.state.partition
    checks = {c.name: c for c in small_pipeline.checks["refine"]}
    stable = checks["classification_stable"]
    assert stable.passed == p.stable
    assert stable.violations == len(p.flips)
    assert stable.samples == len(p.labels)
    graph = p.edge_graph()
    degree = max(max(graph.in_degree(v), graph.out_degree(v)) for v in graph)
    assert checks["partition_degree"].worst == float(degree)
    assert checks["partition_degree"].passed


def test_partition_degree_counts_cells_over_the_symbol_bound():
    pipeline = Pipeline(build_config(SMALL))
    pipeline.state.graph = SimpleNamespace(graph=nx.DiGraph([(0, 1)]))
    cells = [SimpleNamespace(index=0, symbol=0), SimpleNamespace(index=1, symbol=1),
             SimpleNamespace(index=2, symbol=1)]
    partition = SimpleNamespace(cells=cells, edge_graph=lambda: nx.DiGraph([(0, 1), (0, 2), (1, 0)]))
    # cell 0 has an in-edge but symbol 0 has no gpo predecessor; cell 1 has an out-edge but symbol 1 no successor
    assert pipeline._partition_degree(partition) == (2, 2)


def test_write_artifacts(small_pipeline, tmp_path):
    paths = small_pipeline.write(tmp_path)
    names = {p.name for p in paths}
    for stage in ("orbit", "frames", "alphabet", "graph", "shadow", "cover", "refine", "entropy"):
        assert f"{stage}.json" in names
    assert {"gpo_graph.dot", "partition.dot"} <= names

    doc = read_json(tmp_path / "orbit.json")
    assert doc["stage"] == "orbit"
    assert [c["name"] for c in doc["data"]["checks"]] == ["exponent_recovery", "cocycle_law", "cocycle_norm"]
    assert (tmp_path / "gpo_graph.dot").read_text(encoding="utf-8").startswith('digraph "gpo_graph" {')


def test_check_stage_summarises():
    pipeline = Pipeline(build_config(SMALL))
    pipeline.run(Stage.ORBIT)
    payload, checks = pipeline._check()
    assert checks == []
    assert {row["stage"] for row in payload["table"]} == {"orbit"}
    assert payload["passed"] == (payload["failed"] == [])
