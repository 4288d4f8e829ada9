"""
Tests for shadowed samples, the Markov cover, its refinement and the second coding
"""
import dataclasses
import logging

import numpy as np
import pytest

from symflow.errors import InputError
from symflow.markov import (
    _return_links,
    build_cover,
    check_markov,
    classify,
    cylinder_coding_shift,
    fibre_box_distance,
    refine,
    second_coding_shift,
)
from symflow.types import FibreClass, ManifoldKind

from .conftest import RHO


@pytest.fixture(scope="module")
def cover(small_pipeline):
    return small_pipeline.state.cover


@pytest.fixture(scope="module")
def partition(small_pipeline):
    return small_pipeline.state.partition


def test_samples_lie_on_the_section(small_pipeline):
    st = small_pipeline.state
    assert st.samples
    for s in st.samples:
        assert st.section.contains(s.point)
        assert s.return_time == pytest.approx(0.1)


def test_return_links(cover):
    linked = [s for s in cover.samples if s.next is not None]
    assert linked
    for s in linked:
        assert cover.H(s.index) == s.next
        assert cover.samples[s.next].prev is not None
    s = linked[0]
    path = cover.future_path(s.index, 1)
    assert path == [s.index, s.next]
    assert cover.H(s.index, 0) == s.index


def test_rectangles_group_by_symbol(cover):
    for v, rect in cover.rectangles.items():
        assert rect.members
        assert all(cover.samples[i].symbol == v for i in rect.members)
        lo, hi = rect.box_in(rect.chart)
        coords = rect.coords()
        assert np.all(coords >= lo - 1e-15) and np.all(coords <= hi + 1e-15)
        assert v in cover.neighbours[v]
    for s in cover.samples:
        assert cover.rectangle_of(s.index).symbol == s.symbol


def test_cover_checks(cover):
    checks = {c.name: c for c in cover.checks}
    assert {"cover_membership", "local_product", "local_finiteness", "symbolic_markov",
            "bracket_holonomy"} == set(checks)
    assert checks["cover_membership"].passed
    assert cover.measured_depth == 1


def test_sample_sits_on_its_own_fibres(cover):
    x = cover.samples[0]
    rect = cover.rectangle_of(x.index)
    assert x.index in rect.on_fibre(x, ManifoldKind.STABLE, cover.tol)
    assert x.index in rect.on_fibre(x, ManifoldKind.UNSTABLE, cover.tol)


def test_classify(cover):
    x = cover.samples[0]
    rect = cover.rectangle_of(x.index)
    tol_abs = cover.tol * rect.eta
    assert classify(x, None, tol_abs) is FibreClass.NONE
    assert classify(x, rect.box_in(rect.chart), tol_abs) is FibreClass.SU


def test_fibre_box_distance_outside_domain(cover):
    x = cover.samples[0]
    far = 10.0 * cover.rectangle_of(x.index).eta
    box = (np.full(2, far), np.full(2, 2 * far))
    assert fibre_box_distance(x.stable, box) == np.inf
    assert fibre_box_distance(x.unstable, box) == np.inf


def test_refine_rejects_shallow_depth(cover):
    with pytest.raises(InputError):
        refine(cover, 0)


def test_partition_is_a_partition(cover, partition):
    members = [i for c in partition.cells for i in c.members]
    assert len(members) == len(set(members))
    assert set(members) | set(partition.excluded) == {s.index for s in cover.samples}
    for c in partition.cells:
        assert c in partition.cells_in(c.symbol)
        assert all(cover.samples[i].symbol == c.symbol for i in c.members)


def test_refinement_is_deterministic(cover, partition):
    again = refine(cover, partition.depth)
    assert [c.members for c in again.cells] == [c.members for c in partition.cells]


def test_itinerary(partition):
    i = next(iter(partition.cell_of))
    route = partition.itinerary(i, 2)
    assert len(route) == 5
    assert route[2] == partition.cell_of[i]


def test_markov_checks_are_reported(small_pipeline):
    names = [c.name for c in small_pipeline.checks["refine"]]
    for name in ("markov_stable", "markov_unstable", "product_structure", "fibre_contraction"):
        assert name in names


def test_edge_graph_roofs(partition):
    g = partition.edge_graph()
    assert g.number_of_nodes() == len(partition.cells)
    for _, _, data in g.edges(data=True):
        assert data["roof"] == pytest.approx(0.1)


def test_affiliation(small_pipeline, partition):
    aff = small_pipeline.state.affiliation
    for c in partition.cells:
        assert aff.affiliated(c.index, c.index)
        assert aff.N[c.index] >= 1
    assert aff.bound_violations == 0


def test_second_coding_shift(partition):
    shift, flow = second_coding_shift(partition)
    assert flow.sup_roof < RHO
    assert all(r == pytest.approx(0.1) for r in flow.roof.values())
    assert len(shift.vertices) == len(partition.cells)


def test_cylinder_coding_at_depth_one_is_the_cell_graph(partition):
    shift, _ = second_coding_shift(partition)
    words, flow, spread = cylinder_coding_shift(partition, 1)
    assert sorted(words.graph.edges) == sorted(((a,), (b,)) for a, b in shift.graph.edges)
    assert all(r == pytest.approx(0.1) for r in flow.roof.values())
    assert spread < 1e-9


def test_cylinder_coding_words_overlap(partition):
    words, flow, spread = cylinder_coding_shift(partition, 3)
    assert words.vertices
    for a, b in words.graph.edges:
        assert len(a) == len(b) == 3
        assert a[1:] == b[:-1]
    for key in flow.roof:
        assert key[0] in words.graph
    assert flow.sup_roof < RHO
    assert spread < 1e-9
    with pytest.raises(InputError):
        cylinder_coding_shift(partition, 0)


def test_build_cover_is_reproducible(small_pipeline, cover):
    st = small_pipeline.state
    again = build_cover(st.graph, st.samples, st.cache, cover.tol, cover.markov_tol)
    assert sorted(again.rectangles) == sorted(cover.rectangles)
    assert again.measured_depth == cover.measured_depth
    assert [c.name for c in again.checks] == [c.name for c in cover.checks]


def test_build_cover_needs_samples(small_pipeline):
    st = small_pipeline.state
    with pytest.raises(InputError):
        build_cover(st.graph, [], st.cache)


def test_check_markov_direct(small_pipeline, partition):
    results = check_markov(partition)
    names = [r.name for r in results]
    assert names == ["markov_stable", "markov_unstable", "product_structure", "fibre_contraction"]
    reported = {c.name: c.violations for c in small_pipeline.checks["refine"]}
    for r in results[:3]:
        assert r.violations == reported[r.name]


def test_terminal_returns_outside_the_cover_are_listed(cover, caplog):
    terminal = sorted(s.index for s in cover.samples if s.next is None)
    assert terminal
    bare = dataclasses.replace(cover, rectangles={})
    with caplog.at_level(logging.WARNING, logger="symflow.markov"):
        depth, r_max, strays = _return_links(bare)
    assert sorted(strays) == terminal
    assert depth == cover.measured_depth
    assert r_max == pytest.approx(0.1)
    assert "has no successor" in caplog.text
    detail = next(c for c in cover.checks if c.name == "cover_membership").detail
    assert 0 <= detail["stray_returns"] <= len(terminal)
