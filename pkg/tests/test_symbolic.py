"""
Tests for Markov shifts, Parry measures, suspension flows and the Bowen–Walters distance
"""
import math
import random

import networkx as nx
import numpy as np
import pytest

from symflow.errors import InputError
from symflow.symbolic import (
    SuspensionFlow,
    SuspensionPoint,
    SymbolicShift,
    birkhoff_roof,
    bowen_walters_distance,
    cylinder_distance,
    entropy_table,
    fit_holder,
    parry_entropy,
    parry_measure,
    reference_partition_shift,
    regular_flag,
    scc_decompose,
    suspension_entropy,
)

from .conftest import CAT, LOG_LAMBDA

PHI = (1 + math.sqrt(5)) / 2
FULL = SymbolicShift.from_adjacency([[1, 1], [1, 1]], "full")
GOLDEN = SymbolicShift.from_adjacency([[1, 1], [1, 0]], "golden")


def test_entropy_of_standard_shifts():
    assert parry_entropy(FULL) == pytest.approx(math.log(2), abs=1e-9)
    assert parry_entropy(GOLDEN) == pytest.approx(math.log(PHI), abs=1e-9)
    assert parry_entropy(GOLDEN) == pytest.approx(0.481212, abs=1e-6)
    cycle = SymbolicShift.from_adjacency([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    assert parry_entropy(cycle) == pytest.approx(0.0, abs=1e-9)


def test_reducible_component_rejected():
    with pytest.raises(InputError):
        parry_entropy(SymbolicShift.from_adjacency([[1, 1], [0, 1]]))


@pytest.mark.parametrize("matrix", [[[1, 2], [1, 1]], [[1, 1, 0], [1, 0, 1]], [[-1, 0], [0, 1]]])
def test_bad_adjacency(matrix):
    with pytest.raises(InputError):
        SymbolicShift.from_adjacency(matrix)


def test_scc_decompose():
    g = nx.DiGraph()
    g.add_edges_from([("a", "b"), ("b", "c"), ("c", "a")])          # 3-cycle
    g.add_edges_from([("x", "x"), ("x", "y"), ("y", "x")])          # golden mean
    g.add_edges_from([("c", "t"), ("t", "x")])                      # transient vertex
    g.add_node("lonely")
    comps = scc_decompose(SymbolicShift(g, "mixed"))
    assert [sorted(c.vertices) for c in comps] == [["a", "b", "c"], ["x", "y"]]
    assert comps[1].name == "mixed[1]"
    rows = entropy_table(SymbolicShift(g, "mixed"), 1.0)
    assert [r.size for r in rows] == [3, 2]
    assert rows[0].parry_entropy == pytest.approx(0.0, abs=1e-9)
    assert rows[1].suspension_entropy == pytest.approx(math.log(PHI), abs=1e-9)


def test_path_growth_matches_entropy():
    assert GOLDEN.path_growth(30) == pytest.approx(math.log(PHI), abs=1e-3)
    assert FULL.path_growth(10) == pytest.approx(math.log(2), abs=1e-12)


def test_words_and_degrees():
    assert GOLDEN.is_word([0, 0, 1, 0])
    assert not GOLDEN.is_word([0, 1, 1])
    assert GOLDEN.max_degree() == 2
    assert len(GOLDEN.subshift([0])) == 1


def test_parry_measure():
    mu = parry_measure(FULL)
    assert mu.stationary == pytest.approx([0.5, 0.5])
    assert mu.transition == pytest.approx(np.full((2, 2), 0.5))
    assert mu.entropy() == pytest.approx(math.log(2), abs=1e-9)
    golden = parry_measure(GOLDEN)
    assert golden.weight(0) == pytest.approx(PHI ** 2 / (1 + PHI ** 2), abs=1e-9)
    assert golden.transition.sum(axis=1) == pytest.approx([1.0, 1.0])
    assert golden.entropy() == pytest.approx(math.log(PHI), abs=1e-9)


def test_suspension_entropy():
    assert suspension_entropy(FULL, 1.5) == pytest.approx(math.log(2) / 1.5, abs=1e-9)
    w0 = PHI ** 2 / (1 + PHI ** 2)
    expected = math.log(PHI) / (w0 * 1.0 + (1 - w0) * 2.0)
    assert suspension_entropy(GOLDEN, {0: 1.0, 1: 2.0}) == pytest.approx(expected, abs=1e-9)
    with pytest.raises(InputError):
        suspension_entropy(GOLDEN, {0: 1.0})
    with pytest.raises(InputError):
        suspension_entropy(GOLDEN, {0: 1.0, 1: 0.0})


def test_edge_shift_of_cat_matrix():
    shift = SymbolicShift.edge_shift(CAT)
    assert len(shift) == 5
    assert parry_entropy(shift) == pytest.approx(LOG_LAMBDA, abs=1e-9)
    with pytest.raises(InputError):
        SymbolicShift.edge_shift([[1, -1], [0, 1]])


def test_reference_suspension_recovers_lyapunov_exponent():
    shift, flow = reference_partition_shift(CAT, 10, 0.1, rho=0.2)
    assert len(shift) == 50
    assert flow.sup_roof == pytest.approx(0.1)
    rows = entropy_table(shift, 0.1)
    assert len(rows) == 1
    assert rows[0].suspension_entropy == pytest.approx(LOG_LAMBDA, abs=1e-8)


def test_suspension_flow_validation():
    with pytest.raises(InputError):
        SuspensionFlow(FULL, {})
    with pytest.raises(InputError):
        SuspensionFlow(FULL, {(0,): 0.0, (1,): 1.0})
    with pytest.raises(InputError):
        SuspensionFlow.constant(FULL, 0.3, rho=0.2)
    flow = SuspensionFlow(FULL, {(0, 0): 1.0, (0, 1): 2.0, (1, 0): 3.0, (1, 1): 5.0}, depth=2)
    assert flow.depth_one_roof() == {0: 1.5, 1: 4.0}
    with pytest.raises(InputError):
        flow.roof_at([0, 1], 1)


WORD = tuple("ab" * 10)
DYADIC = SuspensionFlow(FULL, {("a",): 1.0, ("b",): 0.5})


def test_flow_crosses_roofs():
    z = SuspensionPoint(WORD, 5, 0.25)
    moved = DYADIC.flow(z, 2.25)
    assert (moved.offset, moved.height) == (8, 0.5)
    back = DYADIC.flow(moved, -2.25)
    assert (back.offset, back.height) == (5, 0.25)


def test_birkhoff_cocycle():
    rng = random.Random(4)
    for _ in range(50):
        m, n = rng.randint(-4, 4), rng.randint(-4, 4)
        offset = 9
        lhs = birkhoff_roof(DYADIC, WORD, offset, m + n)
        rhs = birkhoff_roof(DYADIC, WORD, offset, m) + birkhoff_roof(DYADIC, WORD, offset + m, n)
        assert lhs == rhs
    assert birkhoff_roof(DYADIC, WORD, 0, 0) == 0.0
    assert birkhoff_roof(DYADIC, WORD, 2, -2) == -1.5


def test_cylinder_distance():
    a = list("abcabcabc")
    b = list(a)
    assert cylinder_distance(a, b, 4) == 0.0
    b[6] = "x"
    assert cylinder_distance(a, b, 4) == pytest.approx(math.exp(-2))
    assert cylinder_distance(a, b, 4, shift_by=1) == pytest.approx(math.exp(-1))
    with pytest.raises(InputError):
        cylinder_distance(a, b[:-1], 4)


def _random_point(rng, offset):
    word = tuple(rng.choice("ab") for _ in range(21))
    roof = DYADIC.roof_at(word, offset)
    return SuspensionPoint(word, offset, rng.uniform(0, roof) * 0.999)


def test_bowen_walters_distance_is_symmetric():
    rng = random.Random(9)
    for _ in range(200):
        z1 = _random_point(rng, rng.randint(8, 12))
        z2 = _random_point(rng, rng.randint(8, 12))
        d = bowen_walters_distance(z1, z2, DYADIC)
        assert d >= 0.0
        assert d == bowen_walters_distance(z2, z1, DYADIC)
        assert bowen_walters_distance(z1, z1, DYADIC) == 0.0


def test_bowen_walters_distance_validation():
    z = SuspensionPoint(WORD, 4, 0.1)
    with pytest.raises(InputError):
        bowen_walters_distance(z, SuspensionPoint(WORD, 4, 1.5), DYADIC)
    with pytest.raises(InputError):
        bowen_walters_distance(z, SuspensionPoint(WORD[:-1], 4, 0.1), DYADIC)


def test_vertical_neighbours_are_close():
    z1 = SuspensionPoint(WORD, 10, 0.2)
    z2 = SuspensionPoint(WORD, 10, 0.3)
    assert bowen_walters_distance(z1, z2, DYADIC) == pytest.approx(0.1)


def test_fit_holder_bounds_every_sample():
    rng = random.Random(1)
    pairs = [(_random_point(rng, 10), _random_point(rng, 10)) for _ in range(20)]
    times = [0.25, 0.5]
    c, kappa = fit_holder(DYADIC, pairs, times)
    assert 0 < kappa <= 1.0 and c > 0
    for z1, z2 in pairs:
        base = bowen_walters_distance(z1, z2, DYADIC)
        if base <= 0:
            continue
        for t in times:
            moved = bowen_walters_distance(DYADIC.flow(z1, t), DYADIC.flow(z2, t), DYADIC)
            assert moved <= c * base ** kappa * (1 + 1e-9)


def test_fit_holder_needs_pairs():
    z = SuspensionPoint(WORD, 10, 0.2)
    with pytest.raises(InputError):
        fit_holder(DYADIC, [(z, z)], [0.1])


def test_regular_flag():
    assert regular_flag([1, 2, 1, 3, 4, 3], 2)
    assert not regular_flag([1, 2, 3, 4], 1)
