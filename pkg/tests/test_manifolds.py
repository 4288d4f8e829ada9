"""
Tests for admissible manifolds, graph transforms and shadowing
"""
import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from symflow.errors import DomainError, ShadowingError
from symflow.manifolds import (
    AdmissibleManifold,
    backward_invariance_error,
    compare_manifolds,
    contraction_profile,
    forward_contraction,
    graph_transform,
    invariance_error,
    lifted_contraction,
    nested_or_disjoint,
    random_admissible,
    shadow,
    smale_bracket,
    stable_manifold,
    unstable_manifold,
)
from symflow.types import ManifoldKind

from .conftest import CHI, LOG_LAMBDA

LABEL = "periodic-1-1"


def _ray(pipeline, before, after):
    alphabet = pipeline.state.alphabet
    seq = alphabet.sequences[LABEL]
    n = alphabet.offsets[LABEL]
    return seq[n - before:n + after + 1]


def _window(pipeline):
    return next(w for w in pipeline.state.windows if w.label == LABEL)


def _constant(double, kind, value, nodes=9):
    width = AdmissibleManifold._out_dim(double, kind)
    return AdmissibleManifold.from_function(double, kind, lambda t: np.full((len(t), width), value), nodes)


def test_zero_manifold_is_admissible(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    m = AdmissibleManifold.zero(double, ManifoldKind.STABLE)
    assert m.is_admissible()
    assert m.radius == pytest.approx(double.p_s)
    assert m.norms() == {"F0": 0.0, "dF0": 0.0, "dF_max": 0.0, "holder": 0.0}
    assert compare_manifolds(m, m) == (0.0, 0.0)


def test_interpolation_reproduces_affine_graphs(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    m = AdmissibleManifold.from_function(double, ManifoldKind.UNSTABLE, lambda t: 0.3 * t + 1e-9)
    t = np.linspace(-0.9, 0.9, 7)[:, None] * m.radius
    assert m(t) == pytest.approx(0.3 * t + 1e-9, rel=1e-9)
    assert m.jacobian(t)[:, 0, 0] == pytest.approx(np.full(7, 0.3), rel=1e-6)
    assert m.norms()["dF0"] == pytest.approx(0.3, rel=1e-9)


def test_steep_graph_is_not_admissible(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    m = AdmissibleManifold.from_function(double, ManifoldKind.STABLE, lambda t: 2.0 * t)
    assert not m.admissibility()["am3"]
    assert not m.is_admissible()


def test_stable_transform_is_invariant(small_pipeline):
    cache = small_pipeline.state.cache
    v, w = _ray(small_pipeline, 0, 1)
    tr = cache.get(v, w)
    at_w = _constant(tr.target_double, ManifoldKind.STABLE, 1e-3 * tr.target_double.eta)
    at_v = graph_transform(tr, at_w, ManifoldKind.STABLE)
    assert at_v.chart is tr.source_double
    assert invariance_error(tr, at_v, at_w) < 1e-12


def test_unstable_transform_is_invariant(small_pipeline):
    cache = small_pipeline.state.cache
    v, w = _ray(small_pipeline, 0, 1)
    tr = cache.get(v, w)
    at_v = _constant(tr.source_double, ManifoldKind.UNSTABLE, -1e-3 * tr.source_double.eta)
    at_w = graph_transform(tr, at_v, ManifoldKind.UNSTABLE)
    assert at_w.chart is tr.target_double
    assert backward_invariance_error(tr, at_v, at_w) < 1e-12


def test_rays_keep_history(small_pipeline):
    transitions = small_pipeline.state.cache.along(_ray(small_pipeline, 0, 4))
    history = []
    vs = stable_manifold(transitions, history=history)
    assert len(history) == 5
    assert history[-1] is vs
    assert vs.chart is transitions[0].source_double
    vu = unstable_manifold(transitions)
    assert vu.chart is transitions[-1].target_double
    with pytest.raises(DomainError):
        stable_manifold([])
    with pytest.raises(DomainError):
        unstable_manifold([])


def test_graph_transform_contracts(small_pipeline):
    transitions = small_pipeline.state.cache.along(_ray(small_pipeline, 0, 3))
    target = transitions[-1].target_double
    first = _constant(target, ManifoldKind.STABLE, 0.05 * target.eta)
    second = _constant(target, ManifoldKind.STABLE, -0.05 * target.eta)
    ratios = contraction_profile(transitions, first, second)
    assert len(ratios) == 3
    bound = math.exp(-CHI * 0.1 / 2.0) + 1e-6
    assert all(r <= bound for r in ratios)
    assert ratios == pytest.approx([math.exp(-LOG_LAMBDA * 0.1)] * 3, rel=1e-6)


def test_random_admissible_graphs_are_curved(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    rng = np.random.default_rng(3)
    for kind in (ManifoldKind.STABLE, ManifoldKind.UNSTABLE):
        a = random_admissible(double, kind, rng)
        b = random_admissible(double, kind, rng)
        assert a.is_admissible() and b.is_admissible()
        assert a.kind is kind
        assert np.max(np.abs(np.diff(a.values[:, 0], 2))) > 1e-6 * double.eta
        assert compare_manifolds(a, b)[0] > 0


def test_graph_transform_contracts_random_admissible_pairs(small_pipeline):
    transitions = small_pipeline.state.cache.along(_ray(small_pipeline, 0, 3))
    target = transitions[-1].target_double
    rng = np.random.default_rng(11)
    bound = math.exp(-CHI * 0.1 / 2.0) + 1e-6
    for _ in range(10):
        first = random_admissible(target, ManifoldKind.STABLE, rng)
        second = random_admissible(target, ManifoldKind.STABLE, rng)
        ratios = contraction_profile(transitions, first, second)
        assert len(ratios) == 3
        assert all(r <= bound for r in ratios)


def test_forward_contraction_along_stable_manifold(small_pipeline):
    transitions = small_pipeline.state.cache.along(_ray(small_pipeline, 0, 5))
    vs = stable_manifold(transitions)
    out = forward_contraction(transitions, vs, pairs=5)
    times = [t for _, t in out]
    assert times == sorted(times)
    assert out[-1][0] < out[0][0] < 1.0


def test_shadow_periodic_window(small_pipeline):
    cache = small_pipeline.state.cache
    path = _ray(small_pipeline, 6, 6)
    result = shadow(path, 6, cache)
    double = cache.doubles[path[6]]
    assert result.inside
    assert result.iterations >= 1
    model = small_pipeline.state.model
    assert model.distance(result.point, _window(small_pipeline).at(0)) < double.eta
    assert set(result.residuals) == set(range(-6, 7))


def test_seed_sensitivity_decays_with_depth(small_pipeline):
    cache = small_pipeline.state.cache
    model = small_pipeline.state.model
    gaps = []
    for depth in (3, 9):
        path = _ray(small_pipeline, depth, depth)
        end, start = cache.doubles[path[-1]], cache.doubles[path[0]]
        seeded = shadow(path, depth, cache, seeds=(
            _constant(end, ManifoldKind.STABLE, 0.1 * end.eta),
            _constant(start, ManifoldKind.UNSTABLE, -0.1 * start.eta)))
        plain = shadow(path, depth, cache)
        gaps.append(model.distance(seeded.point, plain.point))
    assert gaps[1] < 0.8 * gaps[0]


def test_shadow_needs_both_sides(small_pipeline):
    path = _ray(small_pipeline, 0, 4)
    with pytest.raises(ShadowingError):
        shadow(path, 0, small_pipeline.state.cache)


def test_nested_or_disjoint(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    flat = AdmissibleManifold.zero(double, ManifoldKind.STABLE)
    shifted = _constant(double, ManifoldKind.STABLE, 1e-3 * double.eta)
    tilted = AdmissibleManifold.from_function(double, ManifoldKind.STABLE, lambda t: 0.1 * t)
    assert nested_or_disjoint(flat, flat)
    assert nested_or_disjoint(flat, shifted, tol=1e-12)
    assert not nested_or_disjoint(flat, tilted, tol=1e-12)


def test_lifted_contraction_on_stable_leaf(cat_model, cat_section):
    y = np.array([0.2, 0.3, 0.1])
    z = y + np.r_[1e-6 * cat_model.E[:, 1], 0.0]
    times = [0.3, 0.7, 1.0]
    ratios = lifted_contraction(cat_section, y, z, times)
    assert ratios == pytest.approx(np.exp(-LOG_LAMBDA * np.array(times)), rel=1e-6)
    r = cat_section.return_time
    assert all(q <= math.exp(-CHI * r * t / (4 * r)) for q, t in zip(ratios, times))


def test_lifted_contraction_follows_the_return_shear(cat_model):
    returns = itertools.cycle([0.1, 0.12])

    def poincare_return(x, direction):
        step = next(returns)
        return cat_model.flow(x, step), step

    section = SimpleNamespace(model=cat_model, poincare_return=poincare_return)
    y = np.array([0.2, 0.3, 0.1])
    z = y + np.r_[1e-6 * cat_model.E[:, 1], 0.0]
    ratios = lifted_contraction(section, y, z, [0.05, 0.25])
    base = cat_model.distance(y, z)
    # two returns of y by t = 0.25, each 0.02 shorter than the matching return of z
    expected = cat_model.distance(cat_model.flow(y, 0.25), cat_model.flow(z, 0.29)) / base
    assert ratios[1] == pytest.approx(expected, rel=1e-9)
    assert ratios[0] == pytest.approx(
        cat_model.distance(cat_model.flow(y, 0.05), cat_model.flow(z, 0.05)) / base, rel=1e-9)


def test_smale_bracket_takes_stable_of_x_and_unstable_of_y(small_pipeline):
    double = small_pipeline.state.alphabet[0].double
    a1, a2, b1, b2 = np.array([0.1, -0.2, 0.05, 0.15]) * double.eta
    fibres = {
        "x": (_constant(double, ManifoldKind.STABLE, a1), _constant(double, ManifoldKind.UNSTABLE, b1)),
        "y": (_constant(double, ManifoldKind.STABLE, a2), _constant(double, ManifoldKind.UNSTABLE, b2)),
    }
    rect = SimpleNamespace(fibres=lambda p: fibres[p], chart=double.chart)
    bracket = smale_bracket(rect, "x", "y")
    assert bracket == pytest.approx(double.chart.apply(np.array([b2, a1])), abs=1e-14)
    assert smale_bracket(rect, "x", "x") == pytest.approx(double.chart.apply(np.array([b1, a1])), abs=1e-14)
