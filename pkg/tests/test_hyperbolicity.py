"""
Tests for finite-time exponents, Pesin frames, reductions and the greedy p sequences
"""
import math

import numpy as np
import pytest

from symflow.config import ScaleLaws
from symflow.errors import HorizonError, InputError, NUHRejectionError, ReductionError
from symflow.hyperbolicity import (
    FrameBuilder,
    estimate_splitting,
    finite_time_exponents,
    greedy_p,
    lyapunov_frame,
    maximal_frequency,
    pesin_inequalities,
    q_parameters,
    recurrence_flag,
    reduction,
    resolve_chi,
    robustness_exponent,
)
from symflow.sections import linear_poincare

from .conftest import CHI, EPS, LOG_LAMBDA, RHO

POINT = np.array([0.31, 0.47, 0.0])


def test_finite_time_exponents_are_exact(cocycle):
    exps = finite_time_exponents(cocycle, POINT, 3.0)
    assert exps == pytest.approx([-LOG_LAMBDA, LOG_LAMBDA], rel=1e-9)
    with pytest.raises(InputError):
        finite_time_exponents(cocycle, POINT, 0.0)


def test_splitting_dimensions(cocycle):
    split = estimate_splitting(cocycle, POINT, 2.0, CHI)
    assert (split.d_s, split.d_u) == (1, 1)
    # stable and unstable directions are orthogonal in the Sol metric
    assert abs(float(split.stable_basis[:, 0] @ split.unstable_basis[:, 0])) < 1e-9


def test_splitting_rejects_weak_hyperbolicity(cocycle):
    with pytest.raises(NUHRejectionError):
        estimate_splitting(cocycle, POINT, 2.0, 1.2 * LOG_LAMBDA)


def test_frame_values(builder):
    frame = builder.frame(POINT)
    gap = LOG_LAMBDA - CHI
    expected = math.sqrt(4.0 * math.exp(2 * RHO) * (1 - math.exp(-2 * gap * 16.0)) / (2 * gap))
    assert frame.s_value == pytest.approx(expected, rel=1e-6)
    assert frame.u_value == pytest.approx(expected, rel=1e-6)
    assert frame.C_inv_norm == pytest.approx(expected, rel=1e-6)
    assert frame.Q == pytest.approx(ScaleLaws.desk().Q(EPS, frame.C_inv_norm, 1.0))
    assert frame.tail < 1e-8


def test_lyapunov_inner_is_diagonal(builder):
    frame = builder.frame(POINT)
    es = frame.splitting.stable_basis[:, 0]
    eu = frame.splitting.unstable_basis[:, 0]
    assert frame.lyapunov_inner(es, eu) == pytest.approx(0.0, abs=1e-9)
    assert frame.lyapunov_inner(es, es) == pytest.approx(frame.s_value ** 2, rel=1e-9)


def test_frames_share_cache_by_height(cocycle):
    fresh = FrameBuilder(cocycle, CHI, RHO, EPS, splitting_horizon=2.0)
    first = fresh.frame(np.array([0.1, 0.2, 0.3]))
    second = fresh.frame(np.array([0.7, 0.9, 0.3]))
    assert fresh.computed == 1
    assert second.point == pytest.approx([0.7, 0.9, 0.3])
    assert second.C_inv_norm == first.C_inv_norm


def test_resolve_chi(cocycle):
    chi = resolve_chi(cocycle, [POINT, np.array([0.5, 0.5, 0.5])], 2.0)
    assert chi == pytest.approx(0.25 * LOG_LAMBDA, rel=1e-9)


def test_reduction_blocks(cat_model, cocycle, builder):
    t = 0.1
    y = cat_model.flow(POINT, t)
    red = reduction(builder.frame(POINT), builder.frame(y), linear_poincare(cocycle, POINT, t), t, CHI, RHO)
    assert red.off_block < 1e-9
    assert red.bounds["s_max"] == pytest.approx(math.exp(-LOG_LAMBDA * t), rel=1e-6)
    assert red.bounds["u_min"] == pytest.approx(math.exp(LOG_LAMBDA * t), rel=1e-6)
    assert red.cinv_ratio == pytest.approx(1.0)


def test_reduction_time_range(cat_model, cocycle, builder):
    t = 0.5
    y = cat_model.flow(POINT, t)
    with pytest.raises(ReductionError):
        reduction(builder.frame(POINT), builder.frame(y), linear_poincare(cocycle, POINT, t), t, CHI, RHO)


def _brute_force(Q, times, eps):
    n = len(Q)
    p_s = np.array([min(math.exp(eps * (times[m] - times[i])) * eps * Q[m] for m in range(i, n))
                    for i in range(n)])
    p_u = np.array([min(math.exp(eps * (times[i] - times[m])) * eps * Q[m] for m in range(0, i + 1))
                    for i in range(n)])
    return p_s, p_u


def test_greedy_matches_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(100):
        Q = np.exp(rng.normal(-8.0, 2.0, 50))
        times = np.cumsum(rng.uniform(0.05, 0.15, 50))
        p_s, p_u = greedy_p(Q, times, EPS)
        ref_s, ref_u = _brute_force(Q, times, EPS)
        assert np.max(np.abs(p_s / ref_s - 1)) < 1e-12
        assert np.max(np.abs(p_u / ref_u - 1)) < 1e-12


def test_greedy_invariants():
    rng = np.random.default_rng(5)
    Q = np.exp(rng.normal(-5.0, 1.0, 30))
    times = np.arange(30) * 0.1
    p_s, p_u = greedy_p(Q, times, EPS)
    assert np.all(p_s <= EPS * Q) and np.all(p_u <= EPS * Q)
    growth = math.exp(EPS * 0.1) * (1 + 1e-12)
    assert np.all(p_s[:-1] <= growth * p_s[1:])
    assert np.all(p_u[1:] <= growth * p_u[:-1])
    assert p_s[-1] == EPS * Q[-1] and p_u[0] == EPS * Q[0]


@pytest.mark.parametrize("Q, times, bounds", [
    ([1.0, 2.0], [0.0, 0.0], None),
    ([1.0, -2.0], [0.0, 0.1], None),
    ([1.0, 2.0, 3.0], [0.0, 0.1], None),
    ([], [], None),
    ([1.0, 2.0], [0.0, 1.0], (0.1, 0.1)),
])
def test_greedy_rejects_bad_input(Q, times, bounds):
    with pytest.raises(InputError):
        greedy_p(Q, times, EPS, r_bounds=bounds)


def test_q_parameters_constant_q():
    times = np.arange(21) * 0.1
    params = q_parameters(np.full(21, 1e-3), times, EPS)
    assert params.q == pytest.approx(np.full(21, EPS * 1e-3))
    assert params.refinement_error == pytest.approx(0.0, abs=1e-15)
    assert maximal_frequency(params.p_s, params.Q, EPS) == 1.0
    assert recurrence_flag(params, 0.5 * EPS * 1e-3)
    assert not recurrence_flag(params, 2.0 * EPS * 1e-3)


def test_q_is_min_of_sides():
    rng = np.random.default_rng(7)
    Q = np.exp(rng.normal(-4.0, 1.0, 25))
    params = q_parameters(Q, np.arange(25) * 0.1, EPS)
    assert np.array_equal(params.q, np.minimum(params.q_s, params.q_u))
    assert params.refinement_error >= 0.0


def test_robustness_exponent():
    assert robustness_exponent(0.01, 0.2) == pytest.approx(0.002 + 57.6)
    assert robustness_exponent(0.01, 0.2, beta=0.5) == pytest.approx(0.002 + 115.2)


def test_pesin_inequalities_hold_on_cat_frames(cat_model, builder):
    frames = [builder.frame(cat_model.flow(POINT, 0.1 * n)) for n in range(5)]
    results = {r.name: r for r in pesin_inequalities(frames, EPS)}
    assert results["Q_cap"].passed and results["Q_cap"].samples == 5
    assert results["frame_ratio"].passed and results["frame_ratio"].samples == 4


def test_lyapunov_frame_matches_builder(cocycle, builder):
    splitting = estimate_splitting(cocycle, POINT, 2.0, CHI)
    frame = lyapunov_frame(cocycle, POINT, splitting, CHI, RHO, EPS)
    cached = builder.frame(POINT)
    assert frame.s_value == pytest.approx(cached.s_value, rel=1e-9)
    assert frame.C_inv_norm == pytest.approx(cached.C_inv_norm, rel=1e-9)
    assert frame.Q == pytest.approx(cached.Q, rel=1e-9)


def test_lyapunov_frame_short_horizon(cocycle):
    splitting = estimate_splitting(cocycle, POINT, 2.0, CHI)
    with pytest.raises(HorizonError):
        lyapunov_frame(cocycle, POINT, splitting, CHI, RHO, EPS, horizon=1.0, nodes=101)
