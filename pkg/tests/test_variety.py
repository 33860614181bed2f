import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from maxvariety import (CutoffParams, DegenerateConfigurationError, EnsembleState,
                        InvalidInputError, PhysicalConstants, compute_views, distinctiveness,
                        variety, variety_gradient, variety_potential)
from maxvariety.variety import three_body_potential, variety_naive

TRIPLE = np.array([-1.0, 0.0, 1.0])


def state_of(x, R=math.inf, d=None, **cut):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return EnsembleState.from_positions(x, PhysicalConstants(dim=x.shape[1]),
                                        CutoffParams(R=R, **cut))


def spread_points(seed, N, d, scale=1.0, min_gap=1e-2):
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(scale=scale, size=(N, d))
        diff = x[:, None] - x[None]
        dist = np.sqrt((diff**2).sum(-1)) + np.eye(N) * 1e9
        if dist.min() > min_gap * scale:
            return x


def test_views_hand_values():
    v = compute_views(state_of([0.0, 2.0]))
    assert v.get(0, 1)[0] == -0.5 and v.get(1, 0)[0] == 0.5
    assert compute_views(state_of([0.0, 1.0])).get(0, 1)[0] == -1.0


def test_views_outside_horizon_are_absent():
    v = compute_views(state_of([0.0, 2.0], R=1.0))
    assert len(v) == 0 and v.get(0, 1)[0] == 0.0


def test_horizon_is_strict():
    assert len(compute_views(state_of([0.0, 1.0], R=1.0))) == 0


def test_views_reject_coincident_members():
    with pytest.raises(DegenerateConfigurationError) as info:
        compute_views(state_of([0.0, 0.0, 1.0]))
    assert info.value.pairs == [(0, 1)]


def test_view_antisymmetry():
    v = compute_views(state_of(spread_points(0, 6, 2)))
    dense = v.dense()
    assert np.array_equal(dense, -dense.transpose(1, 0, 2))


def test_distinctiveness_examples():
    v = compute_views(state_of(TRIPLE))
    assert distinctiveness(v, 0, 2) == pytest.approx(4 / 3, rel=1e-14)
    assert distinctiveness(v, 0, 1) == pytest.approx(1 / 12, rel=1e-14)
    assert distinctiveness(compute_views(state_of([0.0, 3.0])), 0, 1) == 0.0
    with pytest.raises(InvalidInputError):
        distinctiveness(v, 1, 1)


def test_variety_examples():
    assert variety(state_of([0.3])).total == 0.0
    assert variety(state_of([0.3, 1.1])).total == 0.0
    assert variety(state_of(TRIPLE)).total == pytest.approx(1 / 3, rel=1e-14)
    assert variety_naive(state_of(TRIPLE)) == pytest.approx(1 / 3, rel=1e-14)


def test_variety_potential_examples():
    assert variety_potential(state_of([0.0, 1.0])) == 0.0
    assert variety_potential(state_of(TRIPLE)) == pytest.approx(-1 / 24, rel=1e-14)
    u1 = variety_potential(state_of(TRIPLE))
    assert variety_potential(state_of(3.0 * TRIPLE)) == pytest.approx(u1 / 9, rel=1e-12)


def test_local_and_pair_forms_agree():
    s = state_of(spread_points(1, 12, 2))
    b = variety(s, with_pairs=True)
    assert b.total == pytest.approx(s.cutoffs.A / s.N * b.local.sum(), rel=1e-12)
    assert np.all(b.pair >= 0) and b.total >= 0


def test_alternative_normalization():
    s = state_of(TRIPLE)
    assert variety(s, normalization="N(N-1)").total == pytest.approx(0.5, rel=1e-14)
    assert variety_naive(s, "N(N-1)") == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(InvalidInputError):
        variety(s, normalization="other")


def test_gradient_sum_and_mirror_symmetry():
    g = variety_gradient(state_of(TRIPLE))
    assert abs(g[1, 0]) < 1e-15
    assert g[0, 0] == pytest.approx(-g[2, 0], rel=1e-14)
    g5 = variety_gradient(state_of(spread_points(3, 7, 2)))
    assert np.allclose(g5.sum(axis=0), 0, atol=1e-12 * np.abs(g5).max())


def finite_difference(state, step):
    x = np.array(state.positions)
    out = np.zeros_like(x)
    for k in range(x.shape[0]):
        for a in range(x.shape[1]):
            xp, xm = x.copy(), x.copy()
            xp[k, a] += step
            xm[k, a] -= step
            out[k, a] = (variety_potential(state.with_positions(xp))
                         - variety_potential(state.with_positions(xm))) / (2 * step)
    return out


def test_gradient_matches_finite_differences_seed_42():
    s = state_of(spread_points(42, 5, 1, min_gap=0.05))
    fd = finite_difference(s, 1e-6 * s.diameter())
    an = variety_gradient(s)
    assert np.max(np.abs(an - fd)) <= 1e-5 * np.max(np.abs(fd))


def test_gradient_finite_horizon_matches_differences():
    s = state_of(spread_points(8, 10, 1), R=1.5)
    fd = finite_difference(s, 1e-7)
    assert np.max(np.abs(variety_gradient(s) - fd)) <= 1e-5 * np.max(np.abs(fd))


def test_smooth_cutoff_gradient_matches_differences():
    s = state_of(spread_points(9, 10, 1), R=1.2)
    step = 1e-7

    def smooth_potential(st_):
        from maxvariety.variety import compute_views as cv
        return variety_potential(st_, views=cv(st_, smooth=True))

    x = np.array(s.positions)
    fd = np.zeros_like(x)
    for k in range(x.shape[0]):
        xp, xm = x.copy(), x.copy()
        xp[k, 0] += step
        xm[k, 0] -= step
        fd[k, 0] = (smooth_potential(s.with_positions(xp))
                    - smooth_potential(s.with_positions(xm))) / (2 * step)
    an = variety_gradient(s, smooth=True)
    assert np.max(np.abs(an - fd)) <= 1e-5 * np.max(np.abs(fd))


def test_near_horizon_warning():
    s = state_of([0.0, 1.0 - 1e-12, 5.0], R=1.0, epsilon_min=1e-9)
    with pytest.warns(RuntimeWarning, match="horizon"):
        variety_gradient(s)


def test_three_body_examples():
    c = PhysicalConstants()
    assert three_body_potential(-1, 0, 1, c, signed=False) == pytest.approx(1 / 16)
    assert three_body_potential(0, 1, 2, c, signed=False) == pytest.approx(1 / 16)
    assert three_body_potential(-2, 0, 2, c, signed=False) == pytest.approx(1 / 64)
    assert three_body_potential(-1, 0, 1, c) == pytest.approx(9 / 16)
    with pytest.raises(DegenerateConfigurationError):
        three_body_potential(0, 0, 1)


def test_three_body_is_fixed_multiple_of_variety_potential():
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(100):
        x = rng.normal(size=3)
        ratios.append(three_body_potential(*x) / abs(variety_potential(state_of(x))))
    assert np.allclose(ratios, 13.5, rtol=1e-10)


def test_monotone_in_spacing():
    values = [variety_potential(state_of(s * TRIPLE)) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(v < 0 for v in values)
    assert all(b > a for a, b in zip(values, values[1:]))
    assert values[0] * 0.25 == pytest.approx(values[1], rel=1e-12)


positions_1d = arrays(np.float64, st.integers(3, 9),
                      elements=st.floats(-10, 10, allow_nan=False), unique=True)


def well_separated(x):
    x = np.sort(np.asarray(x).reshape(-1))
    return np.min(np.diff(x)) > 1e-3


@given(positions_1d, st.randoms(use_true_random=False))
def test_permutation_invariance(x, rnd):
    if not well_separated(x):
        return
    s = state_of(x)
    order = list(range(len(x)))
    rnd.shuffle(order)
    assert variety(s.permuted(order)).total == pytest.approx(variety(s).total, rel=1e-12)


@given(st.lists(st.integers(-800, 800), min_size=3, max_size=9, unique=True),
       st.integers(-8000, 8000))
def test_translation_invariance(ticks, shift):
    # dyadic positions and shifts keep the translated differences exact
    x = np.array(ticks) / 8.0
    base = variety(state_of(x)).total
    assert variety(state_of(x + shift / 8.0)).total == pytest.approx(base, rel=1e-12)


@given(positions_1d, st.floats(-100, 100))
def test_translation_invariance_generic(x, shift):
    if not well_separated(x):
        return
    base = variety(state_of(x)).total
    assert variety(state_of(x + shift)).total == pytest.approx(base, rel=1e-9)


@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi))
def test_rotation_invariance_2d(seed, angle):
    x = spread_points(seed, 6, 2)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    a = variety(state_of(x)).total
    assert variety(state_of(x @ rot.T)).total == pytest.approx(a, rel=1e-12)


@given(positions_1d, st.floats(0.1, 10))
def test_scaling_law(x, lam):
    if not well_separated(x):
        return
    a = variety(state_of(x)).total
    assert variety(state_of(lam * x)).total == pytest.approx(a / lam**2, rel=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3),
       st.sampled_from([math.inf, 0.8, 1.5]))
def test_matches_naive_triple_loop(seed, N, d, R):
    s = state_of(spread_points(seed, N, d), R=R)
    assert variety(s).total == pytest.approx(variety_naive(s), rel=1e-12, abs=1e-300)


@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(1, 2))
def test_gradient_property(seed, N, d):
    s = state_of(spread_points(seed, N, d, min_gap=0.05))
    fd = finite_difference(s, 1e-6 * s.diameter())
    an = variety_gradient(s)
    assert np.max(np.abs(an - fd)) <= 1e-5 * np.max(np.abs(fd))
