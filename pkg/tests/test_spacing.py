import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thickpoint.errors import DomainError, WindowEmpty
from thickpoint.spacing import (SpacingWitness, certified_from, gap_statistics,
                                second_difference, select_weakly_spaced, verify_weakly_spaced,
                                window_width, ws1_margin)

xs = st.floats(1.0 + 1e-9, 1e3, exclude_min=True)
alphas = st.floats(1e-6, 10.0)


def naive_margin(x, a):
    return (x / (x - 1)) ** a + (x / (x + 1)) ** a - 2


# -- margin --------------------------------------------------------------------

def test_margin_example():
    assert ws1_margin(2.0, 1.0) == pytest.approx(2 / 3, rel=1e-15)


def test_margin_vanishes_as_alpha_to_zero():
    m = ws1_margin(3.0, np.geomspace(1e-1, 1e-12, 12))
    assert np.all(np.diff(m) < 0) and m[-1] < 1e-11


@settings(max_examples=300)
@given(xs, alphas)
def test_margin_positive(x, a):
    assert ws1_margin(x, a) > 0


@settings(max_examples=200)
@given(st.floats(1.01, 50.0), st.floats(0.01, 5.0))
def test_margin_matches_direct_formula(x, a):
    assert ws1_margin(x, a) == pytest.approx(naive_margin(x, a), rel=1e-9, abs=1e-13)


@settings(max_examples=200)
@given(xs, st.floats(1e-3, 9.0))
def test_margin_increasing_in_alpha(x, a):
    assert ws1_margin(x, a * 1.01) > ws1_margin(x, a)


def test_margin_domain():
    with pytest.raises(DomainError):
        ws1_margin(1.0, 1.0)
    with pytest.raises(DomainError):
        ws1_margin(2.0, 0.0)


@settings(max_examples=200)
@given(st.integers(2, 10 ** 6), st.floats(0.01, 5.0))
def test_second_difference_positive(level, a):
    b = lambda l: float(l) ** -a
    assert second_difference(level, a) > 0
    if level < 1000:
        direct = b(level - 1) - 2 * b(level) + b(level + 1)
        assert second_difference(level, a) == pytest.approx(direct, rel=1e-6)


def test_window_width_bounds():
    l = np.arange(2, 1000)
    w = window_width(l, 1.0)
    assert np.all(w <= 0.5 * second_difference(l, 1.0) + 1e-300)
    assert np.all(w <= 1.0 / (4 * l ** 2.0))
    assert np.all(w > 0)


# -- selection -----------------------------------------------------------------

@pytest.fixture(scope="module")
def grid():
    return np.linspace(0.0, 1.0, 10 ** 6)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_selection_on_dense_grid(grid, alpha):
    w = select_weakly_spaced(grid, alpha)
    assert verify_weakly_spaced(grid, w)
    assert w.C_alpha == alpha / 2 and w.L0 <= 20 and w.depth >= 40
    g = w.gaps
    l = w.levels[:-1]
    sel = l >= w.L0
    assert np.all(g[sel] >= alpha / (2 * l[sel] ** (1 + alpha)))
    assert np.all(g[sel] <= 2 * alpha / l[sel] ** (1 + alpha))
    targets = w.levels.astype(float) ** -alpha
    assert np.all(w.values >= targets)
    assert np.all(w.values - targets <= window_width(w.levels, alpha))
    assert w.stopped_at == w.first_level + w.depth


def test_selection_prefers_smallest_point_then_index():
    pts = np.array([0.5 + 1e-4, 0.5, 0.5, 0.26, 0.2501, 0.25])
    w = select_weakly_spaced(pts, 1.0, interval=(0.0, 1.0), min_levels=1)
    assert w.first_level == 2
    assert w.indices[0] == 1


def test_selection_indices_distinct_and_values_decreasing(grid):
    w = select_weakly_spaced(grid, 1.0)
    assert np.unique(w.indices).size == w.depth
    assert np.all(np.diff(w.values) < 0)


def test_single_point_is_not_dense():
    with pytest.raises(WindowEmpty) as info:
        select_weakly_spaced([0.5], 1.0, interval=(0.0, 1.0))
    assert info.value.level >= 2


def test_strict_mode_raises_at_first_empty_window(grid):
    with pytest.raises(WindowEmpty):
        select_weakly_spaced(grid, 1.0, strict=True)


def test_max_levels_caps_depth(grid):
    w = select_weakly_spaced(grid, 1.0, max_levels=10)
    assert w.depth == 10 and w.stopped_at is None


def test_selection_validation():
    with pytest.raises(DomainError):
        select_weakly_spaced([0.0, 1.0], 0.0)
    with pytest.raises(ValueError):
        select_weakly_spaced([], 1.0)
    with pytest.raises(ValueError):
        select_weakly_spaced([0.0, 1.0], 1.0, interval=(1.0, 1.0))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-5, 5), st.floats(0.5, 4.0))
def test_selection_always_verifies(alpha, a, width):
    pts = np.linspace(a, a + width, 200_001)
    try:
        w = select_weakly_spaced(pts, alpha)
    except WindowEmpty:
        return
    if w.depth >= 3 and w.gaps[-1] < w.gaps[0] / 10:
        assert verify_weakly_spaced(pts, w)
    assert np.all(np.diff(w.values) < 0)


# -- verifier ------------------------------------------------------------------

def test_verifier_rejects_lowered_gap(grid):
    w = select_weakly_spaced(grid, 1.0)
    k = w.depth // 2
    l = w.first_level + k - 1
    # move value k up so gap k-1 drops below C / l^2
    target = w.values[k - 1] - 0.4 * w.C_alpha / l ** 2
    j = int(np.searchsorted(grid, target))
    idx = w.indices.copy()
    idx[k] = j
    bad = dataclasses.replace(w, indices=idx, values=grid[idx])
    assert not verify_weakly_spaced(grid, bad)


def test_verifier_rejects_constant_gaps():
    pts = np.arange(100) * 0.01
    idx = np.arange(99, -1, -1)
    w = SpacingWitness(1.0, idx, pts[idx], 1, 0.5, 1)
    assert not verify_weakly_spaced(pts, w)


def test_verifier_rejects_tampered_values(grid):
    w = select_weakly_spaced(grid, 1.0)
    vals = w.values.copy()
    vals[3] += 1e-9
    assert not verify_weakly_spaced(grid, dataclasses.replace(w, values=vals))


def test_verifier_rejects_repeated_or_out_of_range_indices(grid):
    w = select_weakly_spaced(grid, 1.0)
    idx = w.indices.copy()
    idx[2] = idx[1]
    assert not verify_weakly_spaced(grid, dataclasses.replace(w, indices=idx))
    idx = w.indices.copy()
    idx[0] = grid.size
    assert not verify_weakly_spaced(grid, dataclasses.replace(w, indices=idx))


def test_certified_from():
    l = np.arange(2, 40)
    g = 1.0 / l ** 2
    assert certified_from(g, 2, 1.0) == 2
    g2 = g.copy()
    g2[5] = 10.0
    assert certified_from(g2, 2, 1.0) == 8


def test_witness_json_round_trip(grid):
    w = select_weakly_spaced(grid, 2.0)
    back = SpacingWitness.from_json(w.to_json())
    assert np.array_equal(back.indices, w.indices) and back.L0 == w.L0
    assert back.stopped_at == w.stopped_at and verify_weakly_spaced(grid, back)


# -- gap statistics ------------------------------------------------------------

def test_gap_statistics_uniform():
    r = gap_statistics(np.arange(10) * 0.1)
    assert r.min_gap == pytest.approx(0.1) and r.max_gap == pytest.approx(0.1)
    assert r.mean_gap == pytest.approx(0.1)


def test_gap_statistics_reciprocal_sequence():
    b = 1.0 / np.arange(1, 2001)
    assert gap_statistics(b).rank_exponent == pytest.approx(-2.0, abs=0.05)


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=50, unique=True))
def test_gap_statistics_ordering(pts):
    r = gap_statistics(pts)
    assert r.min_gap <= r.mean_gap <= r.max_gap


def test_gap_statistics_too_few():
    with pytest.raises(ValueError):
        gap_statistics([1.0, 2.0])


def test_anderson_eigenvalues_give_shallow_witness():
    from thickpoint.models import ModelSpec, solve_model
    lam = solve_model(ModelSpec("anderson", 4096, coupling=1.0, seed=0)).eigenvalues
    pts = lam[(lam >= -1) & (lam <= 1)]
    w = select_weakly_spaced(pts, 1.0, interval=(-1.0, 1.0))
    l = w.levels[:-1]
    sel = l >= w.L0
    assert w.depth >= 3 and np.any(sel)
    assert np.all(w.gaps[sel] >= w.C_alpha / l[sel] ** 2)
    assert np.all(w.gaps[sel] <= 2 / l[sel] ** 2)
    # eigenvalue spacing ~ 1e-3 stops the selection after a few levels,
    # before the last gap can fall below a tenth of the first
    assert verify_weakly_spaced(pts, w) == bool(w.gaps[-1] < w.gaps[0] / 10)
