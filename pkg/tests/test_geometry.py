import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatial_coalescent.errors import DimensionTooLow, SizeOverflow
from spatial_coalescent.geometry import (
    WalkSpec,
    build_torus,
    complete_graph,
    generic_graph,
    green_function,
    kappa,
    simple_walk,
    single_site,
)


# ---------------------------------------------------------------- walks

def test_walk_distribution_validated():
    with pytest.raises(ValueError):
        WalkSpec(1, ((1,), (-1,)), (0.7, 0.7))


def test_walk_must_span_all_coordinates():
    with pytest.raises(ValueError):
        WalkSpec(2, ((1, 0), (-1, 0)), (0.5, 0.5))


def test_simple_walk_shape():
    w = simple_walk(3)
    assert w.offsets_array.shape == (6, 3)
    assert np.allclose(w.probs_array, 1.0 / 6.0)


# ---------------------------------------------------------------- torus

def test_torus_n1_d3_neighbor_structure():
    geo = build_torus(1, simple_walk(3))
    assert geo.size == 27
    for i in range(27):
        row = geo.kernel_row(i)
        nz = np.nonzero(row)[0]
        assert len(nz) == 6
        assert np.allclose(row[nz], 1.0 / 6.0)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)


def test_torus_n1_d1_is_three_cycle():
    w = simple_walk(1)
    geo = build_torus(1, w)
    assert geo.size == 3
    for i in range(3):
        row = geo.kernel_row(i)
        assert row[i] == 0.0
        assert sorted(row) == pytest.approx([0.0, 0.5, 0.5])


def test_torus_rows_and_columns_stochastic():
    geo = build_torus(2, simple_walk(3))
    mat = np.vstack([geo.kernel_row(i) for i in range(geo.size)])
    assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)
    # translation invariance makes the kernel doubly stochastic
    assert np.allclose(mat.sum(axis=0), 1.0, atol=1e-12)


def test_torus_site_budget_overflow():
    with pytest.raises(SizeOverflow):
        build_torus(100, simple_walk(3), site_budget=1000)


def test_generic_graph_names_bad_row():
    mat = np.array([[0.5, 0.5], [0.6, 0.6]])
    with pytest.raises(ValueError, match=r"rows \[1\]"):
        generic_graph(mat)


def test_complete_graph_and_single_site():
    g = complete_graph(4)
    row = g.kernel_row(0)
    assert row[0] == 0.0
    assert np.allclose(row[1:], 1.0 / 3.0)
    s = single_site()
    assert s.size == 1
    assert s.move_rate(0) == 0.0


# ---------------------------------------------------------------- Green

def test_green_lattice_d3_matches_reference():
    est, err = green_function(simple_walk(3), "LATTICE_SUM")
    assert est == pytest.approx(1.5163860, abs=max(err, 1e-3))
    assert est >= 1.0


def test_green_decreases_with_dimension():
    g3, _ = green_function(simple_walk(3), "LATTICE_SUM")
    g5, _ = green_function(simple_walk(5), "LATTICE_SUM", k_max=10)
    assert 1.0 <= g5 < g3


def test_green_monte_carlo_agrees_with_lattice():
    g_lat, e_lat = green_function(simple_walk(3), "LATTICE_SUM")
    g_mc, e_mc = green_function(simple_walk(3), "MONTE_CARLO", seed=3)
    assert abs(g_lat - g_mc) <= e_lat + e_mc


def test_green_rejects_low_dimension():
    with pytest.raises(DimensionTooLow):
        green_function(simple_walk(2), "LATTICE_SUM")


# ---------------------------------------------------------------- kappa

def test_kappa_arithmetic():
    assert kappa(3.0, 2.0) == pytest.approx(0.5)


def test_kappa_kingman_reference_value():
    assert kappa(1.5163860, 1.0) == pytest.approx(0.5687658867, abs=1e-6)


def test_kappa_saturates_for_large_pair_rate():
    assert kappa(2.0, 1e6) == pytest.approx(1.0, abs=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 50.0), st.floats(0.01, 1.0))
def test_kappa_monotonicity(G, lam, bump):
    assert kappa(G, lam + bump) > kappa(G, lam)
    assert kappa(G + bump, lam) < kappa(G, lam)
