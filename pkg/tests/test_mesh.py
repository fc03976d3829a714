import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perimlmc.mesh import (
    MeshAlignmentError,
    MeshLevel,
    SizingError,
    build_bonds,
    build_hierarchy,
    coarsen_index_map,
    make_level,
    parent_index,
    partial_volume_factor,
)

BEAM = (0.35, 0.10)


def test_beam_hierarchy_node_counts():
    h = build_hierarchy(BEAM, 0.01, 4, 0.05, with_bonds=False)
    assert [lv.node_count for lv in h.levels] == [350, 1400, 5600, 22400, 89600]
    assert [lv.dx for lv in h.levels] == pytest.approx([0.01, 0.005, 0.0025, 0.00125, 0.000625])
    for lv in h.levels:
        assert lv.horizon == pytest.approx(math.pi * lv.dx, rel=1e-15)


def test_non_multiple_side_is_rejected():
    with pytest.raises(SizingError):
        make_level((0.35, 0.10), 0.03, 0, 0.05)
    with pytest.raises(SizingError):
        make_level((0.35, 0.10), 0.0, 0, 0.05)


def _brute_bonds(coords, horizon):
    out = set()
    for a in range(len(coords)):
        for b in range(a + 1, len(coords)):
            if np.hypot(*(coords[b] - coords[a])) <= horizon:
                out.add((a, b))
    return out


def test_bond_list_matches_brute_force():
    lv = make_level((0.12, 0.06), 0.01, 0, 0.05)
    b = lv.bonds
    assert set(zip(b.i.tolist(), b.j.tolist())) == _brute_bonds(lv.node_coords, lv.horizon)
    assert np.all(b.i < b.j)
    assert np.allclose(b.xi, np.linalg.norm(lv.node_coords[b.j] - lv.node_coords[b.i], axis=1))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 7), st.sampled_from([0.01, 0.005, 0.02]))
def test_grid_invariants(nx, ny, dx):
    lv = make_level((nx * dx, ny * dx), dx, 0, 0.05)
    assert lv.node_count == nx * ny
    b = lv.bonds
    assert np.all((b.xi > 0) & (b.xi <= lv.horizon))
    assert np.all((b.volume_factor >= 0) & (b.volume_factor <= 1))
    # no pair is listed twice
    assert len(set(zip(b.i.tolist(), b.j.tolist()))) == len(b)


def test_partial_volume_factor():
    dx, h = 1.0, math.pi
    xi = np.array([1.0, h - 0.5, h - 0.5 + 1e-9, h, h + 0.5, h + 0.6])
    lam = partial_volume_factor(xi, h, dx)
    assert lam[0] == 1.0 and lam[1] == 1.0
    assert lam[2] == pytest.approx(1.0, abs=1e-8)
    assert lam[3] == pytest.approx(0.5)
    assert lam[4] == pytest.approx(0.0) and lam[5] == 0.0


def test_coarsen_map_picks_designated_child():
    h = build_hierarchy(BEAM, 0.01, 3, 0.05, with_bonds=False)
    for lev in range(1, 4):
        cmap = h.coarsen_map(lev)
        fine, coarse = h[lev], h[lev - 1]
        assert len(cmap) == coarse.node_count
        assert len(np.unique(cmap.index)) == coarse.node_count
        off = fine.node_coords[cmap.index] - coarse.node_coords
        assert np.allclose(off, -0.5 * fine.dx, atol=1e-12)


def test_composed_map_equals_chained_maps():
    h = build_hierarchy(BEAM, 0.01, 3, 0.05, with_bonds=False)
    chained = h.coarsen_map(3).index[h.coarsen_map(2).index[h.coarsen_map(1).index]]
    assert np.array_equal(h.composed_map(3, 0), chained)


def test_parent_of_designated_child_is_the_coarse_node():
    h = build_hierarchy(BEAM, 0.01, 2, 0.05, with_bonds=False)
    for lev in (1, 2):
        par = parent_index(h[lev], h[lev - 1])
        assert np.array_equal(par[h.coarsen_map(lev).index], np.arange(h[lev - 1].node_count))
        # every coarse cell owns exactly four fine nodes
        assert np.all(np.bincount(par) == 4)


def test_misaligned_levels_raise():
    coarse = make_level((0.04, 0.04), 0.01, 0, 0.05, with_bonds=False)
    fine = make_level((0.0025, 0.0, 0.04, 0.04), 0.005, 1, 0.05, with_bonds=False)
    with pytest.raises(MeshAlignmentError):
        coarsen_index_map(fine, coarse)
    with pytest.raises(ValueError):
        coarsen_index_map(make_level((0.04, 0.04), 0.0025, 1, 0.05, with_bonds=False), coarse)


def test_summary_is_json():
    h = build_hierarchy(BEAM, 0.01, 1, 0.05)
    data = json.loads(h.to_json())
    assert data[0]["nodes"] == 350
    assert data[1]["nodes"] == 1400 and data[1]["bonds"] > 0


def test_single_node_has_no_bonds():
    lv = make_level((0.01, 0.01), 0.01, 0, 0.05, with_bonds=False)
    assert len(build_bonds(lv)) == 0


def test_two_nodes_beyond_horizon_have_no_bond():
    dx = 0.01
    coords = np.array([[0.0, 0.0], [1.1 * math.pi * dx, 0.0]])
    lv = MeshLevel(level=0, dx=dx, nx=2, ny=1, node_coords=coords, horizon=math.pi * dx, thickness=0.05)
    assert len(build_bonds(lv)) == 0


def test_interior_node_has_28_neighbours():
    lv = make_level((0.11, 0.11), 0.01, 0, 0.05)
    centre = 5 * 11 + 5
    b = lv.bonds
    assert int(np.count_nonzero(b.i == centre) + np.count_nonzero(b.j == centre)) == 28


def test_three_by_three_grid_bond_count():
    lv = make_level((0.03, 0.03), 0.01, 0, 0.05)
    assert len(lv.bonds) == len(_brute_bonds(lv.node_coords, lv.horizon)) == 36


def test_beam_level_one_bonds_match_vectorised_brute_force():
    lv = make_level(BEAM, 0.005, 1, 0.05)
    c = lv.node_coords
    d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    ii, jj = np.nonzero(np.triu(d <= lv.horizon, k=1))
    assert np.array_equal(lv.bonds.i, ii) and np.array_equal(lv.bonds.j, jj)


def test_single_level_hierarchy_has_no_maps():
    h = build_hierarchy(BEAM, 0.01, 0, 0.05, with_bonds=False)
    assert h.max_level == 0 and h.coarsen_maps == []


def test_square_hierarchy_maps_to_coincident_nodes():
    h = build_hierarchy((0.02, 0.02), 0.01, 1, 0.05, with_bonds=False)
    assert h[0].node_count == 4 and h[1].node_count == 16
    cmap = h.coarsen_map(1)
    # coarse centres (5, 5), (15, 5), (5, 15), (15, 15) mm -> fine centres 2.5 mm below-left
    assert cmap.index.tolist() == [0, 2, 8, 10]
    assert np.allclose(h[1].node_coords[cmap.index] * 1e3, [[2.5, 2.5], [12.5, 2.5], [2.5, 12.5], [12.5, 12.5]])


def test_one_dimensional_strip_map():
    coarse = make_level((0.04, 0.02), 0.02, 0, 0.05, with_bonds=False)
    fine = make_level((0.04, 0.02), 0.01, 1, 0.05, with_bonds=False)
    cmap = coarsen_index_map(fine, coarse)
    assert np.allclose(fine.node_coords[cmap.index], coarse.node_coords - 0.005, atol=1e-12 * fine.dx)


def test_identical_levels_rejected():
    lv = make_level(BEAM, 0.01, 0, 0.05, with_bonds=False)
    with pytest.raises(ValueError):
        coarsen_index_map(lv, lv)
