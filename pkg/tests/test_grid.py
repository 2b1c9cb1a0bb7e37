import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twolevel_lpbf import grid
from twolevel_lpbf.grid import LocalBox, MeshError


def unit_mesh(n=(1, 1, 1), **kw):
    return grid.Mesh(*(np.linspace(0, 1, k + 1) for k in n), **kw)


def test_single_cell_kuhn_split():
    m = unit_mesh()
    assert m.n_elements == 6 and m.n_nodes == 8
    assert all(grid.audit_mesh(m).values())
    np.testing.assert_allclose(m.volumes, 1 / 6)


def test_two_by_two_cells_conforming():
    m = unit_mesh((2, 2, 1))
    assert m.n_elements == 24
    f, _ = m.all_faces()
    keys = grid._face_keys(f, m.n_nodes)
    _, cnt = np.unique(keys, return_counts=True)
    assert set(cnt) == {1, 2}
    boundary = sum(len(v) for v in m.faces.values())
    assert boundary == np.sum(cnt == 1)
    assert all(grid.audit_mesh(m).values())


def test_plate_element_count():
    m = grid.build_global_mesh(((0, 0, 0), (0.1, 0.1, 0.012)), 4e-3, 4e-3)
    assert m.n_elements == 25 * 25 * 3 * 6


def test_non_dividing_h_rounds_cell_count_up():
    m = grid.build_global_mesh(((0, 0, 0), (0.03, 0.03, 0.012)), 4e-3, 4e-3)
    assert m.shape == (8, 8, 3)
    np.testing.assert_allclose(np.diff(m.xs), 3.75e-3)


def test_bad_extents():
    with pytest.raises(MeshError):
        grid.build_global_mesh(((0, 0, 0), (1, 1, 1)), 0.0, 0.1)
    with pytest.raises(MeshError):
        grid.build_global_mesh(((0, 0, 0), (1, 1, 1)), 0.5, 0.5,
                               powder_extent=((0, 0, 2), (1, 1, 3)), t_a=0.5)


def test_tags_on_plate_and_powder():
    m = grid.build_global_mesh(((0, 0, 0), (2, 2, 1)), 1, 1, powder_extent=((0, 0, 1), (2, 2, 2)), t_a=1)
    assert len(m.faces[grid.BOTTOM_PLATE]) == 8
    assert len(m.faces[grid.TOP_SURFACE]) == 8
    assert len(m.faces[grid.PLATE_LATERAL]) == 16
    assert len(m.faces[grid.POWDER_LATERAL]) == 16
    for tag in grid.GLOBAL_TAGS:
        area, normal = m.face_geometry(tag)
        assert np.all(area > 0)
    _, n = m.face_geometry(grid.TOP_SURFACE)
    np.testing.assert_allclose(n, [[0, 0, 1]] * 8, atol=1e-14)


def make_growth(n_cells=2):
    m = grid.build_global_mesh(((0, 0, 0), (n_cells, n_cells, 1.0)), 1.0, 1.0)
    return m, grid.start_growth(m, 0.5, 5)


def test_activation_adds_one_layer():
    m, g = make_growth()
    m1, g1, born = grid.activate_layer(m, g)
    assert len(born) == 4 * 6
    assert g1.n_act == 1 and g1.z_top == pytest.approx(1.5)
    np.testing.assert_array_equal(m1.nodes[: m.n_nodes], m.nodes)
    np.testing.assert_array_equal(m1.tets[: m.n_elements], m.tets)
    assert all(grid.audit_mesh(m1).values())


def test_successive_births_disjoint():
    m, g = make_growth()
    m, g, b1 = grid.activate_layer(m, g)
    m, g, b2 = grid.activate_layer(m, g)
    assert not set(b1) & set(b2)
    assert not set(g.born[0][1]) & set(g.born[1][1])


def test_top_tag_moves_up():
    m, g = make_growth()
    m1, g1, _ = grid.activate_layer(m, g)
    top = m1.nodes[m1.faces[grid.TOP_SURFACE]][..., 2]
    assert np.allclose(top, 1.5)
    old_top = m.faces[grid.TOP_SURFACE]
    # old top faces are now shared by two tets
    keys_now = grid._face_keys(m1.all_faces()[0], m1.n_nodes)
    oldk = grid._face_keys(old_top, m1.n_nodes)
    counts = dict(zip(*np.unique(keys_now, return_counts=True)))
    assert all(counts[k] == 2 for k in oldk)
    assert not np.intersect1d(oldk, grid._face_keys(m1.faces[grid.TOP_SURFACE], m1.n_nodes)).size


def test_activation_limit():
    m, g = make_growth()
    for _ in range(5):
        m, g, _ = grid.activate_layer(m, g)
    with pytest.raises(MeshError):
        grid.activate_layer(m, g)


def test_element_count_nondecreasing_and_volume_audit():
    m, g = make_growth(3)
    counts = [m.n_elements]
    for _ in range(4):
        m, g, _ = grid.activate_layer(m, g)
        counts.append(m.n_elements)
        assert grid.audit_mesh(m)["volume_sum"]
    assert np.all(np.diff(counts) > 0)


def test_local_unit_box():
    m = grid.build_local_mesh(LocalBox(0, 1, 0, 1, 1, 1, 1.0))
    assert m.n_elements == 6
    assert set(m.faces) >= {grid.GAMMA_LATERAL, grid.GAMMA_BOTTOM, grid.TOP_SURFACE}
    assert len(m.faces[grid.GAMMA_LATERAL]) == 8
    assert len(m.faces[grid.GAMMA_BOTTOM]) == 2 and len(m.faces[grid.TOP_SURFACE]) == 2


def test_local_box_cell_count():
    m = grid.build_local_mesh(LocalBox(0, 0.01, 0, 0.01, 0.005, 0.005, 1e-3))
    assert m.shape == (10, 10, 5) and m.n_elements == 3000


def test_local_box_flush_is_error():
    gm = grid.build_global_mesh(((0, 0, 0), (0.02, 0.02, 0.01)), 4e-3, 4e-3)
    with pytest.raises(MeshError):
        grid.build_local_mesh(LocalBox(0.0, 0.01, 0.005, 0.015, 0.01, 0.004, 1e-3), gm)
    grid.build_local_mesh(LocalBox(0.004, 0.016, 0.004, 0.016, 0.01, 0.004, 1e-3), gm)


def test_default_box_stays_one_cell_inside():
    gm = grid.build_global_mesh(((0, 0, 0), (0.02, 0.02, 0.004)), 4e-3, 4e-3)
    g = grid.start_growth(gm, 1e-3, 3)
    gm, g, _ = grid.activate_layer(gm, g)
    box = grid.default_local_box((0.001, 0.001, 0.004), (0.019, 0.019, 0.01), gm, g)
    assert box.x_lo == pytest.approx(0.004) and box.x_hi == pytest.approx(0.016)
    assert box.z_top == pytest.approx(0.005) and box.z_bottom == pytest.approx(0.004)


def test_shift_and_clamp():
    gm = grid.build_global_mesh(((0, 0, 0), (0.02, 0.02, 0.010)), 4e-3, 5e-3)
    g = grid.start_growth(gm, 1e-3, 10)
    gm, g, _ = grid.activate_layer(gm, g)
    box = LocalBox(0.005, 0.015, 0.005, 0.015, g.z_top, 5e-3, 1e-3, g.plate_top)
    assert box.z_bottom == pytest.approx(0.010)  # clamped at the plate top
    z0 = box.z_top
    for n in range(1, 8):
        gm, g, _ = grid.activate_layer(gm, g)
        box = grid.shift_local_box(box, g)
        assert box.z_top == pytest.approx(z0 + n * 1e-3)
        assert (box.x_lo, box.x_hi, box.depth) == (0.005, 0.015, 5e-3)
    assert box.z_bottom == pytest.approx(box.z_top - 5e-3)


def test_locate_nodes_and_centroids(rng):
    m = grid.build_global_mesh(((0, 0, 0), (0.02, 0.012, 0.008)), 4e-3, 2e-3)
    for nid in (0, 17, m.n_nodes - 1):
        e, b = grid.locate_point(m, m.nodes[nid])
        assert np.isclose(b.max(), 1.0) and m.tets[e][np.argmax(b)] == nid
    c = m.nodes[m.tets[5]].mean(axis=0)
    e, b = grid.locate_point(m, c)
    assert e == 5
    np.testing.assert_allclose(b, 0.25)


def test_locate_reconstruction(rng):
    m = grid.build_global_mesh(((0, 0, 0), (0.03, 0.03, 0.012)), 4e-3, 4e-3)
    lo, hi = m.extent
    p = rng.uniform(lo, hi, (1000, 3))
    e, b = grid.locate_points(m, p)
    assert b.min() >= -1e-12 and np.allclose(b.sum(axis=1), 1)
    rec = np.einsum("mi,mij->mj", b, m.nodes[m.tets[e]])
    assert np.max(np.abs(rec - p)) <= 1e-12 * np.max(np.abs(p))


def test_locate_outside_is_error():
    with pytest.raises(MeshError):
        grid.locate_point(unit_mesh(), (1.5, 0.5, 0.5))


def test_vtk_export(tmp_path):
    m = unit_mesh((2, 1, 1))
    p = tmp_path / "m.vtk"
    grid.write_vtk(p, m, {"temperature": np.arange(m.n_nodes, dtype=float)})
    text = p.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile Version")
    assert f"CELLS {m.n_elements} {5 * m.n_elements}" in text
    i = text.index(f"CELL_TYPES {m.n_elements}")
    assert set(text[i + 1:i + 1 + m.n_elements]) == {"10"}
    assert "SCALARS temperature double 1" in text


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3),
       st.lists(st.integers(1, 4), min_size=3, max_size=3))
def test_audits_hold_for_any_box(size, cells):
    m = grid.Mesh(*(np.linspace(0, s, n + 1) for s, n in zip(size, cells)))
    assert all(grid.audit_mesh(m).values())
    assert m.n_elements == 6 * np.prod(cells)
