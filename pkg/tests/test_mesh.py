import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biotdg.mesh import INTERIOR, MeshError, build_mesh, face_adjacency


def test_single_cell_counts():
    m = build_mesh(1, 1, 1.0, 1.0)
    assert m.n_cells == 1
    assert m.n_faces == 4
    assert len(m.boundary_faces()) == 4


def test_two_by_two_counts():
    m = build_mesh(2, 2, 1.0, 1.0)
    assert m.n_cells == 4
    assert m.n_faces == 12
    assert len(m.boundary_faces()) == 8
    assert len(m.interior_faces()) == 4


def test_uniform_partition_area():
    m = build_mesh(3, 2, 3.0, 2.0)
    assert m.n_cells == 6
    np.testing.assert_allclose(m.cell_area, 1.0)
    assert m.cell_area.sum() == pytest.approx(6.0, abs=1e-14)


@pytest.mark.parametrize("dims", [(0, 1, 1.0, 1.0), (1, -2, 1.0, 1.0), (1, 1, 0.0, 1.0), (2, 2, 1.0, -1.0), (1.5, 1, 1, 1)])
def test_rejects_bad_dimensions(dims):
    with pytest.raises(MeshError):
        build_mesh(*dims)


def test_single_cell_left_face():
    m = build_mesh(1, 1)
    left = m.boundary_faces("left")
    assert len(left) == 1
    assert face_adjacency(m, int(left[0])) == (0, None, (-1.0, 0.0))


def test_middle_vertical_face_points_left_to_right():
    m = build_mesh(2, 1)
    vertical = [f for f in range(m.n_faces) if not m.face_horizontal[f]]
    middle = [f for f in vertical if m.face_tag[f] == INTERIOR]
    assert len(middle) == 1
    assert face_adjacency(m, middle[0]) == (0, 1, (1.0, 0.0))


def test_interior_faces_with_plus_cell():
    m = build_mesh(2, 2)
    with_plus = [f for f in range(m.n_faces) if face_adjacency(m, f)[1] is not None]
    assert len(with_plus) == 4


def test_face_adjacency_out_of_range():
    m = build_mesh(2, 2)
    with pytest.raises(IndexError):
        face_adjacency(m, m.n_faces)
    with pytest.raises(IndexError):
        face_adjacency(m, -1)


def test_documented_face_order():
    m = build_mesh(3, 2, 3.0, 2.0)
    nh = 3 * 3
    assert m.face_horizontal[:nh].all() and not m.face_horizontal[nh:].any()
    # horizontal faces row line by row line, vertical faces column line by column line
    np.testing.assert_allclose(m.face_center[:3, 1], 0.0)
    np.testing.assert_allclose(m.face_center[3:6, 1], 1.0)
    np.testing.assert_allclose(m.face_center[nh:nh + 2, 0], 0.0)
    np.testing.assert_allclose(m.face_center[nh + 2:nh + 4, 0], 1.0)


def test_mesh_is_read_only():
    m = build_mesh(2, 2)
    with pytest.raises(ValueError):
        m.face_normal[0, 0] = 3.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_mesh_invariants(nx, ny, lx, ly):
    m = build_mesh(nx, ny, lx, ly)
    assert m.n_cells == nx * ny
    assert m.n_faces == nx * (ny + 1) + (nx + 1) * ny
    assert m.cell_area.sum() == pytest.approx(lx * ly, rel=1e-13)
    interior = m.face_tag == INTERIOR
    assert np.all(m.face_cells[interior] >= 0)
    assert np.all(m.face_cells[~interior, 1] == -1)
    assert np.all(m.face_cells[~interior, 0] >= 0)
    np.testing.assert_allclose(np.linalg.norm(m.face_normal, axis=1), 1.0)

    # outward normals of the two neighbours are opposite on interior faces
    for f in np.flatnonzero(interior)[:20]:
        minus, plus, n = face_adjacency(m, int(f))
        slot_m = list(m.cell_faces[minus]).index(f)
        slot_p = list(m.cell_faces[plus]).index(f)
        out_m = m.cell_face_sign[minus, slot_m] * np.asarray(n)
        out_p = m.cell_face_sign[plus, slot_p] * np.asarray(n)
        np.testing.assert_array_equal(out_m, -out_p)

    # discrete divergence theorem per cell
    out = m.cell_face_sign[..., None] * m.face_normal[m.cell_faces] * m.face_length[m.cell_faces][..., None]
    np.testing.assert_allclose(out.sum(axis=1), 0.0, atol=1e-12 * max(lx, ly))

    # every cell sits in exactly its four faces
    counts = np.bincount(m.face_cells[m.face_cells >= 0], minlength=m.n_cells)
    np.testing.assert_array_equal(counts, 4)
