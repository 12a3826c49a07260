import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from fieldconv import shapes
from fieldconv.errors import MeshParseError, MeshValidationError
from fieldconv.mesh import (TriMesh, farthest_point_sample, farthest_point_sample_graph, load_mesh,
                            normalize_unit_area, random_rotation, rigid_transform, save_off,
                            vertex_area_weights)

TRIANGLE_OFF = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"


def test_single_triangle_off(tmp_path):
    p = tmp_path / "tri.off"
    p.write_text(TRIANGLE_OFF)
    m = load_mesh(p)
    assert (m.n_vertices, m.n_faces) == (3, 1)
    assert m.boundary_flags.all()


def test_obj_zero_index_is_parse_error(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    with pytest.raises(MeshParseError):
        load_mesh(p)


def test_obj_ignores_normals_and_textures(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nusemtl x\nf 1/1/1 2/1/1 3/1/1\n")
    m = load_mesh(p)
    assert (m.n_vertices, m.n_faces) == (3, 1)


def test_icosahedron_round_trip(tmp_path):
    ico = shapes.icosahedron()
    assert (ico.n_vertices, ico.n_faces) == (12, 20)
    p = tmp_path / "ico.off"
    save_off(ico, p)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, ico.vertices)
    assert np.array_equal(back.faces, ico.faces)
    assert not back.boundary_flags.any()


def test_truncated_off_names_problem(tmp_path):
    p = tmp_path / "short.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(MeshParseError):
        load_mesh(p)


def test_non_manifold_edge_rejected():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    f = [[0, 1, 2], [1, 0, 3], [0, 1, 4]]  # edge 0-1 shared by three faces
    with pytest.raises(MeshValidationError, match="edge"):
        TriMesh(v, f)


def test_degenerate_face_rejected():
    with pytest.raises(MeshValidationError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])


def test_unreferenced_vertex_rejected():
    with pytest.raises(MeshValidationError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])


def test_inconsistent_orientation_rejected():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    with pytest.raises(MeshValidationError):
        TriMesh(v, [[0, 1, 2], [1, 2, 3]])


def test_normalize_square_of_side_two():
    sq = shapes.grid(2, 2, 2.0)
    m, scale = normalize_unit_area(sq)
    assert scale == pytest.approx(0.5, abs=1e-15)
    assert m.total_area() == pytest.approx(1.0, abs=1e-12)
    assert np.ptp(m.vertices[:, 0]) == pytest.approx(1.0, abs=1e-12)


def test_normalize_fixed_point():
    m, _ = normalize_unit_area(shapes.icosphere(1))
    again, scale = normalize_unit_area(m)
    assert scale == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(again.vertices, m.vertices, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 20.0))
def test_normalize_scale_covariant_and_idempotent(c):
    base = shapes.icosphere(1)
    a, _ = normalize_unit_area(base)
    b, _ = normalize_unit_area(base.with_vertices(base.vertices * c))
    assert np.allclose(a.vertices, b.vertices, rtol=0, atol=1e-12)
    bb, _ = normalize_unit_area(b)
    assert np.allclose(bb.vertices, b.vertices, rtol=0, atol=1e-12)


def test_zero_area_rejected():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(MeshValidationError):
        normalize_unit_area(m)


def test_equilateral_triangle_weights():
    s = 1.7
    m = TriMesh([[0, 0, 0], [s, 0, 0], [s / 2, s * math.sqrt(3) / 2, 0]], [[0, 1, 2]])
    want = math.sqrt(3) / 4 * s * s / 3
    assert np.allclose(vertex_area_weights(m), want, rtol=1e-14)


def test_grid_interior_weight_is_two_triangles():
    h = 0.3
    m = shapes.grid(5, 5, h)
    a = h * h / 2
    assert vertex_area_weights(m)[12] == pytest.approx(2 * a, rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weights_sum_and_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    m = shapes.fibonacci_sphere(int(rng.integers(20, 80)))
    w = vertex_area_weights(m)
    assert (w > 0).all()
    assert w.sum() == pytest.approx(m.total_area(), rel=1e-12)
    moved = rigid_transform(m, random_rotation(rng), rng.normal(size=3))
    assert np.allclose(vertex_area_weights(moved), w, rtol=0, atol=1e-10)


def test_fps_exhaustive_and_single():
    m = shapes.icosphere(1)
    allv = farthest_point_sample(m, m.n_vertices, seed=3)
    assert sorted(allv) == list(range(m.n_vertices))
    one = farthest_point_sample(m, 1, seed=3)
    assert one == farthest_point_sample(m, 1, seed=3) and len(one) == 1


def test_fps_path_graph():
    # five collinear vertices 0-1-2-3-4 with unit edges
    i = np.arange(4)
    g = sparse.csr_matrix((np.ones(4), (i, i + 1)), shape=(5, 5))
    g = g + g.T
    assert farthest_point_sample_graph(g, 2, first=0) == [0, 4]


def test_fps_deterministic_and_bounds():
    m = shapes.fibonacci_sphere(60)
    assert farthest_point_sample(m, 10, seed=5) == farthest_point_sample(m, 10, seed=5)
    with pytest.raises(ValueError):
        farthest_point_sample(m, 61)


def test_rigid_transform_examples():
    m = TriMesh([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2]])
    same = rigid_transform(m, np.eye(3))
    assert same.vertices.tobytes() == m.vertices.tobytes()
    Rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    assert np.allclose(rigid_transform(m, Rz).vertices[0], [0, 1, 0], atol=1e-15)
    with pytest.raises(ValueError, match="orthonormal"):
        rigid_transform(m, np.diag([1.0, 1.0, 1.1]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_transform_composes(seed):
    rng = np.random.default_rng(seed)
    m = shapes.icosahedron()
    R1, R2 = random_rotation(rng), random_rotation(rng)
    two = rigid_transform(rigid_transform(m, R1), R2)
    one = rigid_transform(m, R2 @ R1)
    assert np.allclose(two.vertices, one.vertices, rtol=0, atol=1e-12)
    assert np.array_equal(two.faces, m.faces)
