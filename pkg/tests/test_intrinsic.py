import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldconv import shapes
from fieldconv.errors import CacheFormatError, CacheMismatchError, NeighborhoodError
from fieldconv.harness.invariants import cone_holonomy, flat_grid_errors
from fieldconv.intrinsic import (build_frames, cache_to_bytes, compute_cache, gauge_transform, load_cache,
                                 log_map_ball, save_cache, wrap_angle)
from fieldconv.mesh import normalize_unit_area, random_rotation, rigid_transform


def test_flat_frames():
    m = shapes.grid(6, 5, 0.2)
    fr = build_frames(m)
    assert np.allclose(np.abs(fr.normal[:, 2]), 1.0, atol=1e-12)
    assert np.allclose(fr.e1[:, 2], 0.0, atol=1e-12) and np.allclose(fr.e2[:, 2], 0.0, atol=1e-12)


def test_e1_follows_lowest_neighbor():
    m = shapes.grid(4, 4, 1.0)
    fr = build_frames(m)
    # vertex 0 has neighbors 1 (east), 4 (north) and 5; the lowest is 1
    assert fr.ref_neighbor[0] == 1
    assert np.allclose(fr.e1[0], [1, 0, 0], atol=1e-15)


def test_frames_orthonormal_and_sphere_tangent():
    m = shapes.icosphere(2)
    fr = build_frames(m)
    assert np.allclose(np.einsum("ij,ij->i", fr.e1, fr.e2), 0, atol=1e-10)
    assert np.allclose(np.linalg.norm(fr.e1, axis=1), 1, atol=1e-10)
    assert np.allclose(np.linalg.norm(fr.e2, axis=1), 1, atol=1e-10)
    assert np.allclose(np.cross(fr.e1, fr.e2), fr.normal, atol=1e-10)
    pos = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    tilt = np.abs(np.arcsin(np.clip(np.einsum("ij,ij->i", fr.e1, pos), -1, 1)))
    assert tilt.max() <= 0.1


def test_log_map_reference_neighbor_exact():
    h = 0.1
    m = shapes.grid(9, 9, h)
    fr = build_frames(m)
    src = 40
    ref = int(fr.ref_neighbor[src])
    rec = {q: (r, th) for q, r, th in log_map_ball(m, fr, src, 0.35)}
    d = np.linalg.norm(m.vertices[ref] - m.vertices[src])
    assert rec[ref][0] == pytest.approx(d, abs=1e-9)
    assert rec[ref][1] == pytest.approx(0.0, abs=1e-9)


def test_log_map_tiny_radius_is_empty():
    m = shapes.grid(5, 5, 1.0)
    assert log_map_ball(m, build_frames(m), 12, 0.5) == []


def test_flat_log_map_within_bounds():
    rerr, aerr = flat_grid_errors(n=41, ball_edges=10)
    assert rerr <= 0.05 and aerr <= 0.05


def _check_cache(cache):
    assert np.allclose(np.bincount(cache.center, cache.w, minlength=cache.n_vertices), 1.0, atol=1e-10)
    assert (cache.r > 0).all() and (cache.r <= cache.epsilon).all()
    for arr in (cache.theta_qp, cache.theta_pq, cache.phi_pq):
        assert (arr > -math.pi).all() and (arr <= math.pi).all()
    resid = wrap_angle(cache.theta_pq - (cache.theta_qp + cache.phi_pq + math.pi))
    assert np.abs(resid).max() <= 1e-12
    pairs = set(zip(cache.center.tolist(), cache.nbr.tolist()))
    assert all((q, p) in pairs for p, q in pairs)
    for p in range(cache.n_vertices):
        nb = cache.nbr[cache.offsets[p]:cache.offsets[p + 1]]
        assert (np.diff(nb) > 0).all() and p not in nb


def test_cache_invariants(ellipsoid_cache):
    _check_cache(ellipsoid_cache)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cache_invariants_random_surfaces(seed):
    from fieldconv.harness.invariants import random_mesh
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng, 150)
    _check_cache(compute_cache(mesh, float(rng.uniform(0.2, 0.35)), expand_isolated=True))


def test_aligned_flat_transport_is_identity():
    n = 15
    cache = compute_cache(shapes.grid(n, n, 1.0 / (n - 1)), 0.25)
    aligned = gauge_transform(cache, -np.arctan2(cache.e1[:, 1], cache.e1[:, 0]))
    assert np.abs(aligned.phi_pq).max() <= 1e-9


def test_cone_holonomy_matches_deficit():
    sides = 8
    cone = shapes.pyramid_cone(sides, 6, 1.0)
    deficit = shapes.apex_angle_deficit(cone, 0)
    hol = cone_holonomy(compute_cache(cone, 0.45), list(range(1 + sides, 1 + 2 * sides)))
    assert abs(hol - deficit) <= 0.1 * deficit


def test_gauge_transform_law(ellipsoid_cache, rng):
    c = ellipsoid_cache
    alpha = rng.uniform(-np.pi, np.pi, c.n_vertices)
    g = gauge_transform(c, alpha)
    p, q = c.center, c.nbr
    assert np.allclose(wrap_angle(g.theta_qp - (c.theta_qp - alpha[q])), 0, atol=1e-12)
    assert np.allclose(wrap_angle(g.theta_pq - (c.theta_pq - alpha[p])), 0, atol=1e-12)
    assert np.allclose(wrap_angle(g.phi_pq - (c.phi_pq + alpha[q] - alpha[p])), 0, atol=1e-12)
    assert np.array_equal(g.r, c.r) and np.array_equal(g.w, c.w)


def test_rigid_motion_invariance(rng):
    mesh = normalize_unit_area(shapes.fibonacci_sphere(80))[0]
    moved = rigid_transform(mesh, random_rotation(rng), rng.normal(size=3))
    a, b = compute_cache(mesh, 0.3), compute_cache(moved, 0.3)
    assert np.array_equal(a.nbr, b.nbr)
    assert np.allclose(a.r, b.r, rtol=0, atol=1e-12) and np.allclose(a.w, b.w, rtol=0, atol=1e-12)
    # frames ride along with the mesh, so the per-vertex rotation is zero
    for k in ("theta_qp", "theta_pq", "phi_pq"):
        assert np.abs(wrap_angle(getattr(a, k) - getattr(b, k))).max() <= 1e-9


def test_empty_neighborhood_is_error_unless_expanded():
    m = shapes.grid(5, 5, 1.0)
    with pytest.raises(NeighborhoodError) as exc:
        compute_cache(m, 0.5)
    assert exc.value.vertices
    cache = compute_cache(m, 0.5, expand_isolated=True)
    assert np.diff(cache.offsets).min() >= 1


def test_round_trip_and_determinism(tmp_path, ellipsoid, ellipsoid_cache):
    p1, p2 = tmp_path / "a.fcpc", tmp_path / "b.fcpc"
    save_cache(ellipsoid_cache, p1)
    save_cache(compute_cache(ellipsoid, 0.3), p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_cache(p1, ellipsoid)
    assert back.records_equal(ellipsoid_cache)


def test_cache_header_layout(ellipsoid_cache):
    data = cache_to_bytes(ellipsoid_cache)
    assert data[:4] == b"FCPC"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:12], "little") == ellipsoid_cache.n_vertices
    per_vertex = 6 * 8 + 4
    per_record = 4 + 5 * 8
    header = 4 + 4 + 4 + 8 + 32
    assert len(data) == header + ellipsoid_cache.n_vertices * per_vertex + ellipsoid_cache.n_pairs * per_record


def test_bad_magic_truncation_and_mismatch(tmp_path, ellipsoid, ellipsoid_cache):
    p = tmp_path / "c.fcpc"
    save_cache(ellipsoid_cache, p)
    data = p.read_bytes()
    (tmp_path / "magic.fcpc").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CacheFormatError):
        load_cache(tmp_path / "magic.fcpc")
    (tmp_path / "short.fcpc").write_bytes(data[:-7])
    with pytest.raises(CacheFormatError):
        load_cache(tmp_path / "short.fcpc")
    other = ellipsoid.with_vertices(ellipsoid.vertices * 1.001)
    with pytest.raises(CacheMismatchError):
        load_cache(p, other)
