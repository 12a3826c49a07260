"""Procedural meshes: planar grids, polyhedral cones, spheres and star-shaped
surfaces obtained by radially projecting a sphere triangulation."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriMesh


def grid(nx: int, ny: int, h: float = 1.0) -> TriMesh:
    """Planar ``nx`` x ``ny`` vertex grid in z=0, every quad split along the
    same diagonal, so interior vertices have six incident triangles."""
    xs, ys = np.meshgrid(np.arange(nx) * h, np.arange(ny) * h)
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    return TriMesh(verts, faces)


def icosahedron(radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    v *= radius / np.linalg.norm(v[0])
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return TriMesh(v, f)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    base = icosahedron()
    verts = [tuple(p) for p in base.vertices]
    faces = [tuple(f) for f in base.faces.tolist()]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.asarray(verts) * radius
    return TriMesh(v, faces)


def fibonacci_sphere(n: int) -> TriMesh:
    """Unit sphere triangulated as the convex hull of ``n`` Fibonacci points."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5 ** 0.5) * k
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    hull = ConvexHull(pts)
    faces = hull.simplices.copy()
    a, b, c = (pts[faces[:, i]] for i in range(3))
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriMesh(pts, faces)


def project_sphere(sphere: TriMesh, sdf, r_max: float = 10.0, iters: int = 60) -> TriMesh:
    """Move each vertex of a unit-sphere mesh along its ray from the origin
    onto the zero set of ``sdf`` (bisection). The target must be star-shaped
    about the origin with ``sdf < 0`` inside."""
    dirs = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), r_max)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = sdf(dirs * mid[:, None]) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return sphere.with_vertices(dirs * (0.5 * (lo + hi))[:, None])


def superquadric_sdf(axes, exponent: float):
    """Implicit ``(sum |x_i / a_i|^n)^(1/n) - 1`` (not a true distance)."""
    a = np.asarray(axes, dtype=np.float64)

    def f(p):
        return np.sum(np.abs(p / a) ** exponent, axis=1) ** (1.0 / exponent) - 1.0

    return f


def capped_cylinder_sdf(radius: float, half_length: float, exponent: float = 8.0):
    def f(p):
        rad = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2) / radius
        ax = np.abs(p[:, 2]) / half_length
        return (rad ** exponent + ax ** exponent) ** (1.0 / exponent) - 1.0

    return f


def capsule_sdf(radius: float, half_length: float):
    """Cylinder of the given radius along z with hemispherical end caps; the
    straight part spans ``|z| <= half_length``."""
    def f(p):
        z = np.clip(p[:, 2], -half_length, half_length)
        return np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2 + (p[:, 2] - z) ** 2) - radius

    return f


def bumpy_sphere_sdf(centers, heights, width: float):
    """Unit sphere with Gaussian radial bumps at unit ``centers``."""
    c = np.asarray(centers, dtype=np.float64)
    h = np.asarray(heights, dtype=np.float64)

    def f(p):
        r = np.linalg.norm(p, axis=1)
        d = p / np.maximum(r, 1e-300)[:, None]
        ang = np.arccos(np.clip(d @ c.T, -1.0, 1.0))
        radius = 1.0 + (h * np.exp(-(ang / width) ** 2)).sum(axis=1)
        return r - radius

    return f


def pyramid_cone(sides: int, rings: int, half_angle: float, slant: float = 1.0) -> TriMesh:
    """Polyhedral cone: apex (vertex 0) over ``sides`` planar faces, each face
    subdivided into ``rings`` bands. Only the apex carries angle deficit."""
    verts = [(0.0, 0.0, 0.0)]
    ring_start = []
    for k in range(1, rings + 1):
        s = slant * k / rings
        ring_start.append(len(verts))
        for j in range(sides):
            t = 2 * np.pi * j / sides
            verts.append((s * np.sin(half_angle) * np.cos(t), s * np.sin(half_angle) * np.sin(t), -s * np.cos(half_angle)))
    faces = []
    # apex at origin, cone opens downward; outward normal points away from the axis
    s0 = ring_start[0]
    for j in range(sides):
        faces.append((0, s0 + j, s0 + (j + 1) % sides))
    for k in range(rings - 1):
        a0, b0 = ring_start[k], ring_start[k + 1]
        for j in range(sides):
            j1 = (j + 1) % sides
            faces.append((a0 + j, b0 + j1, a0 + j1))
            faces.append((a0 + j, b0 + j, b0 + j1))
    return TriMesh(verts, faces)


def apex_angle_deficit(mesh: TriMesh, vertex: int) -> float:
    total = 0.0
    for face in mesh.faces:
        if vertex in face:
            k = list(face).index(vertex)
            p = mesh.vertices[vertex]
            a = mesh.vertices[face[(k + 1) % 3]] - p
            b = mesh.vertices[face[(k + 2) % 3]] - p
            total += np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)
    return 2 * np.pi - total
