"""Triangle meshes: validation, OBJ/OFF I/O, unit-area normalization, area
weights, farthest point sampling and rigid motions."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import MeshParseError, MeshValidationError


class TriMesh:
    """Indexed, edge-manifold, consistently oriented triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (V, 3)
    faces : array_like of int, shape (F, 3)
        Vertex indices, counter-clockwise when seen from outside.

    The arrays are copied and made read-only. Construction validates the mesh
    and raises :class:`MeshValidationError` naming the offending element.
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshValidationError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            if f.size == 0:
                f = f.reshape(0, 3)
            else:
                raise MeshValidationError(f"faces must have shape (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise MeshValidationError(f"vertex {bad} has a non-finite coordinate")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self.boundary_flags = _validate(v, f)
        self.boundary_flags.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (E, 2)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse adjacency with Euclidean edge lengths."""
        e = self.edges()
        length = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        g = sparse.coo_matrix(
            (np.concatenate([length, length]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(n, n),
        )
        return g.tocsr()

    def content_hash(self) -> bytes:
        """SHA-256 over the little-endian vertex (f64) and face (u32) buffers."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<u4").tobytes())
        return h.digest()

    def __repr__(self):
        return f"TriMesh(|V|={self.n_vertices}, |F|={self.n_faces})"


def _validate(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    for i, face in enumerate(f):
        if face.min() < 0 or face.max() >= n:
            raise MeshValidationError(f"face {i} references a vertex index outside [0, {n})")
        if face[0] == face[1] or face[1] == face[2] or face[0] == face[2]:
            raise MeshValidationError(f"face {i} is degenerate (repeated vertex index)")
    used = np.zeros(n, dtype=bool)
    used[f.ravel()] = True
    if not used.all():
        raise MeshValidationError(f"vertex {int(np.argmin(used))} is not referenced by any face")

    directed: dict[tuple[int, int], int] = {}
    undirected: dict[tuple[int, int], list[int]] = {}
    for i, (a, b, c) in enumerate(f.tolist()):
        for s, t in ((a, b), (b, c), (c, a)):
            if (s, t) in directed:
                key = (min(s, t), max(s, t))
                if len(undirected[key]) >= 2:
                    raise MeshValidationError(f"edge {key} is shared by more than two faces (face {i})")
                raise MeshValidationError(
                    f"face {i} is oriented inconsistently with face {directed[(s, t)]} across edge ({s}, {t})"
                )
            directed[(s, t)] = i
            key = (min(s, t), max(s, t))
            faces_on_edge = undirected.setdefault(key, [])
            faces_on_edge.append(i)
            if len(faces_on_edge) > 2:
                raise MeshValidationError(f"edge {key} is shared by more than two faces (face {i})")

    boundary = np.zeros(n, dtype=bool)
    for (a, b), fs in undirected.items():
        if len(fs) == 1:
            boundary[a] = boundary[b] = True
    return boundary


# ---------------------------------------------------------------------------
# File I/O

def load_mesh(path, format: str | None = None) -> TriMesh:
    """Read an OBJ (``v``/``f`` records only) or OFF file.

    ``format`` defaults to the file suffix.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    if fmt == "OBJ":
        v, f = _parse_obj(text)
    elif fmt == "OFF":
        v, f = _parse_off(text)
    else:
        raise MeshParseError(f"unsupported mesh format {fmt!r}")
    return TriMesh(v, f)


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"line {lineno}: bad vertex coordinate") from None
        elif tag == "f":
            if len(parts) != 4:
                raise MeshParseError(f"line {lineno}: only triangular faces are supported")
            idx = []
            for tok in parts[1:]:
                try:
                    k = int(tok.split("/")[0])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: bad face index {tok!r}") from None
                if k == 0:
                    raise MeshParseError(f"line {lineno}: OBJ face indices are 1-based, got 0")
                idx.append(k - 1 if k > 0 else len(verts) + k)
            faces.append(idx)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_off(text: str):
    tokens_by_line = []
    for line in text.splitlines():
        toks = line.split("#", 1)[0].split()
        if toks:
            tokens_by_line.append(toks)
    if not tokens_by_line or not tokens_by_line[0][0].endswith("OFF"):
        raise MeshParseError("missing OFF header")
    header = tokens_by_line[0][1:]
    rest = tokens_by_line[1:]
    if not header:
        if not rest:
            raise MeshParseError("missing OFF element counts")
        header, rest = rest[0], rest[1:]
    try:
        nv, nf = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise MeshParseError("bad OFF element counts") from None
    if len(rest) < nv + nf:
        raise MeshParseError(f"OFF file truncated: expected {nv} vertices and {nf} faces")
    try:
        verts = [[float(x) for x in rest[i][:3]] for i in range(nv)]
    except ValueError:
        raise MeshParseError("bad OFF vertex coordinate") from None
    if any(len(p) != 3 for p in verts):
        raise MeshParseError("OFF vertex needs 3 coordinates")
    faces = []
    for j in range(nf):
        toks = rest[nv + j]
        try:
            k = int(toks[0])
            idx = [int(x) for x in toks[1:1 + k]]
        except ValueError:
            raise MeshParseError(f"bad OFF face record {j}") from None
        if k != 3 or len(idx) != 3:
            raise MeshParseError(f"OFF face {j}: only triangular faces are supported")
        faces.append(idx)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_off(mesh: TriMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Geometry

def normalize_unit_area(mesh: TriMesh) -> tuple[TriMesh, float]:
    """Scale positions about the origin so the total surface area is 1.

    Returns the normalized mesh and the applied scale ``1/sqrt(area)``.
    """
    area = mesh.total_area()
    if not area > 0:
        raise MeshValidationError("mesh has zero surface area")
    scale = 1.0 / np.sqrt(area)
    if scale == 1.0:
        return mesh, 1.0
    return mesh.with_vertices(mesh.vertices * scale), float(scale)


def vertex_area_weights(mesh: TriMesh) -> np.ndarray:
    """One third of each vertex's one-ring area."""
    third = mesh.face_areas() / 3.0
    w = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(w, mesh.faces[:, k], third)
    return w


def rigid_transform(mesh: TriMesh, rotation, translation=(0.0, 0.0, 0.0)) -> TriMesh:
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), rtol=0.0, atol=1e-10):
        raise ValueError("rotation must be a 3x3 orthonormal matrix")
    if t.shape != (3,):
        raise ValueError("translation must be a 3-vector")
    return mesh.with_vertices(mesh.vertices @ R.T + t)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (QR of a Gaussian matrix, det fixed to +1)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# Sampling and graph distances

def graph_distances(mesh: TriMesh, sources=None) -> np.ndarray:
    """Dijkstra distances along mesh edges from ``sources`` (all vertices if None)."""
    return csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=sources)


def farthest_point_sample_graph(graph, k: int, seed: int = 0, first: int | None = None) -> list[int]:
    """Farthest point sampling on a weighted graph (sparse adjacency)."""
    graph = sparse.csr_matrix(graph)
    n = graph.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    chosen = [int(first)]
    mind = csgraph.dijkstra(graph, directed=False, indices=first)
    for _ in range(k - 1):
        masked = np.where(np.isinf(mind), np.finfo(np.float64).max, mind)
        masked[chosen] = -1.0
        nxt = int(np.argmax(masked))  # first maximum = smallest index on ties
        chosen.append(nxt)
        mind = np.minimum(mind, csgraph.dijkstra(graph, directed=False, indices=nxt))
    return chosen


def farthest_point_sample(mesh: TriMesh, k: int, seed: int = 0, first: int | None = None) -> list[int]:
    """Farthest point sampling under edge-graph Dijkstra distance.

    The first index comes from ``numpy.random.default_rng(seed)`` unless
    ``first`` is given; ties go to the smallest vertex index.
    """
    return farthest_point_sample_graph(mesh.edge_graph(), k, seed=seed, first=first)
