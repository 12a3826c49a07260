"""Tangent frames, geodesic balls, logarithm maps and transport angles.

The log map from a source vertex is a Dijkstra wavefront in which every newly
reached vertex is placed in the source's tangent plane by unfolding the
triangle it shares with two already-placed vertices. Transport angles are
derived from the two log maps of a pair, so ``theta_pq = theta_qp + phi_pq + pi``
holds for every stored record.
"""

from __future__ import annotations

import cmath
import heapq
import io
import math
import struct
import weakref
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheFormatError, CacheMismatchError, MeshValidationError, NeighborhoodError
from .mesh import TriMesh

MAGIC = b"FCPC"
VERSION = 1

RECORD_DTYPE = np.dtype([
    ("q", "<u4"), ("w", "<f8"), ("r", "<f8"),
    ("theta_qp", "<f8"), ("theta_pq", "<f8"), ("phi_pq", "<f8"),
])


def wrap_angle(x):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2 * np.pi)


def _wrap(x: float) -> float:
    return math.pi - (math.pi - x) % (2 * math.pi)


# ---------------------------------------------------------------------------
# One-ring topology

class _Topology:
    """Per-vertex fans and unfolding records derived once per mesh."""

    def __init__(self, mesh: TriMesh):
        n = mesh.n_vertices
        V = mesh.vertices
        succ: list[dict[int, int]] = [dict() for _ in range(n)]
        corner: list[dict[int, float]] = [dict() for _ in range(n)]
        opp: list[list[tuple]] = [[] for _ in range(n)]
        lengths: dict[tuple[int, int], float] = {}

        def length(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in lengths:
                lengths[key] = float(np.linalg.norm(V[a] - V[b]))
            return lengths[key]

        for a, b, c in mesh.faces.tolist():
            for p, s, t in ((a, b, c), (b, c, a), (c, a, b)):
                succ[p][s] = t
                u, v = V[s] - V[p], V[t] - V[p]
                corner[p][s] = math.atan2(float(np.linalg.norm(np.cross(u, v))), float(u @ v))
                opp[p].append((s, t, length(p, s), length(p, t), length(s, t)))

        self.lengths = lengths
        self.opp = opp
        self.rings: list[list[int]] = []
        self.ring_angles: list[list[float]] = []
        self.closed: list[bool] = []
        for p in range(n):
            nxt = succ[p]
            preds = set(nxt.values())
            starts = [s for s in nxt if s not in preds]
            if len(starts) > 1:
                raise MeshValidationError(f"vertex {p} is non-manifold (its faces form {len(starts)} fans)")
            closed = not starts
            start = min(nxt) if closed else starts[0]
            ring, cum, acc = [start], [0.0], 0.0
            cur = start
            while cur in nxt:
                acc += corner[p][cur]
                cur = nxt[cur]
                if cur == start:
                    break
                ring.append(cur)
                cum.append(acc)
            n_nbrs = len(set(nxt) | preds)
            if len(ring) != n_nbrs:
                raise MeshValidationError(f"vertex {p} is non-manifold (its faces form several fans)")
            if closed:
                total = acc
                scale = 2 * math.pi / total
            else:
                scale = 1.0
            self.rings.append(ring)
            self.ring_angles.append([c * scale for c in cum])
            self.closed.append(closed)


_TOPOLOGY_CACHE: "weakref.WeakKeyDictionary[TriMesh, _Topology]" = weakref.WeakKeyDictionary()


def _topology(mesh: TriMesh) -> _Topology:
    topo = _TOPOLOGY_CACHE.get(mesh)
    if topo is None:
        topo = _Topology(mesh)
        _TOPOLOGY_CACHE[mesh] = topo
    return topo


# ---------------------------------------------------------------------------
# Frames

@dataclass(frozen=True)
class TangentFrame:
    """Per-vertex orthonormal tangent basis; ``e1`` follows the edge to the
    lowest-index neighbor (``ref_neighbor``) projected into the tangent plane."""

    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    ref_neighbor: np.ndarray


def build_frames(mesh: TriMesh) -> TangentFrame:
    topo = _topology(mesh)
    V = mesh.vertices
    f = mesh.faces
    fn = np.cross(V[f[:, 1]] - V[f[:, 0]], V[f[:, 2]] - V[f[:, 0]])
    normal = np.zeros_like(V)
    for k in range(3):
        np.add.at(normal, f[:, k], fn)
    nlen = np.linalg.norm(normal, axis=1)
    if np.any(nlen == 0):
        raise MeshValidationError(f"vertex {int(np.argmin(nlen))} has a degenerate normal")
    normal /= nlen[:, None]
    ref = np.array([min(r) for r in topo.rings], dtype=np.int64)
    d = V[ref] - V
    d -= np.einsum("ij,ij->i", d, normal)[:, None] * normal
    dlen = np.linalg.norm(d, axis=1)
    if np.any(dlen == 0):
        raise MeshValidationError(f"vertex {int(np.argmin(dlen))}: reference edge is parallel to the normal")
    e1 = d / dlen[:, None]
    e2 = np.cross(normal, e1)
    return TangentFrame(e1=e1, e2=e2, normal=normal, ref_neighbor=ref)


# ---------------------------------------------------------------------------
# Log map

def _unfold(P: complex, Q: complex, lp: float, lq: float, base: float) -> complex:
    """Planar point at distances (lp, lq) from (P, Q), left of P->Q."""
    x = (lp * lp - lq * lq + base * base) / (2.0 * base)
    y = math.sqrt(max(lp * lp - x * x, 0.0))
    d = Q - P
    return P + d / abs(d) * complex(x, y)


def log_map_ball(mesh: TriMesh, frames: TangentFrame, source: int, epsilon: float) -> list[tuple[int, float, float]]:
    """Polar coordinates ``(q, r_pq, theta_pq)`` of ``log_p q`` for every vertex
    ``q != p`` whose approximate geodesic distance from ``p`` is at most
    ``epsilon``, sorted by ``q``. Angles are measured from ``frames.e1``."""
    topo = _topology(mesh)
    p = int(source)
    ring = topo.rings[p]
    angles = topo.ring_angles[p]
    ref = int(frames.ref_neighbor[p])
    a0 = angles[ring.index(ref)]

    pos: dict[int, complex] = {p: 0j}
    dist: dict[int, float] = {p: 0.0}
    fixed = {p}
    heap: list[tuple[float, int]] = []
    lengths = topo.lengths
    for q, a in zip(ring, angles):
        r = lengths[(p, q) if p < q else (q, p)]
        pos[q] = cmath.rect(r, a - a0)
        dist[q] = r
        fixed.add(q)
        heapq.heappush(heap, (r, q))

    done = {p}
    opp = topo.opp
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if d > epsilon:
            break
        done.add(u)
        Uu = pos[u]
        for a, b, lua, lub, lab in opp[u]:
            if a in done:
                if b in fixed or b in done:
                    continue
                c = _unfold(Uu, pos[a], lub, lab, lua)
                tgt = b
            elif b in done:
                if a in fixed:
                    continue
                c = _unfold(pos[b], Uu, lab, lua, lub)
                tgt = a
            else:
                continue
            dc = abs(c)
            if dc < dist.get(tgt, math.inf):
                dist[tgt] = dc
                pos[tgt] = c
                heapq.heappush(heap, (dc, tgt))

    out = []
    for q in sorted(done):
        if q == p:
            continue
        z = pos[q]
        out.append((q, abs(z), _wrap(math.atan2(z.imag, z.real))))
    return out


# ---------------------------------------------------------------------------
# Cache

@dataclass(frozen=True)
class NeighborRecord:
    q: int
    w: float
    r: float
    theta_qp: float
    theta_pq: float
    phi_pq: float


@dataclass(frozen=True, eq=False)
class IntrinsicCache:
    """Geodesic-ball records in compressed row form.

    Records for center ``p`` occupy ``offsets[p]:offsets[p+1]`` of the flat
    arrays and are sorted by neighbor index ``nbr``.
    """

    epsilon: float
    mesh_hash: bytes
    e1: np.ndarray
    e2: np.ndarray
    offsets: np.ndarray
    nbr: np.ndarray
    w: np.ndarray
    r: np.ndarray
    theta_qp: np.ndarray
    theta_pq: np.ndarray
    phi_pq: np.ndarray
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_pairs(self) -> int:
        return len(self.nbr)

    @property
    def center(self) -> np.ndarray:
        """Center vertex of every record."""
        c = self._memo.get("center")
        if c is None:
            c = np.repeat(np.arange(self.n_vertices), np.diff(self.offsets))
            self._memo["center"] = c
        return c

    def neighbors(self, p: int) -> list[NeighborRecord]:
        s = slice(self.offsets[p], self.offsets[p + 1])
        return [
            NeighborRecord(int(q), float(w), float(r), float(a), float(b), float(c))
            for q, w, r, a, b, c in zip(self.nbr[s], self.w[s], self.r[s], self.theta_qp[s], self.theta_pq[s], self.phi_pq[s])
        ]

    def check_mesh(self, mesh: TriMesh) -> None:
        if mesh.content_hash() != self.mesh_hash:
            raise CacheMismatchError("cache was computed from a different mesh (hash mismatch)")
        if mesh.n_vertices != self.n_vertices:
            raise CacheMismatchError("cache vertex count does not match mesh")

    def records_equal(self, other: "IntrinsicCache") -> bool:
        """Bitwise equality of all stored data."""
        if self.epsilon != other.epsilon or self.mesh_hash != other.mesh_hash:
            return False
        names = ("e1", "e2", "offsets", "nbr", "w", "r", "theta_qp", "theta_pq", "phi_pq")
        return all(
            getattr(self, k).shape == getattr(other, k).shape
            and getattr(self, k).tobytes() == getattr(other, k).tobytes()
            for k in names
        )


def assemble_cache(mesh: TriMesh, frames: TangentFrame, weights, epsilon: float, expand_isolated: bool = False) -> IntrinsicCache:
    """Run the log map from every vertex and combine the two directions of
    every pair.

    A pair is kept only when each endpoint reached the other. Radii are
    averaged, ``phi_pq = theta_pq + pi - theta_qp`` and the area weights of
    the kept neighbors of each center are normalized to sum to one.

    Raises :class:`NeighborhoodError` listing vertices left without neighbors,
    unless ``expand_isolated`` is set, in which case such vertices receive
    their one-ring.
    """
    if not epsilon > 0:
        raise NeighborhoodError("epsilon must be positive; every neighborhood is empty", range(mesh.n_vertices))
    n = mesh.n_vertices
    weights = np.asarray(weights, dtype=np.float64)
    logs = [dict((q, (r, t)) for q, r, t in log_map_ball(mesh, frames, p, epsilon)) for p in range(n)]

    def pairs_of(p):
        return [q for q in logs[p] if p in logs[q]]

    kept = [pairs_of(p) for p in range(n)]
    isolated = [p for p in range(n) if not kept[p]]
    if isolated:
        if not expand_isolated:
            raise NeighborhoodError(
                f"{len(isolated)} vertices have empty neighborhoods at epsilon={epsilon} (first: {isolated[0]})",
                isolated,
            )
        topo = _topology(mesh)
        for p in isolated:
            for q in topo.rings[p]:
                for src, dst in ((p, q), (q, p)):
                    if dst not in logs[src]:
                        radius = topo.lengths[(min(p, q), max(p, q))] * (1 + 1e-9)
                        found = dict((k, (r, t)) for k, r, t in log_map_ball(mesh, frames, src, max(epsilon, radius)))
                        logs[src][dst] = found[dst]
        kept = [pairs_of(p) for p in range(n)]

    offsets = np.zeros(n + 1, dtype=np.int64)
    rows = []
    for p in range(n):
        qs = sorted(kept[p])
        offsets[p + 1] = offsets[p] + len(qs)
        wsum = float(sum(weights[q] for q in qs))
        for q in qs:
            r_pq, t_pq = logs[p][q]
            r_qp, t_qp = logs[q][p]
            rows.append((q, weights[q] / wsum, 0.5 * (r_pq + r_qp), t_qp, t_pq, _wrap(t_pq + math.pi - t_qp)))
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return IntrinsicCache(
        epsilon=float(epsilon),
        mesh_hash=mesh.content_hash(),
        e1=np.array(frames.e1, dtype=np.float64),
        e2=np.array(frames.e2, dtype=np.float64),
        offsets=offsets,
        nbr=arr[:, 0].astype(np.int64),
        w=arr[:, 1].copy(),
        r=arr[:, 2].copy(),
        theta_qp=arr[:, 3].copy(),
        theta_pq=arr[:, 4].copy(),
        phi_pq=arr[:, 5].copy(),
    )


def compute_cache(mesh: TriMesh, epsilon: float, expand_isolated: bool = False) -> IntrinsicCache:
    """Frames, area weights and cache for an already normalized mesh."""
    from .mesh import vertex_area_weights

    return assemble_cache(mesh, build_frames(mesh), vertex_area_weights(mesh), epsilon, expand_isolated)


def gauge_transform(cache: IntrinsicCache, alpha) -> IntrinsicCache:
    """Express a cache in frames rotated by ``alpha[v]`` at every vertex.

    A field given in the old frames becomes ``exp(-1j * alpha) * X`` in the
    new ones.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    p, q = cache.center, cache.nbr
    c, s = np.cos(alpha)[:, None], np.sin(alpha)[:, None]
    return IntrinsicCache(
        epsilon=cache.epsilon,
        mesh_hash=cache.mesh_hash,
        e1=c * cache.e1 + s * cache.e2,
        e2=-s * cache.e1 + c * cache.e2,
        offsets=cache.offsets,
        nbr=cache.nbr,
        w=cache.w,
        r=cache.r,
        theta_qp=wrap_angle(cache.theta_qp - alpha[q]),
        theta_pq=wrap_angle(cache.theta_pq - alpha[p]),
        phi_pq=wrap_angle(cache.phi_pq + alpha[q] - alpha[p]),
    )


# ---------------------------------------------------------------------------
# Binary format

_HEADER = struct.Struct("<4sIId32s")


def cache_to_bytes(cache: IntrinsicCache) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, cache.n_vertices, cache.epsilon, cache.mesh_hash))
    rec = np.empty(cache.n_pairs, dtype=RECORD_DTYPE)
    rec["q"] = cache.nbr
    for name in ("w", "r", "theta_qp", "theta_pq", "phi_pq"):
        rec[name] = getattr(cache, name)
    frames = np.ascontiguousarray(np.concatenate([cache.e1, cache.e2], axis=1), dtype="<f8")
    for p in range(cache.n_vertices):
        a, b = cache.offsets[p], cache.offsets[p + 1]
        buf.write(frames[p].tobytes())
        buf.write(struct.pack("<I", b - a))
        buf.write(rec[a:b].tobytes())
    return buf.getvalue()


def cache_from_bytes(data: bytes, mesh: TriMesh | None = None) -> IntrinsicCache:
    if len(data) < _HEADER.size:
        raise CacheFormatError("cache file truncated (header)")
    magic, version, n, eps, digest = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CacheFormatError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise CacheFormatError(f"unsupported cache version {version}")
    pos = _HEADER.size
    e = np.empty((n, 6))
    counts = np.empty(n, dtype=np.int64)
    chunks = []
    for p in range(n):
        if pos + 52 > len(data):
            raise CacheFormatError(f"cache file truncated at vertex {p}")
        e[p] = np.frombuffer(data, dtype="<f8", count=6, offset=pos)
        (k,) = struct.unpack_from("<I", data, pos + 48)
        pos += 52
        size = k * RECORD_DTYPE.itemsize
        if pos + size > len(data):
            raise CacheFormatError(f"cache file truncated in records of vertex {p}")
        chunks.append(np.frombuffer(data, dtype=RECORD_DTYPE, count=k, offset=pos))
        counts[p] = k
        pos += size
    if pos != len(data):
        raise CacheFormatError("trailing bytes after cache records")
    rec = np.concatenate(chunks) if chunks else np.empty(0, dtype=RECORD_DTYPE)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    cache = IntrinsicCache(
        epsilon=float(eps),
        mesh_hash=bytes(digest),
        e1=e[:, :3].copy(),
        e2=e[:, 3:].copy(),
        offsets=offsets,
        nbr=rec["q"].astype(np.int64),
        **{k: rec[k].astype(np.float64) for k in ("w", "r", "theta_qp", "theta_pq", "phi_pq")},
    )
    if mesh is not None:
        cache.check_mesh(mesh)
    return cache


def save_cache(cache: IntrinsicCache, path) -> None:
    Path(path).write_bytes(cache_to_bytes(cache))


def load_cache(path, mesh: TriMesh | None = None) -> IntrinsicCache:
    """Read a cache file; with ``mesh`` given, verify it was built from it."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CacheFormatError(f"cannot read {path}: {exc}") from exc
    return cache_from_bytes(data, mesh)
