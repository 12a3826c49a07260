"""Synthetic datasets, on-disk layout and per-mesh preprocessing.

A dataset directory holds ``manifest.json`` plus mesh and label files::

    manifest.json        kind, seed, class names and one entry per item
    meshes/<name>.off    meshes in their generated pose (not normalized)
    labels/<name>.labels one integer per line and vertex (segmentation)
    corr/<name>.corr     one target vertex index per line and source vertex
    caches/<name>_eps<e>.fcpc  intrinsic caches, written on first use

User-supplied data can follow the same layout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import shapes
from ..errors import CacheFormatError, CacheMismatchError, DataError
from ..intrinsic import IntrinsicCache, compute_cache, load_cache, save_cache
from ..mesh import (TriMesh, load_mesh, normalize_unit_area, random_rotation, rigid_transform, save_off,
                    vertex_area_weights)

log = logging.getLogger(__name__)

KINDS = ("classify3", "segment2", "pairmatch", "template")
CLASSIFY3 = ("ellipsoid", "rounded_box", "capped_cylinder")


# ---------------------------------------------------------------------------
# Input features

def input_features(mesh: TriMesh, mode: str = "invariant") -> np.ndarray:
    """Per-vertex real input scalars, shape (V, 3).

    ``invariant``: squared distance to the area centroid and the two
    quadratic forms of the area-weighted covariance ``S``,
    ``x^T S x / tr S`` and ``x^T S^2 x / tr S^2``, each standardized over the
    surface. These depend on the pose only through rounding.
    ``xyz``: centered coordinates scaled to unit RMS radius.
    """
    a = vertex_area_weights(mesh)
    a = a / a.sum()
    x = mesh.vertices - a @ mesh.vertices
    if mode == "xyz":
        return x / np.sqrt(a @ np.sum(x * x, axis=1))
    if mode != "invariant":
        raise ValueError(f"unknown input mode {mode!r}")
    S = (x * a[:, None]).T @ x
    S2 = S @ S
    f = np.stack([
        np.sum(x * x, axis=1),
        np.einsum("vi,ij,vj->v", x, S, x) / np.trace(S),
        np.einsum("vi,ij,vj->v", x, S2, x) / np.trace(S2),
    ], axis=1)
    mu = a @ f
    sd = np.sqrt(a @ (f - mu) ** 2)
    return (f - mu) / np.where(sd > 0, sd, 1.0)


# ---------------------------------------------------------------------------
# Generators

def _jitter(mesh: TriMesh, rng, fraction=0.01) -> TriMesh:
    """Random per-vertex offsets no longer than ``fraction`` of the bbox diagonal."""
    diag = np.linalg.norm(np.ptp(mesh.vertices, axis=0))
    d = rng.normal(size=mesh.vertices.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d *= (fraction * diag * rng.random(len(d)))[:, None]
    return mesh.with_vertices(mesh.vertices + d)


def _pose(mesh: TriMesh, rng) -> TriMesh:
    return rigid_transform(mesh, random_rotation(rng), rng.uniform(-1, 1, 3))


def classify_shape(family: str, rng, n_vertices: int) -> TriMesh:
    sphere = shapes.fibonacci_sphere(n_vertices)
    if family == "ellipsoid":
        sdf = shapes.superquadric_sdf(rng.uniform(0.6, 1.4, 3), 2.0)
    elif family == "rounded_box":
        sdf = shapes.superquadric_sdf(rng.uniform(0.6, 1.4, 3), 8.0)
    elif family == "capped_cylinder":
        sdf = shapes.capped_cylinder_sdf(rng.uniform(0.4, 0.8), rng.uniform(0.7, 1.4))
    else:
        raise ValueError(family)
    return shapes.project_sphere(sphere, sdf)


def capsule_with_labels(rng, n_vertices: int) -> tuple[TriMesh, np.ndarray]:
    """Capsule along z; label 1 on the hemispherical caps, 0 on the tube."""
    radius, half = rng.uniform(0.3, 0.5), rng.uniform(0.6, 1.2)
    mesh = shapes.project_sphere(shapes.fibonacci_sphere(n_vertices), shapes.capsule_sdf(radius, half))
    labels = (np.abs(mesh.vertices[:, 2]) > half).astype(np.int64)
    return mesh, labels


def bumpy_sphere(rng, n_vertices: int) -> TriMesh:
    k = int(rng.integers(4, 8))
    centers = rng.normal(size=(k, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    sdf = shapes.bumpy_sphere_sdf(centers, rng.uniform(0.15, 0.4, k), 0.45)
    return shapes.project_sphere(shapes.fibonacci_sphere(n_vertices), sdf)


def smooth_deform(mesh: TriMesh, rng, fraction=0.08) -> TriMesh:
    """Low-frequency sinusoidal displacement, at most ``fraction`` of the
    bbox diagonal per vertex."""
    x = mesh.vertices
    diag = np.linalg.norm(np.ptp(x, axis=0))
    amp = fraction * diag / np.sqrt(3.0)
    freq = rng.normal(size=(3, 3)) * 1.5
    phase = rng.uniform(0, 2 * np.pi, 3)
    return mesh.with_vertices(x + amp * np.sin(x @ freq.T + phase))


def permute(mesh: TriMesh, rng) -> tuple[TriMesh, np.ndarray]:
    """Relabel vertices; returns the new mesh and ``perm`` with
    ``new_vertices[perm[i]] == old_vertices[i]``."""
    perm = rng.permutation(mesh.n_vertices)
    v = np.empty_like(mesh.vertices)
    v[perm] = mesh.vertices
    return TriMesh(v, perm[mesh.faces]), perm


def _split(n: int, rng, train_fraction=0.7) -> list[str]:
    order = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    out = ["test"] * n
    for i in order[:n_train]:
        out[i] = "train"
    return out


def _write_ints(path: Path, values) -> None:
    path.write_text("".join(f"{int(v)}\n" for v in values))


def read_ints(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return np.array([int(t) for t in text.split()], dtype=np.int64)
    except ValueError:
        raise DataError(f"{path}: expected one integer per line") from None


def generate_dataset(kind: str, count: int, seed: int, out, n_vertices: int = 500) -> dict:
    """Write a synthetic dataset to ``out`` and return its manifest.

    ``classify3`` makes ``count`` meshes per class, ``segment2`` ``count``
    capsules, ``pairmatch`` ``count`` source/deformed pairs and ``template``
    ``count`` deformed copies of one template mesh.
    """
    if kind not in KINDS:
        raise DataError(f"unknown dataset kind {kind!r}; expected one of {', '.join(KINDS)}")
    if count < 1:
        raise DataError("count must be >= 1")
    out = Path(out)
    for sub in ("meshes", "labels", "corr"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    items = []
    manifest = {"kind": kind, "seed": seed, "count": count, "items": items}

    def nverts():
        return int(rng.integers(int(0.9 * n_vertices), int(1.1 * n_vertices) + 1))

    if kind == "classify3":
        manifest["classes"] = list(CLASSIFY3)
        for label, family in enumerate(CLASSIFY3):
            splits = _split(count, rng)
            for i in range(count):
                mesh = _pose(_jitter(classify_shape(family, rng, nverts()), rng), rng)
                name = f"{family}_{i:03d}"
                save_off(mesh, out / "meshes" / f"{name}.off")
                items.append({"name": name, "mesh": f"meshes/{name}.off", "label": label, "split": splits[i]})
    elif kind == "segment2":
        manifest["classes"] = ["tube", "cap"]
        splits = _split(count, rng)
        for i in range(count):
            mesh, labels = capsule_with_labels(rng, nverts())
            mesh = _pose(_jitter(mesh, rng), rng)
            name = f"capsule_{i:03d}"
            save_off(mesh, out / "meshes" / f"{name}.off")
            _write_ints(out / "labels" / f"{name}.labels", labels)
            items.append({"name": name, "mesh": f"meshes/{name}.off", "labels": f"labels/{name}.labels",
                          "split": splits[i]})
    elif kind == "pairmatch":
        splits = _split(count, rng)
        for i in range(count):
            scene = _pose(bumpy_sphere(rng, nverts()), rng)
            model, perm = permute(smooth_deform(scene, rng), rng)
            name = f"pair_{i:03d}"
            save_off(scene, out / "meshes" / f"{name}_scene.off")
            save_off(model, out / "meshes" / f"{name}_model.off")
            _write_ints(out / "corr" / f"{name}.corr", perm)
            items.append({"name": name, "scene": f"meshes/{name}_scene.off", "model": f"meshes/{name}_model.off",
                          "corr": f"corr/{name}.corr", "split": splits[i]})
    else:
        template = bumpy_sphere(rng, nverts())
        save_off(template, out / "meshes" / "template.off")
        manifest["template"] = "meshes/template.off"
        splits = _split(count, rng)
        for i in range(count):
            mesh = smooth_deform(template, rng, 0.04) if i else template
            mesh, perm = permute(_pose(mesh, rng), rng)
            # corr[new index] = template index
            corr = np.empty(mesh.n_vertices, dtype=np.int64)
            corr[perm] = np.arange(mesh.n_vertices)
            name = f"shape_{i:03d}"
            save_off(mesh, out / "meshes" / f"{name}.off")
            _write_ints(out / "corr" / f"{name}.corr", corr)
            items.append({"name": name, "mesh": f"meshes/{name}.off", "corr": f"corr/{name}.corr",
                          "split": splits[i]})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Loading

@dataclass
class Sample:
    name: str
    mesh: TriMesh
    cache: IntrinsicCache
    split: str
    label: int | None = None
    labels: np.ndarray | None = None
    corr: np.ndarray | None = None

    def features(self, mode: str, rotation=None) -> np.ndarray:
        mesh = self.mesh if rotation is None else rigid_transform(self.mesh, rotation)
        return input_features(mesh, mode)


@dataclass
class Pair:
    name: str
    scene: Sample
    model: Sample
    corr: np.ndarray
    split: str


def cache_path(root: Path, name: str, epsilon: float) -> Path:
    return root / "caches" / f"{name}_eps{epsilon:g}.fcpc"


def prepare_mesh(root: Path, name: str, rel: str, epsilon: float, expand_isolated: bool = False):
    """Load, normalize to unit area and fetch (or compute and store) the cache."""
    mesh, _ = normalize_unit_area(load_mesh(root / rel))
    path = cache_path(root, name, epsilon)
    if path.exists():
        try:
            cache = load_cache(path, mesh)
            if cache.epsilon == epsilon:
                return mesh, cache
        except (CacheFormatError, CacheMismatchError) as exc:
            log.warning("recomputing stale cache %s (%s)", path, exc)
    cache = compute_cache(mesh, epsilon, expand_isolated)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_cache(cache, path)
    return mesh, cache


def read_manifest(root) -> dict:
    root = Path(root)
    try:
        return json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {root / 'manifest.json'}: {exc}") from None


def load_dataset(root, epsilon: float, expand_isolated: bool = False) -> tuple[dict, list]:
    """Return the manifest and a list of :class:`Sample` (or :class:`Pair`
    for pairmatch data)."""
    root = Path(root)
    manifest = read_manifest(root)
    out = []
    for item in manifest["items"]:
        name, split = item["name"], item.get("split", "train")
        if "scene" in item:
            s_mesh, s_cache = prepare_mesh(root, name + "_scene", item["scene"], epsilon, expand_isolated)
            m_mesh, m_cache = prepare_mesh(root, name + "_model", item["model"], epsilon, expand_isolated)
            corr = read_ints(root / item["corr"])
            if len(corr) != s_mesh.n_vertices or corr.min() < 0 or corr.max() >= m_mesh.n_vertices:
                raise DataError(f"{name}: correspondence file does not match the meshes")
            out.append(Pair(name, Sample(name + "_scene", s_mesh, s_cache, split),
                            Sample(name + "_model", m_mesh, m_cache, split), corr, split))
            continue
        mesh, cache = prepare_mesh(root, name, item["mesh"], epsilon, expand_isolated)
        s = Sample(name, mesh, cache, split, label=item.get("label"))
        if "labels" in item:
            s.labels = read_ints(root / item["labels"])
            if len(s.labels) != mesh.n_vertices:
                raise DataError(f"{name}: {len(s.labels)} labels for {mesh.n_vertices} vertices")
        if "corr" in item:
            s.corr = read_ints(root / item["corr"])
            if len(s.corr) != mesh.n_vertices:
                raise DataError(f"{name}: {len(s.corr)} correspondences for {mesh.n_vertices} vertices")
        out.append(s)
    return manifest, out


def load_template(root, manifest: dict) -> TriMesh:
    if "template" not in manifest:
        raise DataError("dataset has no template mesh")
    mesh, _ = normalize_unit_area(load_mesh(Path(root) / manifest["template"]))
    return mesh
