"""Executable invariant suites.

Each suite returns a list of :class:`Check` records; ``run_suite("all")``
runs every suite. Sizes default to the acceptance settings and can be
reduced for quick runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import shapes
from ..intrinsic import build_frames, compute_cache, gauge_transform, log_map_ball, wrap_angle
from ..layers import EchoConfig, FCResNetBlock, GradientLift, echo_descriptor, magnitude_readout
from ..mesh import normalize_unit_area, random_rotation, rigid_transform
from ..operator import FCFilter, brute_force_convolve, count_parameters, field_convolve
from ..optim import cross_entropy_smoothed, gradcheck, twin_loss
from .config import NetConfig
from .data import input_features
from .models import build_model


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}){extra}"


def _check(name, value, tol, detail="", lower_is_better=True):
    ok = value <= tol if lower_is_better else value >= tol
    return Check(name, float(value), tol, bool(ok and np.isfinite(value)), detail)


def random_mesh(rng, max_vertices=500):
    """A normalized test surface: sphere, bumpy sphere, superquadric, cone
    or a planar patch with boundary."""
    kind = int(rng.integers(5))
    n = int(rng.integers(min(80, max_vertices // 2), max_vertices + 1))
    if kind == 0:
        mesh = shapes.fibonacci_sphere(n)
    elif kind == 1:
        k = 5
        c = rng.normal(size=(k, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        mesh = shapes.project_sphere(shapes.fibonacci_sphere(n), shapes.bumpy_sphere_sdf(c, rng.uniform(0.1, 0.4, k), 0.5))
    elif kind == 2:
        sdf = shapes.superquadric_sdf(rng.uniform(0.6, 1.4, 3), rng.uniform(2, 6))
        mesh = shapes.project_sphere(shapes.fibonacci_sphere(n), sdf)
    elif kind == 3:
        mesh = shapes.pyramid_cone(int(rng.integers(5, 9)), int(rng.integers(4, 8)), rng.uniform(0.7, 1.3))
    else:
        side = int(math.sqrt(n))
        mesh = shapes.grid(side, side, 1.0)
        v = mesh.vertices.copy()
        v[:, 2] = 0.1 * np.sin(v[:, 0] / side * 3) * np.cos(v[:, 1] / side * 2) * side
        mesh = mesh.with_vertices(v)
    return normalize_unit_area(mesh)[0]


def _cache_for(mesh, rng, lo=0.15, hi=0.3):
    return compute_cache(mesh, float(rng.uniform(lo, hi)), expand_isolated=True)


def _cfield(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# ---------------------------------------------------------------------------

def gauge_suite(n_meshes: int = 20, seed: int = 0, max_vertices: int = 500) -> list[Check]:
    """Rotate every frame by a random angle and compare layer outputs."""
    rng = np.random.default_rng(seed)
    dev = {"field_convolve": 0.0, "fcresnet_block": 0.0, "gradient_lift": 0.0,
           "echo_descriptor": 0.0, "magnitude_readout": 0.0}
    t0 = time.perf_counter()
    for _ in range(n_meshes):
        mesh = random_mesh(rng, max_vertices)
        cache = _cache_for(mesh, rng)
        V = mesh.n_vertices
        alpha = rng.uniform(-np.pi, np.pi, V)
        rot = gauge_transform(cache, alpha)
        ph = np.exp(-1j * alpha)[:, None]
        X = _cfield(rng, (V, 3))
        filt = FCFilter.random(3, 4, 4, 2, cache.epsilon, rng, offsets=True)
        a, b = field_convolve(X, filt, cache), field_convolve(X * ph, filt, rot)
        dev["field_convolve"] = max(dev["field_convolve"], np.abs(b - ph * a).max())
        blk = FCResNetBlock(3, 4, 2, rng)
        blk.relu1.b.value[:] = rng.uniform(-0.3, 0.1, 3)
        blk.relu2.b.value[:] = rng.uniform(-0.3, 0.1, 3)
        a, b = blk(X, cache).value, blk(X * ph, rot).value
        dev["fcresnet_block"] = max(dev["fcresnet_block"], np.abs(b - ph * a).max())
        lift = GradientLift(2, 3, 4, rng)
        lift.beta.value[:] = rng.uniform(-np.pi, np.pi, 3)
        xi = rng.normal(size=(V, 2))
        a, b = lift(xi, cache).value, lift(xi, rot).value
        dev["gradient_lift"] = max(dev["gradient_lift"], np.abs(b - ph * a).max())
        cfg = EchoConfig.from_samples(3, 13)
        a, b = echo_descriptor(X, cache, cfg).value, echo_descriptor(X * ph, rot, cfg).value
        dev["echo_descriptor"] = max(dev["echo_descriptor"], np.abs(b - a).max())
        a, b = magnitude_readout(X).value, magnitude_readout(X * ph).value
        dev["magnitude_readout"] = max(dev["magnitude_readout"], np.abs(b - a).max())
    secs = time.perf_counter() - t0
    out = []
    for k, v in dev.items():
        tol = 1e-9 if k in ("echo_descriptor", "magnitude_readout") else 1e-10
        out.append(_check(f"gauge {k}", v, tol, f"{n_meshes} meshes"))
    out.append(_check("gauge runtime [s]", secs, 60.0))
    return out


def oracle_suite(n_instances: int = 100, seed: int = 0) -> list[Check]:
    """Factored convolution against the direct quadruple sum."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    meshes = []
    for _ in range(5):
        mesh = random_mesh(rng, 50)
        meshes.append((mesh, _cache_for(mesh, rng, 0.25, 0.45)))
    for i in range(n_instances):
        mesh, cache = meshes[i % len(meshes)]
        c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        filt = FCFilter.random(c_in, c_out, int(rng.integers(1, 6)), int(rng.integers(0, 3)), cache.epsilon, rng,
                               offsets=True)
        X = _cfield(rng, (mesh.n_vertices, c_in))
        X[rng.random(X.shape) < 0.05] = 0
        worst = max(worst, np.abs(field_convolve(X, filt, cache) - brute_force_convolve(X, filt, cache)).max())
    secs = time.perf_counter() - t0
    return [_check("oracle max |fast - direct|", worst, 1e-12, f"{n_instances} instances"),
            _check("oracle runtime [s]", secs, 60.0)]


def cone_holonomy(cache, ring) -> float:
    """Transport angle accumulated around the closed vertex ``ring``, wrapped
    to (-pi, pi]. The raw sum also counts the one full turn the frames make
    around the loop."""
    total = 0.0
    for a, b in zip(ring, ring[1:] + ring[:1]):
        rec = {r.q: r for r in cache.neighbors(b)}
        if a not in rec:
            raise ValueError(f"ring vertices {a} and {b} are not neighbors")
        total += rec[a].phi_pq
    return float(wrap_angle(total))


def flat_grid_errors(n: int = 41, ball_edges: int = 10):
    """Log-map errors from the central vertex of a planar grid with
    ``epsilon = ball_edges`` edge lengths: (max relative radius error, max
    angle error)."""
    h = 1.0 / (n - 1)
    mesh = shapes.grid(n, n, h)
    frames = build_frames(mesh)
    src = (n // 2) * n + n // 2
    e1 = frames.e1[src]
    ref = math.atan2(e1[1], e1[0])
    rerr = aerr = 0.0
    for q, r, th in log_map_ball(mesh, frames, src, ball_edges * h):
        d = mesh.vertices[q] - mesh.vertices[src]
        rt = math.hypot(d[0], d[1])
        rerr = max(rerr, abs(r - rt) / rt)
        aerr = max(aerr, abs(wrap_angle(th - (math.atan2(d[1], d[0]) - ref))))
    return rerr, aerr


def cache_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(5):
        cache = _cache_for(random_mesh(rng, 400), rng)
        resid = wrap_angle(cache.theta_pq - (cache.theta_qp + cache.phi_pq + np.pi))
        worst = max(worst, np.abs(resid).max())
    out = [_check("cache reciprocity residual", worst, 1e-12, "theta_pq - theta_qp - phi_pq - pi, wrapped")]
    rerr, aerr = flat_grid_errors()
    out.append(_check("flat log map radius rel. error", rerr, 0.05))
    out.append(_check("flat log map angle error [rad]", aerr, 0.05))

    # transport on a plane with every frame aligned to +x
    n = 21
    mesh = shapes.grid(n, n, 1.0 / (n - 1))
    cache = compute_cache(mesh, 0.25)
    ang = np.arctan2(cache.e1[:, 1], cache.e1[:, 0])
    aligned = gauge_transform(cache, -ang)
    out.append(_check("flat transport |phi| [rad]", np.abs(aligned.phi_pq).max(), 0.02))

    rel = 0.0
    for half_angle in (1.2, 1.0, 0.8):
        sides, rings = 8, 6
        cone = shapes.pyramid_cone(sides, rings, half_angle)
        deficit = shapes.apex_angle_deficit(cone, 0)
        cache = compute_cache(cone, 0.45)
        ring = list(range(1 + sides, 1 + 2 * sides))
        hol = cone_holonomy(cache, ring)
        rel = max(rel, abs(hol - deficit) / deficit)
    out.append(_check("cone holonomy vs deficit rel. error", rel, 0.10, "half-angles 1.2, 1.0, 0.8"))
    out.append(_check("cache runtime [s]", time.perf_counter() - t0, 60.0))
    return out


def _small_setup(seed, epsilon: float = 0.25):
    # an ellipsoid keeps the invariant input features informative (on a
    # sphere they are constant up to noise); eps 0.25 keeps balls local.
    # The lattice is rotated so no vertex sits on an axis endpoint, where the
    # features are critical and the lifted field vanishes.
    rng = np.random.default_rng(seed)
    sdf = shapes.superquadric_sdf((1.4, 1.0, 0.7), 2.0)
    sphere = rigid_transform(shapes.fibonacci_sphere(150), random_rotation(rng))
    mesh = normalize_unit_area(shapes.project_sphere(sphere, sdf))[0]
    cache = compute_cache(mesh, epsilon)
    return rng, mesh, cache


def _condition(net, rng) -> None:
    """Move a freshly built network away from degenerate points for finite
    differences: zero radial ReLU offsets (b > 0 is singular at z = 0 and
    b < 0 puts kinks within one step), random MLP biases, and an ECHO
    convolution scaled so descriptors are O(1). Without the last step most
    backbone gradients sit near 1e-7, where a step of 1e-5 only resolves one
    ulp of the loss."""
    for blk in net.blocks:
        for relu in (blk.relu1, blk.relu2):
            relu.b.value[:] = 0.0
    mlps = [m for m in (getattr(net.head, "mlp", None), getattr(net, "tail", None)) if m is not None]
    for mlp in mlps:
        for layer in mlp.layers:
            layer.b.value[:] = rng.uniform(-0.5, 0.5, layer.b.value.shape)
    if hasattr(net.head, "conv"):
        net.head.conv.coeffs.value *= 100.0


def network_gradcheck(cfg: NetConfig, seed: int = 0, tolerance: float = 1e-5, samples: int = 100,
                      n_out: int = 3):
    """Gradient check of a whole network built from ``cfg`` on a small
    ellipsoid, through the task loss (smoothed cross-entropy, or the twin
    loss for matching). Returns the :class:`GradcheckReport`."""
    rng, mesh, cache = _small_setup(seed, cfg.epsilon)
    V = mesh.n_vertices
    xi = input_features(mesh)
    if cfg.task == "matching":
        net = build_model(cfg, 3, cfg.descriptor_dim, seed=seed)
        _condition(net, rng)
        xi2 = input_features(mesh, "xyz")
        pairs = [(int(rng.integers(V)), int(rng.integers(V)), bool(i % 2)) for i in range(32)]
        loss = lambda: twin_loss(net(xi, cache), net(xi2, cache), pairs, seed=3)  # noqa: E731
    else:
        net = build_model(cfg, 3, n_out, seed=seed)
        _condition(net, rng)
        if cfg.task == "classification":
            target = int(rng.integers(n_out))
        else:
            target = rng.integers(0, n_out, V)
        loss = lambda: cross_entropy_smoothed(net(xi, cache), target, cfg.smoothing)  # noqa: E731
    return gradcheck(loss, net.parameters(), tolerance, samples=samples, seed=seed)


def gradient_suite(seed: int = 0, tolerance: float = 1e-5, samples: int = 100) -> list[Check]:
    """Central differences (step 1e-5) against the analytic backward pass for
    every layer kind and both losses."""
    rng, mesh, cache = _small_setup(seed)
    V = mesh.n_vertices
    out = []
    t0 = time.perf_counter()

    # segmentation-style network: lift, complex linear, blocks, ECHO + MLP
    cfg = NetConfig.for_task("segmentation", blocks=3, width=4, lift_width=3, radial_nodes=3, band_limit=2,
                             epsilon=cache.epsilon, echo_d=3, echo_h=9, mlp=(6,))
    rep = network_gradcheck(cfg, seed, tolerance, samples)
    for k in rep.kinds.values():
        out.append(_check(f"grad {k.kind}", k.max_rel, tolerance, f"{k.n} coords, mean {k.mean_rel:.1e}"))

    # ECHO descriptors on their own
    X = ad.Parameter(_cfield(rng, (V, 3)), kind="echo_descriptor")
    wd = rng.normal(size=(V, 3, 13))
    ecfg = EchoConfig.from_samples(3, 13)
    rep = gradcheck(lambda: ad.sum_(ad.mul(echo_descriptor(X, cache, ecfg), wd)), {"X": X}, tolerance,
                    samples=samples, seed=seed)
    k = rep.kinds["echo_descriptor"]
    out.append(_check("grad echo_descriptor", k.max_rel, tolerance, f"{k.n} coords"))

    # losses with respect to their inputs
    logits = ad.Parameter(rng.normal(size=(V, 4)), kind="cross_entropy")
    tgt = rng.integers(0, 4, V)
    rep = gradcheck(lambda: cross_entropy_smoothed(logits, tgt, 0.2), {"z": logits}, tolerance, samples=samples)
    out.append(_check("grad cross_entropy_smoothed", rep.max_rel, tolerance))

    FS = ad.Parameter(rng.normal(size=(V, 8)) * 0.5, kind="twin_loss")
    FM = ad.Parameter(rng.normal(size=(V, 8)) * 0.5, kind="twin_loss")
    pairs = [(int(rng.integers(V)), int(rng.integers(V)), bool(i % 2)) for i in range(64)]
    rep = gradcheck(lambda: twin_loss(FS, FM, pairs, seed=7), {"FS": FS, "FM": FM}, tolerance, samples=samples)
    out.append(_check("grad twin_loss", rep.max_rel, tolerance))

    # matching network end to end through the twin loss
    mcfg = NetConfig.for_task("matching", blocks=1, width=4, lift_width=3, radial_nodes=3, band_limit=1,
                              epsilon=cache.epsilon, descriptor_dim=4)
    rep = network_gradcheck(mcfg, seed + 1, tolerance, samples)
    out.append(_check("grad matching net + twin_loss", rep.max_rel, tolerance))
    out.append(_check("gradient runtime [s]", time.perf_counter() - t0, 300.0))
    return out


def params_suite() -> list[Check]:
    out = []
    for (n, b), want in {(6, 2): 33, (6, 1): 20, (3, 1): 11, (1, 0): 2}.items():
        got = count_parameters(n, b)
        out.append(Check(f"count_parameters({n}, {b})", float(got), float(want), got == want, f"expected {want}"))
    # real degrees of freedom actually held by a single-channel filter
    rng = np.random.default_rng(0)
    f = FCFilter.random(1, 1, 6, 2, 0.2, rng)
    dof = 2 * f.coeffs.size - f.radial_nodes + f.offsets.size  # imaginary part of f_0 is unused
    out.append(Check("filter dof (6, 2)", float(dof), 33.0, dof == 33))
    return out


SUITES = {
    "gauge": gauge_suite,
    "oracle": oracle_suite,
    "cache": cache_suite,
    "gradients": gradient_suite,
    "params": params_suite,
}


def run_suite(name: str, **kwargs) -> list[Check]:
    if name == "all":
        out = []
        for fn in SUITES.values():
            out += fn()
        return out
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](**kwargs)
