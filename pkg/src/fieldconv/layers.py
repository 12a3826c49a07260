"""Network layers over tangent vector fields (complex ``(V, C)`` arrays).

Functional forms take tensors and parameters explicitly; the small module
classes below own their :class:`~fieldconv.autodiff.Parameter` objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .errors import ShapeError
from .intrinsic import IntrinsicCache
from .operator import field_convolve_t, radial_weights


# ---------------------------------------------------------------------------
# Functional layers

def complex_linear(X, W):
    """Per-vertex ``X @ W.T`` over channels; no bias term."""
    X, W = ad.as_tensor(X), ad.as_tensor(W)
    if X.ndim != 2 or W.ndim != 2 or W.shape[1] != X.shape[1]:
        raise ShapeError(f"cannot apply a {W.shape} channel map to a field of shape {X.shape}")
    return ad.einsum("vc,oc->vo", X, W)


def radial_relu(X, b):
    """``ReLU(rho + b) * exp(1j * phi)`` with one real offset per channel."""
    return ad.radial_relu(X, b)


def magnitude_readout(X):
    return ad.abs_(X)


def global_mean_pool(values):
    return ad.mean(values, axis=0)


def dropout(values, p: float, training: bool, seed=None):
    """Inverted dropout. ``seed`` may be an int or a numpy Generator."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    is_tensor = isinstance(values, ad.Tensor)
    if not training or p == 0:
        return values
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v = ad.as_tensor(values)
    keep = rng.random(v.shape) >= p
    out = ad.mul(v, keep / (1.0 - p))
    return out if is_tensor else out.value


def linear(x, W, b):
    """Real affine map ``x @ W.T + b``."""
    return ad.add(ad.einsum("...i,oi->...o", x, W), b)


def _lift_operators(cache: IntrinsicCache, n_nodes: int):
    key = ("lift", n_nodes)
    ops = cache._memo.get(key)
    if ops is not None:
        return ops
    V = cache.n_vertices
    p, q = cache.center, cache.nbr
    lo, frac = radial_weights(cache.r, cache.epsilon, n_nodes)
    hi = np.minimum(lo + 1, n_nodes - 1)
    rows = np.concatenate([p * n_nodes + lo, p * n_nodes + hi])
    wts = np.concatenate([cache.w * (1 - frac), cache.w * frac])
    Wop = sparse.csr_matrix((wts, (rows, np.concatenate([q, q]))), shape=(V * n_nodes, V))
    rot = np.exp(1j * np.concatenate([cache.theta_pq, cache.theta_pq]))
    dirs = wts * rot
    Dop = sparse.csr_matrix(
        (np.concatenate([dirs, -dirs]), (np.concatenate([rows, rows]), np.concatenate([q, q, p, p]))),
        shape=(V * n_nodes, V),
    )
    ops = (Dop, Wop)
    cache._memo[key] = ops
    return ops


def gradient_lift(xi, f1, f2, beta, cache: IntrinsicCache, guard: float = 1e-12):
    """Lift real scalar channels ``xi`` (V, C_in) to C_out tangent channels.

    ``Phi(p) = exp(1j beta) sum_q w_q (xi(q) - xi(p)) f1(r_pq) exp(1j theta_pq)``
    gives the direction and ``P(p) = sum_q w_q xi(q) f2(r_pq)`` the scale; the
    output is ``P**2 * Phi / |Phi|`` (0 where ``|Phi| <= guard``). ``f1`` and
    ``f2`` are radial profiles of shape (C_in, C_out, N).
    """
    xi, f1, f2, beta = (ad.as_tensor(t) for t in (xi, f1, f2, beta))
    V = cache.n_vertices
    if xi.ndim != 2 or xi.shape[0] != V:
        raise ShapeError(f"scalar input has shape {xi.shape}, cache expects {V} vertices")
    c_in, c_out, n_nodes = f1.shape
    if xi.shape[1] != c_in:
        raise ShapeError(f"scalar input has {xi.shape[1]} channels, lift expects {c_in}")
    Dop, Wop = _lift_operators(cache, n_nodes)
    diffs = ad.reshape(ad.spmm(Dop, xi), (V, n_nodes, c_in))
    means = ad.reshape(ad.spmm(Wop, xi), (V, n_nodes, c_in))
    phi = ad.mul(ad.einsum("vnc,con->vo", diffs, f1), ad.exp_i(beta))
    P = ad.einsum("vnc,con->vo", means, f2)
    return ad.mul(ad.square(P), ad.unit(phi, guard))


def fcresnet_block(X, params, cache: IntrinsicCache):
    """``ReLU2(FC2(ReLU1(FC1(X)))) + X``.

    ``params`` maps ``coeffs1, offsets1, b1, coeffs2, offsets2, b2`` to tensors.
    """
    X = ad.as_tensor(X)
    c1 = ad.as_tensor(params["coeffs1"])
    c2 = ad.as_tensor(params["coeffs2"])
    if c1.shape[0] != X.shape[1] or c2.shape[1] != X.shape[1]:
        raise ShapeError("FCResNet block must preserve the channel width")
    h = radial_relu(field_convolve_t(X, c1, params["offsets1"], cache), params["b1"])
    h = radial_relu(field_convolve_t(h, c2, params["offsets2"], cache), params["b2"])
    return ad.add(h, X)


# ---------------------------------------------------------------------------
# ECHO descriptors

@dataclass(frozen=True)
class EchoConfig:
    """Polar bin layout: one center bin plus ``rings`` x ``sectors`` bins;
    ``sigma`` is the splat width in units of the ring spacing."""

    channels: int
    rings: int
    sectors: int
    sigma: float = 0.75

    def __post_init__(self):
        if self.sigma <= 0 or self.rings < 1 or self.sectors < 1 or self.channels < 1:
            raise ValueError("invalid ECHO configuration")

    @property
    def samples(self) -> int:
        return 1 + self.rings * self.sectors

    @property
    def width(self) -> int:
        return self.channels * self.samples

    @classmethod
    def from_samples(cls, channels: int, samples: int, sigma: float = 0.75) -> "EchoConfig":
        """Pick ``rings`` as the largest divisor of ``samples - 1`` not above
        its square root (33 -> 4 x 8, 13 -> 3 x 4)."""
        k = samples - 1
        if k < 1:
            raise ValueError("ECHO needs at least two samples")
        rings = max(d for d in range(1, int(math.isqrt(k)) + 1) if k % d == 0)
        return cls(channels, rings, k // rings, sigma)

    def centers(self) -> np.ndarray:
        c = [0j]
        for k in range(1, self.rings + 1):
            for j in range(self.sectors):
                c.append(k * np.exp(2j * np.pi * j / self.sectors))
        return np.array(c)


_TAIL = math.exp(-2.0)
_PEAK = 1.0 - 3.0 * _TAIL


def splat_kernel(t):
    """Gaussian splat in ``t = d^2 / (2 sigma^2)`` cut off at ``d = 2 sigma``.

    The tangent line of ``exp(-t)`` at the cutoff is subtracted so the kernel
    reaches zero with zero slope (a hard cut makes the descriptor jump when a
    vote crosses it). Scaled to peak 1. Returns the kernel and ``dk/dt``.
    """
    inside = t < 2.0
    e = np.exp(-np.minimum(t, 2.0))
    k = np.where(inside, (e - _TAIL * (3.0 - t)) / _PEAK, 0.0)
    dk = np.where(inside, (_TAIL - e) / _PEAK, 0.0)
    return k, dk


def echo_descriptor(X, cache: IntrinsicCache, cfg: EchoConfig):
    """Gauge-invariant polar histograms, shape (V, D, H).

    Every neighbor ``q`` of ``p`` votes with weight ``w_q * rho_q`` at
    ``r_qp * exp(1j (theta_qp - phi_q))``, the position of ``p`` in the frame
    aligned with ``X(q)``; votes are splatted with :func:`splat_kernel`.
    """
    X = ad.as_tensor(X)
    V, D = X.shape
    if V != cache.n_vertices:
        raise ShapeError(f"field has {V} vertices, cache has {cache.n_vertices}")
    if D != cfg.channels:
        raise ShapeError(f"field has {D} channels, ECHO config expects {cfg.channels}")
    E = cache.n_pairs
    p, q = cache.center, cache.nbr
    P = _scatter(cache, "echo_p", p, V)
    a = (cache.r * (cfg.rings / cache.epsilon) * np.exp(1j * cache.theta_qp))[:, None]
    x = X.value[q]
    rho = np.abs(x)
    ok = rho > 0
    safe = np.where(ok, rho, 1.0)
    u = np.where(ok, x / safe, 0.0)
    z = a * np.conj(u)
    vote = cache.w[:, None] * rho
    centers = cfg.centers()
    s2 = cfg.sigma ** 2

    def kernel(c):
        dz = z - c
        t = 0.5 * (dz.real ** 2 + dz.imag ** 2) / s2
        k, dk = splat_kernel(t)
        return dz, k, dk

    out = np.empty((V, D, len(centers)))
    for h, c in enumerate(centers):
        _, k, _ = kernel(c)
        out[:, :, h] = P @ (vote * k)

    def bw(g):
        Gz = np.zeros((E, D), dtype=np.complex128)
        Grho = np.zeros((E, D))
        for h, c in enumerate(centers):
            gh = g[p, :, h]
            dz, k, dk = kernel(c)
            Grho += gh * k
            Gz += (gh * dk / s2) * dz
        Grho *= cache.w[:, None]
        Gz *= vote
        gx = np.where(ok, Grho * u + (np.conj(Gz) * a - Gz * np.conj(a) * u * u) / (2 * safe), 0.0)
        Q = _scatter(cache, "echo_q", q, V)
        return (Q @ gx,)

    return ad._make(out, (X,), bw)


def _scatter(cache, key, idx, V):
    S = cache._memo.get(key)
    if S is None:
        E = len(idx)
        S = sparse.csr_matrix((np.ones(E), (idx, np.arange(E))), shape=(V, E))
        cache._memo[key] = S
    return S


# ---------------------------------------------------------------------------
# Modules

class Module:
    """Holds parameters and sub-modules as attributes, in definition order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, ad.Parameter]]:
        out = []
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, ad.Parameter):
                out.append((full, val))
            elif isinstance(val, Module):
                out += val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)) and val and all(isinstance(m, Module) for m in val):
                for i, m in enumerate(val):
                    out += m.named_parameters(f"{full}.{i}.")
        return out

    def parameters(self) -> dict[str, ad.Parameter]:
        return dict(self.named_parameters())


def _uniform_complex(rng, scale, shape):
    return rng.uniform(-scale, scale, shape) + 1j * rng.uniform(-scale, scale, shape)


class ComplexLinear(Module):
    def __init__(self, c_in, c_out, rng):
        self.W = ad.Parameter(_uniform_complex(rng, 1.0 / math.sqrt(c_in), (c_out, c_in)), kind="complex_linear")

    def __call__(self, X):
        return complex_linear(X, self.W)


class RadialReLU(Module):
    def __init__(self, channels):
        self.b = ad.Parameter(np.zeros(channels), kind="radial_relu")

    def __call__(self, X):
        return radial_relu(X, self.b)


class FieldConv(Module):
    def __init__(self, c_in, c_out, radial_nodes, band_limit, rng):
        # He-style over input channels only: the angular terms largely cancel
        # over a ball, so counting them in the fan-in shrinks every layer ~5x
        s = math.sqrt(3.0 / c_in)
        coeffs = _uniform_complex(rng, s, (c_in, c_out, band_limit + 1, radial_nodes))
        coeffs[:, :, 0, :] = coeffs[:, :, 0, :].real
        self.coeffs = ad.Parameter(coeffs, kind="field_convolve")
        self.offsets = ad.Parameter(np.zeros(band_limit + 1), kind="field_convolve")

    def __call__(self, X, cache):
        return field_convolve_t(X, self.coeffs, self.offsets, cache)


class GradientLift(Module):
    def __init__(self, c_in, c_out, radial_nodes, rng):
        s = 1.0 / math.sqrt(c_in)
        self.f1 = ad.Parameter(rng.uniform(-s, s, (c_in, c_out, radial_nodes)), kind="gradient_lift")
        # f2 starts radially constant: with node-wise independent values the
        # local averages cancel and the output magnitude P**2 starts near 0
        prof = rng.uniform(-math.sqrt(3.0) * s, math.sqrt(3.0) * s, (c_in, c_out, 1))
        self.f2 = ad.Parameter(np.repeat(prof, radial_nodes, axis=2), kind="gradient_lift")
        self.beta = ad.Parameter(np.zeros(c_out), kind="gradient_lift")

    def __call__(self, xi, cache):
        return gradient_lift(xi, self.f1, self.f2, self.beta, cache)


class FCResNetBlock(Module):
    def __init__(self, channels, radial_nodes, band_limit, rng):
        self.conv1 = FieldConv(channels, channels, radial_nodes, band_limit, rng)
        self.relu1 = RadialReLU(channels)
        self.conv2 = FieldConv(channels, channels, radial_nodes, band_limit, rng)
        self.relu2 = RadialReLU(channels)

    def as_params(self):
        return {
            "coeffs1": self.conv1.coeffs, "offsets1": self.conv1.offsets, "b1": self.relu1.b,
            "coeffs2": self.conv2.coeffs, "offsets2": self.conv2.offsets, "b2": self.relu2.b,
        }

    def __call__(self, X, cache):
        return fcresnet_block(X, self.as_params(), cache)


class Linear(Module):
    def __init__(self, c_in, c_out, rng):
        s = 1.0 / math.sqrt(c_in)
        self.W = ad.Parameter(rng.uniform(-s, s, (c_out, c_in)), kind="mlp")
        self.b = ad.Parameter(np.zeros(c_out), kind="mlp")

    def __call__(self, x):
        return linear(x, self.W, self.b)


class MLP(Module):
    """Real MLP with ReLU between layers (none after the last)."""

    def __init__(self, widths, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


class EchoBlock(Module):
    """Field convolution to ``cfg.channels`` channels, ECHO descriptors,
    flatten, then an MLP whose first width is ``cfg.width``."""

    def __init__(self, c_in, cfg: EchoConfig, mlp_widths, radial_nodes, band_limit, rng):
        self.cfg = cfg
        self.conv = FieldConv(c_in, cfg.channels, radial_nodes, band_limit, rng)
        self.mlp = MLP([cfg.width] + list(mlp_widths), rng)

    def descriptors(self, X, cache):
        return echo_descriptor(self.conv(X, cache), cache, self.cfg)

    def __call__(self, X, cache):
        d = self.descriptors(X, cache)
        return self.mlp(ad.reshape(d, (d.shape[0], self.cfg.width)))


def echo_block(X, params, cache, cfg: EchoConfig):
    """Functional ECHO block; ``params`` holds ``coeffs``, ``offsets`` and an
    ``mlp`` list of ``(W, b)`` pairs."""
    d = echo_descriptor(field_convolve_t(X, params["coeffs"], params["offsets"], cache), cache, cfg)
    x = ad.reshape(d, (d.shape[0], cfg.width))
    layers = params["mlp"]
    if layers and ad.as_tensor(layers[0][0]).shape[1] != cfg.width:
        raise ShapeError(f"first MLP layer expects {ad.as_tensor(layers[0][0]).shape[1]} inputs, descriptors give {cfg.width}")
    for i, (W, b) in enumerate(layers):
        x = linear(x, W, b)
        if i < len(layers) - 1:
            x = ad.relu(x)
    return x
