"""Band-limited filters and the discrete field convolution.

For a field ``X`` with polar form ``rho_q * exp(1j * phi_q)`` the output at
vertex ``p`` is

    sum_{q, c_in, |m| <= B}  w_q rho_q exp(1j (phi_q + phi_pq))
                             f_m(r_qp) exp(1j beta_|m|) exp(1j m (theta_qp - phi_q))

Because ``rho exp(1j phi) exp(-1j m phi) = rho exp(1j (1 - m) phi)`` the sum
factors into one constant sparse operator per frequency ``m`` applied to the
re-phased field, followed by a dense contraction with the coefficients.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .errors import ShapeError
from .intrinsic import IntrinsicCache


def count_parameters(radial_nodes: int, band_limit: int) -> int:
    """Real degrees of freedom of one filter: ``N(2B+1) + B + 1``."""
    if radial_nodes < 1 or band_limit < 0:
        raise ValueError("need radial_nodes >= 1 and band_limit >= 0")
    return radial_nodes * (2 * band_limit + 1) + band_limit + 1


def radial_weights(r, epsilon: float, n_nodes: int):
    """Linear-interpolation weights on ``n_nodes`` nodes spread uniformly over
    ``[0, epsilon]`` (both ends included).

    Returns ``(lo, frac)``: weight ``1 - frac`` on node ``lo`` and ``frac`` on
    node ``lo + 1``.
    """
    r = np.asarray(r, dtype=np.float64)
    if n_nodes == 1:
        return np.zeros(r.shape, dtype=np.int64), np.zeros(r.shape)
    t = r * (n_nodes - 1) / epsilon
    snapped = np.round(t)
    t = np.where(np.abs(t - snapped) < 1e-12, snapped, t)
    lo = np.clip(np.floor(t), 0, n_nodes - 2).astype(np.int64)
    return lo, t - lo


@dataclass
class FCFilter:
    """Filter bank for one convolution.

    ``coeffs[c_in, c_out, m, n]`` holds ``f_m`` at radial node ``n`` for
    ``m = 0..B``; negative frequencies are the conjugates and ``f_0`` is real
    (its imaginary part is ignored). ``offsets[|m|]`` are rotational offsets
    shared by all channel pairs.
    """

    coeffs: np.ndarray
    offsets: np.ndarray
    epsilon: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.coeffs.ndim != 4:
            raise ShapeError("coeffs must have shape (C_in, C_out, B+1, N)")
        if self.offsets.shape != (self.coeffs.shape[2],):
            raise ShapeError("offsets must have shape (B+1,)")

    @property
    def band_limit(self) -> int:
        return self.coeffs.shape[2] - 1

    @property
    def radial_nodes(self) -> int:
        return self.coeffs.shape[3]

    @property
    def channels(self) -> tuple[int, int]:
        return self.coeffs.shape[0], self.coeffs.shape[1]

    @classmethod
    def random(cls, c_in, c_out, radial_nodes, band_limit, epsilon, rng, offsets=False):
        # He-style over input channels only: the angular terms largely cancel
        # over a ball, so counting them in the fan-in shrinks every layer ~5x
        s = math.sqrt(3.0 / c_in)
        shape = (c_in, c_out, band_limit + 1, radial_nodes)
        coeffs = rng.uniform(-s, s, shape) + 1j * rng.uniform(-s, s, shape)
        coeffs[:, :, 0, :] = coeffs[:, :, 0, :].real
        beta = rng.uniform(-np.pi, np.pi, band_limit + 1) if offsets else np.zeros(band_limit + 1)
        return cls(coeffs, beta, epsilon)


def eval_filter(coeffs, z: complex, epsilon: float, return_complex: bool = False):
    """Evaluate one channel slice ``coeffs[m, n]`` (shape (B+1, N)) at ``z``.

    Both signs of every frequency are summed explicitly; the result is real
    up to rounding.
    """
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    r = abs(z)
    if r > epsilon:
        raise ValueError(f"|z| = {r} exceeds the support radius {epsilon}")
    B = coeffs.shape[0] - 1
    lo, frac = radial_weights(r, epsilon, coeffs.shape[1])
    lo, frac = int(lo), float(frac)
    theta = cmath.phase(z)

    def f_m(m):
        row = coeffs[abs(m)]
        if m == 0:
            row = row.real.astype(np.complex128)
        elif m < 0:
            row = np.conj(row)
        val = (1 - frac) * row[lo]
        if frac:
            val += frac * row[lo + 1]
        return val

    total = sum(f_m(m) * cmath.exp(1j * m * theta) for m in range(-B, B + 1))
    return total if return_complex else float(total.real)


# ---------------------------------------------------------------------------
# Operators

def _freq_operators(cache: IntrinsicCache, n_nodes: int, band_limit: int):
    """Sparse ``(V*N, V)`` matrices, one per ``m = -B..B``, with entries
    ``w_q exp(1j phi_pq) exp(1j m theta_qp) R_n(r_qp)`` at row ``p*N + n``."""
    key = ("conv", n_nodes, band_limit)
    ops = cache._memo.get(key)
    if ops is not None:
        return ops
    V = cache.n_vertices
    p, q = cache.center, cache.nbr
    lo, frac = radial_weights(cache.r, cache.epsilon, n_nodes)
    base = cache.w * np.exp(1j * cache.phi_pq)
    rows = np.concatenate([p * n_nodes + lo, p * n_nodes + np.minimum(lo + 1, n_nodes - 1)])
    cols = np.concatenate([q, q])
    ops = []
    for m in range(-band_limit, band_limit + 1):
        val = base * np.exp(1j * m * cache.theta_qp)
        data = np.concatenate([val * (1 - frac), val * frac])
        ops.append(sparse.csr_matrix((data, (rows, cols)), shape=(V * n_nodes, V)))
    cache._memo[key] = ops
    return ops


def filter_tensor(coeffs, offsets):
    """Full ``(C_in, C_out, 2B+1, N)`` coefficient tensor over ``m = -B..B``
    with offsets applied, built from autodiff tensors."""
    coeffs, offsets = ad.as_tensor(coeffs), ad.as_tensor(offsets)
    B = coeffs.shape[2] - 1
    f0 = ad.real(coeffs[:, :, 0:1, :])
    parts = []
    if B:
        pos = coeffs[:, :, 1:, :]
        parts.append(ad.conj(pos[:, :, ::-1, :]))
    parts.append(f0)
    if B:
        parts.append(pos)
    full = ad.concatenate(parts, axis=2) if len(parts) > 1 else ad.mul(f0, 1.0 + 0j)
    absm = np.abs(np.arange(-B, B + 1))
    phase = ad.exp_i(offsets)[absm]
    return ad.mul(full, ad.reshape(phase, (1, 1, 2 * B + 1, 1)))


def field_convolve_t(X, coeffs, offsets, cache: IntrinsicCache):
    """Differentiable field convolution of ``X`` (shape (V, C_in))."""
    X = ad.as_tensor(X)
    coeffs = ad.as_tensor(coeffs)
    V = cache.n_vertices
    if X.ndim != 2 or X.shape[0] != V:
        raise ShapeError(f"field has shape {X.shape}, cache expects {V} vertices")
    c_in, c_out, b1, n_nodes = coeffs.shape
    if X.shape[1] != c_in:
        raise ShapeError(f"field has {X.shape[1]} channels, filter expects {c_in}")
    B = b1 - 1
    ops = _freq_operators(cache, n_nodes, B)
    Z = []
    for i, m in enumerate(range(-B, B + 1)):
        Y = ad.phase_power(X, 1 - m)
        Z.append(ad.reshape(ad.spmm(ops[i], Y), (V, n_nodes, c_in)))
    Zs = ad.stack(Z, axis=0)  # (M, V, N, C)
    F = filter_tensor(coeffs, offsets)  # (C, O, M, N)
    return ad.einsum("mvnc,comn->vo", Zs, F)


def _check(X, filt: FCFilter, cache: IntrinsicCache):
    if not math.isclose(filt.epsilon, cache.epsilon, rel_tol=0, abs_tol=1e-12):
        raise ShapeError(f"filter epsilon {filt.epsilon} does not match cache epsilon {cache.epsilon}")
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != cache.n_vertices:
        raise ShapeError(f"field has {X.shape[0]} vertices, cache has {cache.n_vertices}")
    if X.shape[1] != filt.channels[0]:
        raise ShapeError(f"field has {X.shape[1]} channels, filter expects {filt.channels[0]}")
    return X.astype(np.complex128)


def field_convolve(X, filt: FCFilter, cache: IntrinsicCache) -> np.ndarray:
    """Field convolution of a ``(V, C_in)`` complex array; returns ``(V, C_out)``."""
    X = _check(X, filt, cache)
    return field_convolve_t(X, filt.coeffs, filt.offsets, cache).value


def brute_force_convolve(X, filt: FCFilter, cache: IntrinsicCache) -> np.ndarray:
    """Reference evaluation by direct summation, term by term."""
    X = _check(X, filt, cache)
    c_in, c_out = filt.channels
    B, N, eps = filt.band_limit, filt.radial_nodes, filt.epsilon
    out = np.zeros((cache.n_vertices, c_out), dtype=np.complex128)
    for p in range(cache.n_vertices):
        for k in range(cache.offsets[p], cache.offsets[p + 1]):
            q = cache.nbr[k]
            r = cache.r[k]
            if N == 1:
                interp = [1.0]
            else:
                t = r * (N - 1) / eps
                interp = [max(0.0, 1.0 - abs(t - n)) for n in range(N)]
            for ci in range(c_in):
                x = X[q, ci]
                rho = abs(x)
                phi = cmath.phase(x) if rho > 0 else 0.0
                for co in range(c_out):
                    for m in range(-B, B + 1):
                        if m > 0:
                            nodes = filt.coeffs[ci, co, m]
                        elif m < 0:
                            nodes = np.conj(filt.coeffs[ci, co, -m])
                        else:
                            nodes = filt.coeffs[ci, co, 0].real
                        fm = sum(interp[n] * nodes[n] for n in range(N))
                        out[p, co] += (
                            cache.w[k] * rho * cmath.exp(1j * (phi + cache.phi_pq[k]))
                            * fm * cmath.exp(1j * filt.offsets[abs(m)])
                            * cmath.exp(1j * m * (cache.theta_qp[k] - phi))
                        )
    return out
