"""ADAM, losses and finite-difference gradient checking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

log = logging.getLogger(__name__)


class Adam:
    """ADAM with bias correction over named parameters.

    Complex parameters are updated as independent real and imaginary parts.
    """

    def __init__(self, params: dict, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros(_real_view(p.value).shape) for k, p in self.params.items()}
        self.v = {k: np.zeros(_real_view(p.value).shape) for k, p in self.params.items()}

    def step(self, grads: dict) -> bool:
        """Apply one update from ``grads`` (keyed by name or Parameter).

        A non-finite gradient skips the update and returns False.
        """
        by_name = {}
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = grads.get(p)
            by_name[k] = np.zeros_like(p.value) if g is None else np.asarray(g)
            if by_name[k].shape != p.value.shape:
                raise ShapeError(f"gradient for {k} has shape {by_name[k].shape}, expected {p.value.shape}")
        bad = [k for k, g in by_name.items() if not np.all(np.isfinite(g))]
        if bad:
            log.warning("non-finite gradient in %s; step skipped", ", ".join(bad))
            return False
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = _real_view(np.ascontiguousarray(by_name[k], dtype=p.value.dtype))
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            pv = _real_view(p.value)
            pv -= upd
        return True

    def state_dict(self) -> dict:
        return {
            "step": self.step_count, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.lr, self.beta1, self.beta2, self.eps = (float(state[k]) for k in ("lr", "beta1", "beta2", "eps"))
        for k in self.params:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def _real_view(a: np.ndarray) -> np.ndarray:
    """Writable float64 view; complex arrays become interleaved (re, im)."""
    if np.iscomplexobj(a):
        return a.view(np.float64)
    return a


# ---------------------------------------------------------------------------
# Losses

def cross_entropy_smoothed(logits, target, smoothing: float = 0.0):
    """Softmax cross-entropy against ``1 - smoothing`` on the target class and
    ``smoothing / (K - 1)`` elsewhere, averaged over rows.

    ``logits`` is (K,) with an int target, or (n, K) with n targets.
    """
    logits = ad.as_tensor(logits)
    if not 0 <= smoothing < 1:
        raise ValueError("smoothing must lie in [0, 1)")
    single = logits.ndim == 1
    if single:
        logits = ad.reshape(logits, (1, -1))
    n, K = logits.shape
    target = np.atleast_1d(np.asarray(target))
    if target.shape != (n,) or not np.issubdtype(target.dtype, np.integer):
        raise ShapeError("need one integer target per row")
    if target.min() < 0 or target.max() >= K:
        raise ValueError(f"target class outside [0, {K})")
    if K < 2 and smoothing > 0:
        raise ValueError("label smoothing needs at least two classes")
    q = np.full((n, K), smoothing / (K - 1) if K > 1 else 0.0)
    q[np.arange(n), target] = 1.0 - smoothing
    lp = ad.log_softmax(logits, axis=1)
    return ad.mul(ad.sum_(ad.mul(lp, q)), -1.0 / n)


def smoothed_target_entropy(K: int, smoothing: float) -> float:
    h = 0.0
    if smoothing < 1:
        h -= (1 - smoothing) * math.log(1 - smoothing)
    if smoothing > 0:
        h -= smoothing * (math.log(smoothing) - math.log(K - 1))
    return h


def twin_loss(F_S, F_M, pairs, seed=None, margin: float = 5.0, alpha=None):
    """Contrastive loss over ``(s, m, is_correspondence)`` triples:
    ``alpha d^2 + (1 - alpha) max(0, margin - d^2)`` with ``alpha = 1`` for
    correspondences and ``alpha ~ U[0, 0.2]`` otherwise. A given ``alpha``
    (scalar or one value per pair) replaces the draw for non-correspondences."""
    F_S, F_M = ad.as_tensor(F_S), ad.as_tensor(F_M)
    if F_S.ndim != 2 or F_M.ndim != 2 or F_S.shape[1] != F_M.shape[1]:
        raise ShapeError(f"descriptor dimensions differ: {F_S.shape} vs {F_M.shape}")
    pairs = list(pairs)
    s = np.array([p[0] for p in pairs], dtype=np.int64)
    m = np.array([p[1] for p in pairs], dtype=np.int64)
    corr = np.array([bool(p[2]) for p in pairs])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if alpha is None:
        alpha = rng.uniform(0.0, 0.2, len(pairs))
    alpha = np.where(corr, 1.0, np.broadcast_to(np.asarray(alpha, dtype=np.float64), (len(pairs),)))
    d2 = ad.sum_(ad.square(ad.sub(F_S[s], F_M[m])), axis=1)
    hinge = ad.relu(ad.sub(margin, d2))
    return ad.sum_(ad.add(ad.mul(d2, alpha), ad.mul(hinge, 1.0 - alpha)))


# ---------------------------------------------------------------------------
# Gradient checking

@dataclass
class KindReport:
    kind: str
    n: int
    max_rel: float
    mean_rel: float
    passed: bool


@dataclass
class GradcheckReport:
    tolerance: float
    kinds: dict[str, KindReport] = field(default_factory=dict)
    failures: list[tuple[str, tuple, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(k.passed for k in self.kinds.values())

    @property
    def max_rel(self) -> float:
        return max((k.max_rel for k in self.kinds.values()), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if k.passed else 'FAIL'} {k.kind:16s} n={k.n:4d} max_rel={k.max_rel:.3e} mean_rel={k.mean_rel:.3e}"
            for k in self.kinds.values()
        ]


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|)``; pairs with both magnitudes below ``floor``
    are compared absolutely."""
    return abs(a - b) / max(abs(a), abs(b), floor)


# (offset, weight) pairs; the derivative is sum(w * f(x + k h)) / h
_STENCILS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((1, 2 / 3), (-1, -2 / 3), (2, -1 / 12), (-2, 1 / 12)),
}


def gradcheck(loss_fn, params, tolerance: float = 1e-5, step: float = 1e-5, samples: int = 100,
              seed: int = 0, order: int = 2) -> GradcheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must rebuild the real scalar loss from the current values of
    ``params`` (dict name -> Parameter). ``samples`` real coordinates are drawn
    per layer kind. Each complex entry contributes a real and an imaginary
    coordinate.

    ``order`` selects the symmetric stencil: 2 is the classic
    ``(f(x+h) - f(x-h)) / 2h``, 4 the five-point rule with O(h^4) truncation.
    The higher order allows a larger ``step``, which keeps float64 roundoff
    (about ``1e-16 * |L| / h``) well below small gradients.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    stencil = _STENCILS[order]
    params = dict(params)
    with ad.Tape() as tape:
        loss = loss_fn()
    grads = ad.backward(tape, loss, list(params.values()))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)

    coords_by_kind: dict[str, list] = {}
    for name, p in params.items():
        nreal = ad.numel_real(p.value)
        coords_by_kind.setdefault(p.kind or name, []).extend((name, i) for i in range(nreal))
    for kind, coords in coords_by_kind.items():
        if len(coords) > samples:
            idx = rng.choice(len(coords), samples, replace=False)
            coords = [coords[i] for i in sorted(idx)]
        errs = []
        for name, i in coords:
            p = params[name]
            flat = _real_view(p.value).reshape(-1)
            analytic = float(_real_view(np.ascontiguousarray(grads[p])).reshape(-1)[i])
            orig = flat[i]
            numeric = 0.0
            for k, c in stencil:
                flat[i] = orig + k * step
                numeric += c * float(loss_fn().value)
            flat[i] = orig
            numeric /= step
            e = relative_error(analytic, numeric)
            errs.append(e)
            if e > tolerance:
                report.failures.append((name, (i,), analytic, numeric, e))
        report.kinds[kind] = KindReport(kind, len(errs), max(errs), float(np.mean(errs)), max(errs) <= tolerance)
    return report
