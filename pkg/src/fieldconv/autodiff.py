"""Small reverse-mode autodiff over numpy arrays, real or complex.

Gradients of a real loss ``L`` with respect to a complex array ``z`` are
stored packed as ``dL/dRe(z) + 1j * dL/dIm(z)``; every complex entry counts as
two real parameters. Under this convention a holomorphic map ``y = a * z``
back-propagates as ``g_z = conj(a) * g_y`` and a general elementwise map as

    g_z = conj(g_y) * dy/dconj(z) + g_y * conj(dy/dz)

Operations are recorded on the innermost active :class:`Tape`::

    with Tape() as tape:
        loss = model(...)
    grads = backward(tape, loss)
"""

from __future__ import annotations

import threading

import numpy as np

_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "__weakref__")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return index(self, key)


class Parameter(Tensor):
    """Trainable leaf. ``kind`` names the layer family (used by gradcheck)."""

    __slots__ = ("name", "kind")

    def __init__(self, value, name="", kind=""):
        super().__init__(np.array(value), requires_grad=True)
        self.name = name
        self.kind = kind

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Records operations in execution order (a valid topological order)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _make(value, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        tape = _active_tape()
        if tape is not None:
            out = Tensor(value, parents, backward_fn, True)
            tape.nodes.append(out)
            return out
    return Tensor(value)


def _fit(g, like: Tensor):
    """Sum out broadcast axes and drop the imaginary part for real inputs."""
    shape = like.value.shape
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if not np.iscomplexobj(like.value) and np.iscomplexobj(g):
        g = g.real
    return g


class GradientError(ValueError):
    pass


def backward(tape: Tape, loss: Tensor, params=None) -> dict:
    """Gradients of a real scalar ``loss`` with respect to trainable leaves.

    Returns a dict mapping each :class:`Parameter` (those in ``params`` if
    given, else every parameter reached) to its gradient; parameters that do
    not influence the loss get exact zeros.
    """
    if np.iscomplexobj(loss.value) or np.size(loss.value) != 1:
        raise GradientError("loss must be a real scalar")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        if not tape.nodes or not any(n is loss for n in reversed(tape.nodes)):
            raise GradientError("loss is not recorded on this tape (detached node)")
        grads[id(loss)] = np.ones_like(loss.value, dtype=np.float64)
        leaves: dict[int, Tensor] = {}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            pg = node.backward_fn(g)
            for parent, gp in zip(node.parents, pg):
                if gp is None or not parent.requires_grad:
                    continue
                gp = _fit(gp, parent)
                k = id(parent)
                if k in grads:
                    grads[k] = grads[k] + gp
                else:
                    grads[k] = gp
                if parent.backward_fn is None:
                    leaves[k] = parent
        found = {leaves[k]: grads[k] for k in leaves}
    elif params is None:
        raise GradientError("loss does not depend on any trainable parameter")
    else:
        found = {}
    if params is None:
        return found
    out = {}
    for p in params:
        g = found.get(p)
        out[p] = np.zeros_like(p.value) if g is None else g
    return out


# ---------------------------------------------------------------------------
# Elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def div(a, b):
    """``a / b`` for real ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b), lambda g: (g / bv, -np.real(g * np.conj(out)) / bv))


def conj(a):
    a = as_tensor(a)
    return _make(np.conj(a.value), (a,), lambda g: (np.conj(g),))


def real(a):
    a = as_tensor(a)
    return _make(np.real(a.value).copy(), (a,), lambda g: (g.astype(np.complex128) if a.is_complex else g,))


def imag(a):
    a = as_tensor(a)
    return _make(np.imag(a.value).copy(), (a,), lambda g: (1j * g,))


def square(a):
    """Elementwise ``x**2`` for real input."""
    a = as_tensor(a)
    v = a.value
    return _make(v * v, (a,), lambda g: (2.0 * g * v,))


def abs2(a):
    """``|z|**2``."""
    a = as_tensor(a)
    v = a.value
    return _make((v * np.conj(v)).real, (a,), lambda g: (2.0 * g * v,))


def abs_(a):
    """``|z|``; the gradient at zero is taken as zero."""
    a = as_tensor(a)
    v = a.value
    m = np.abs(v)
    safe = np.where(m > 0, m, 1.0)
    u = np.where(m > 0, v / safe, 0.0)
    return _make(m, (a,), lambda g: (g * u,))


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * np.conj(out),))


def log(a):
    a = as_tensor(a)
    v = a.value
    return _make(np.log(v), (a,), lambda g: (g / np.conj(v),))


def exp_i(a):
    """``exp(1j * a)`` for real ``a``."""
    a = as_tensor(a)
    out = np.exp(1j * a.value)
    return _make(out, (a,), lambda g: (np.real(np.conj(g) * 1j * out),))


def _polar_parts(v):
    m = np.abs(v)
    nz = m > 0
    safe = np.where(nz, m, 1.0)
    u = np.where(nz, v / safe, 1.0 + 0j)
    return m, u, nz, safe


def _wirtinger(g, d_dz, d_dzbar):
    return np.conj(g) * d_dzbar + g * np.conj(d_dz)


def phase_power(a, k: int):
    """``rho * exp(1j * k * phi)`` for ``z = rho * exp(1j * phi)`` (phi=0 at z=0)."""
    a = as_tensor(a)
    v = a.value
    m, u, nz, _ = _polar_parts(v)
    if k == 1:
        out = v.astype(np.complex128)
        return _make(out, (a,), lambda g: (g,))
    uk = u ** k
    out = m * uk

    def bw(g):
        d_dz = 0.5 * (1 + k) * u ** (k - 1)
        d_dzbar = 0.5 * (1 - k) * u ** (k + 1)
        return (np.where(nz, _wirtinger(g, d_dz, d_dzbar), 0.0),)

    return _make(out, (a,), bw)


def unit(a, guard: float = 1e-12):
    """``z / |z|``, and 0 where ``|z| <= guard`` (zero gradient there)."""
    a = as_tensor(a)
    v = a.value
    m = np.abs(v)
    ok = m > guard
    safe = np.where(ok, m, 1.0)
    u = np.where(ok, v / safe, 0.0)

    def bw(g):
        d_dz = 0.5 / safe
        d_dzbar = -0.5 * u * u / safe
        return (np.where(ok, _wirtinger(g, d_dz, d_dzbar), 0.0),)

    return _make(u, (a,), bw)


def radial_relu(a, b):
    """``max(|z| + b, 0) * z/|z|`` with real offsets ``b`` broadcast over ``z``."""
    a, b = as_tensor(a), as_tensor(b)
    v = a.value
    m, u, nz, safe = _polar_parts(v)
    s = m + b.value
    on = s > 0
    # scale z itself so b = 0 returns the input bitwise
    out = np.where(on, np.where(nz, v * (s / safe), s * u), 0.0)

    def bw(g):
        bb = np.broadcast_to(b.value, v.shape)
        d_dz = 1.0 + 0.5 * bb / safe
        d_dzbar = -0.5 * bb * u * u / safe
        gz = np.where(on & nz, _wirtinger(g, d_dz, d_dzbar), 0.0)
        gb = np.where(on, np.real(np.conj(g) * u), 0.0)
        return gz, gb

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# Reductions, shapes and indexing

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.value.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a, key):
    """Basic or advanced indexing; repeated indices accumulate gradients."""
    a = as_tensor(a)

    def bw(g):
        out = np.zeros(a.value.shape, dtype=g.dtype if np.iscomplexobj(g) else a.value.dtype)
        np.add.at(out, key, g)
        return (out,)

    return _make(a.value[key], (a,), bw)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        lead = (slice(None),) * (axis % g.ndim)
        return tuple(g[lead + (i,)] for i in range(len(tensors)))

    return _make(np.stack([t.value for t in tensors], axis=axis), tensors, bw)


def einsum(subscripts: str, a, b):
    """Two-operand ``numpy.einsum`` without repeated output indices."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    av, bv = a.value, b.value

    def bw(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, np.conj(bv), optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, np.conj(av), optimize=True) if b.requires_grad else None
        return ga, gb

    return _make(np.einsum(subscripts, av, bv, optimize=True), (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ np.conj(bv).T if a.requires_grad else None
        gb = np.conj(av).T @ g if b.requires_grad else None
        return ga, gb

    return _make(av @ bv, (a, b), bw)


def spmm(S, a):
    """Constant sparse matrix times a tensor along its first axis."""
    a = as_tensor(a)
    v = a.value
    flat = v.reshape(v.shape[0], -1)
    out = (S @ flat).reshape((S.shape[0],) + v.shape[1:])

    def bw(g):
        SH = _adjoint(S)
        return ((SH @ g.reshape(g.shape[0], -1)).reshape(v.shape),)

    return _make(out, (a,), bw)


def _adjoint(S):
    """Conjugate transpose of a sparse operator, kept on the operator itself
    since the same operators recur in every forward pass."""
    SH = getattr(S, "_fc_adjoint", None)
    if SH is None:
        SH = S.conj().T.tocsr() if np.iscomplexobj(S.data) else S.T.tocsr()
        S._fc_adjoint = SH
    return SH


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    v = a.value
    mx = v.max(axis=axis, keepdims=True)
    lse = mx + np.log(np.exp(v - mx).sum(axis=axis, keepdims=True))
    out = v - lse
    sm = np.exp(out)
    return _make(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def constant(x) -> Tensor:
    return Tensor(np.asarray(x))


def numel_real(value) -> int:
    """Real degrees of freedom of an array."""
    return value.size * (2 if np.iscomplexobj(value) else 1)
