"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure computing the vector-Jacobian product.  Calling
:meth:`Tensor.backward` on a scalar orders the recorded graph topologically
(the tape) and replays the closures once each, in reverse.

Sparse matrices (scipy) only ever appear as constants.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
import scipy.sparse as sp
from scipy.special import erf, expit

from .errors import CgNonConvergence, NonFiniteInput, NonScalarLoss, ShapeMismatch

DTYPE = np.float64
_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _strict() -> bool:
    return getattr(_state, "strict", False)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def strict_finite():
    """Raise :class:`NonFiniteInput` whenever an op receives NaN or inf."""
    prev = _strict()
    _state.strict = True
    try:
        yield
    finally:
        _state.strict = prev


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical streams on every platform for a given seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar loss, got shape {self.shape}")
        order = self._tape()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        # drop references so intermediate arrays can be freed
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    def _tape(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    # -- operator sugar --------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_inputs(*arrays):
    if _strict():
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteInput("non-finite value entering a tensor op")


def _make(data, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# -- elementwise binary --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_inputs(a.data, b.data)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_inputs(a.data, b.data)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_inputs(a.data, b.data)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_inputs(a.data, b.data)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ShapeMismatch(f"div: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / b.data ** 2, b.shape))

    return _make(data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    _check_inputs(a.data)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    _check_inputs(a.data)
    p = float(exponent)
    data = a.data ** p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


# -- linear algebra ------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_inputs(a.data, b.data)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def spmm(matrix, x) -> Tensor:
    """``matrix @ x`` with a constant scipy sparse ``matrix``."""
    x = as_tensor(x)
    _check_inputs(x.data)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm: {matrix.shape} @ {x.shape}")
    mt = matrix.T.tocsr()
    return _make(np.asarray(matrix @ x.data), (x,), lambda g: (np.asarray(mt @ g),))


def _jacobi_cg(matrix, rhs, tol, max_iter):
    """Jacobi-preconditioned CG on every column of ``rhs`` at once."""
    squeeze = rhs.ndim == 1
    b = rhs[:, None] if squeeze else rhs
    inv_diag = 1.0 / matrix.diagonal()
    x = b * inv_diag[:, None]
    r = b - matrix @ x
    z = r * inv_diag[:, None]
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    bnorm = np.linalg.norm(b, axis=0)
    bnorm[bnorm == 0] = 1.0
    res = np.linalg.norm(r, axis=0) / bnorm
    it = 0
    while res.max(initial=0.0) > tol and it < max_iter:
        ap = matrix @ p
        pap = np.einsum("ij,ij->j", p, ap)
        active = res > tol
        alpha = np.where(active, rz / np.where(pap == 0, 1.0, pap), 0.0)
        x += p * alpha
        r -= ap * alpha
        z = r * inv_diag[:, None]
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(active, rz_new / np.where(rz == 0, 1.0, rz), 0.0)
        p = z + p * beta
        rz = rz_new
        res = np.linalg.norm(r, axis=0) / bnorm
        it += 1
    if res.max(initial=0.0) > tol:
        raise CgNonConvergence(float(res.max()), it)
    return x[:, 0] if squeeze else x


def solve_spd(matrix, b, tol: float = 1e-8, max_iter: int = 500) -> Tensor:
    """Solve ``matrix @ x = b`` for a constant sparse SPD ``matrix``.

    The backward pass runs CG again on the (identical, symmetric) system.
    """
    b = as_tensor(b)
    _check_inputs(b.data)
    if matrix.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"solve: {matrix.shape} vs {b.shape}")
    x = _jacobi_cg(matrix, b.data, tol, max_iter)
    return _make(x, (b,), lambda g: (_jacobi_cg(matrix, g, tol, max_iter),))


# -- shape ops -----------------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    _check_inputs(*[t.data for t in ts])
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch("concat: " + ", ".join(str(t.shape) for t in ts)) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(data, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def index_select(a, index) -> Tensor:
    """Numpy-style indexing (row slices, column slices, gathers)."""
    a = as_tensor(a)
    data = a.data[index]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.array(data, dtype=DTYPE), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    _check_inputs(a.data)
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=DTYPE)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / count)


# -- elementwise unary ---------------------------------------------------

def _unary(a, fn, dfn) -> Tensor:
    a = as_tensor(a)
    _check_inputs(a.data)
    data = fn(a.data)
    return _make(data, (a,), lambda g: (g * dfn(a.data, data),))


def sin(a):
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a):
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sigmoid(a):
    return _unary(a, expit, lambda x, y: y * (1.0 - y))


def softplus(a):
    return _unary(a, lambda x: np.logaddexp(0.0, x), lambda x, y: expit(x))


def gelu(a):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    def fn(x):
        return 0.5 * x * (1.0 + erf(x / _SQRT2))

    def dfn(x, y):
        return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)

    return _unary(a, fn, dfn)


def clip(a, lo: float, hi: float):
    return _unary(a, lambda x: np.clip(x, lo, hi), lambda x, y: ((x >= lo) & (x <= hi)).astype(DTYPE))


# -- row-wise ops --------------------------------------------------------

def softmax(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs(a.data)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _make(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def layer_norm(a, gain=None, bias=None, eps: float = 1e-10) -> Tensor:
    """Per-row normalization to zero mean / unit population variance, then affine."""
    a = as_tensor(a)
    _check_inputs(a.data)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = a.shape[-1]

    def backward(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    out = _make(xhat, (a,), backward)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    assert out.shape[-1] == d
    return out


def dropout(a, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(DTYPE) / (1.0 - p)
    return mul(a, Tensor(keep))


def nll(probs, labels) -> Tensor:
    """Per-row ``-log probs[i, labels[i]]`` (vector)."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    picked = index_select(probs, (np.arange(len(labels)), labels))
    return scale(log(picked), -1.0)


# -- gradient checking ---------------------------------------------------

def _relative_error(analytic, numeric) -> float:
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max(initial=0.0))


def numeric_gradient(function, params, step: float = 1e-6, stencil: int = 2) -> list:
    """Central differences; ``stencil=4`` uses the fourth-order five-point rule."""
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    grads = []
    with no_grad():
        for p in params:
            p.data = np.array(p.data, dtype=np.float64)  # owned ndarray, so in-place edits reach the graph
            g = np.zeros_like(p.data)
            for k in np.ndindex(p.data.shape):
                orig = p.data[k]

                def f(offset):
                    p.data[k] = orig + offset
                    return float(function().data)

                if stencil == 2:
                    g[k] = (f(step) - f(-step)) / (2.0 * step)
                else:
                    g[k] = (8.0 * (f(step) - f(-step)) - (f(2 * step) - f(-2 * step))) / (12.0 * step)
                p.data[k] = orig
            grads.append(g)
    return grads


def gradcheck_params(function, params, step: float = 1e-6, stencil: int = 2) -> float:
    """Max relative error between backprop and central differences.

    ``function`` takes no arguments and returns a scalar Tensor built from
    ``params`` (which must have ``requires_grad=True``).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    for p in params:
        p.grad = None
    function().backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = numeric_gradient(function, params, step, stencil)
    return max((_relative_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)


def gradcheck(function, point: Tensor, step: float = 1e-6, stencil: int = 2) -> float:
    """Single-input form: ``function(point)`` must return a scalar Tensor."""
    point.requires_grad = True
    return gradcheck_params(lambda: function(point), [point], step, stencil)
