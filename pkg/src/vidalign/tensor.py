"""A small dense tensor type with reverse-mode automatic differentiation.

Every array in the model is a :class:`Tensor` wrapping a float64 numpy array.
Operations build a graph on the fly; :func:`backward` walks it in reverse
topological order and returns gradients for the leaves.

Only the operations needed by the model are provided: affine maps, the three
pointwise nonlinearities, reductions, broadcasting arithmetic, concatenation,
gathers, L2 normalisation, cosine similarity and softmax.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError

DTYPE = np.float64
EPS = 1e-12

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """Dense float64 array that records how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __len__(self):
        return len(self.data)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward_fn if needs else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), back, "div")


def elementwise(x, y, op: str) -> Tensor:
    """Broadcasting binary op, ``op`` one of ``add``, ``sub``, ``mul``."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise InputError(f"unknown elementwise op {op!r}") from None
    return fn(x, y)


def matmul(a, b, rowwise=False) -> Tensor:
    """``a[..., K] @ b[K, M]``; ``b`` must be two-dimensional.

    With ``rowwise`` the product skips BLAS, whose kernels may sum different
    rows in different orders, so that permuting the rows of ``a`` permutes the
    result exactly.
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    out = np.einsum("...k,km->...m", a.data, b.data) if rowwise else a.data @ b.data
    return _make(out, (a, b), back, "matmul")


def affine(x, W, b, rowwise=False) -> Tensor:
    """Per-position affine map over the trailing axis: ``x @ W + b``.

    Also serves as a 1x1x1 convolution when ``x`` is a channel-last volume.
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise InputError(f"affine parameter shapes {W.shape}, {b.shape} are inconsistent")
    if x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise InputError(f"affine input trailing axis {x.shape} does not match Din={W.shape[0]}")
    return add(matmul(x, W, rowwise), b)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise InputError("transpose expects a 2-D tensor")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


# --------------------------------------------------------------- pointwise


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x) -> Tensor:
    # subgradient at exactly 0 is 0
    x = as_tensor(x)
    active = x.data > 0
    return _make(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


_POINTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def pointwise(x, fn: str) -> Tensor:
    try:
        return _POINTWISE[fn](x)
    except KeyError:
        raise InputError(f"unknown pointwise function {fn!r}") from None


# -------------------------------------------------------------- reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), (x,), back, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axes, keepdims), 1.0 / count)


def reduce(x, op: str, axes=None) -> Tensor:
    if op == "sum":
        return tsum(x, axes)
    if op == "mean":
        return mean(x, axes)
    raise InputError(f"unknown reduction {op!r}")


# ----------------------------------------------------------------- shaping


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise InputError(f"cannot concatenate: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, back, "concat")


def concat_channels(a, b, axis=0) -> Tensor:
    """Stack ``a[Ca, ...]`` and ``b[Cb, ...]`` into ``[Ca+Cb, ...]``."""
    return concat([a, b], axis=axis)


def take(x, indices, axis=0) -> Tensor:
    """Gather ``indices`` along ``axis``; the gradient scatters back with summation."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, idx, axis=axis)

    def back(g):
        grad = np.zeros_like(x.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if idx.ndim == 1 else g)
        return (grad,)

    return _make(out, (x,), back, "take")


def embed_lookup(table, ids) -> Tensor:
    """Rows of an embedding table; scalar id -> ``[E]``, id array -> ``[K, E]``."""
    table = as_tensor(table)
    arr = np.asarray(ids)
    if arr.size and (arr.min() < 0 or arr.max() >= table.shape[0]):
        raise InputError(f"token id out of range for vocabulary of size {table.shape[0]}")
    return take(table, arr, axis=0)


# ------------------------------------------------------ normalised geometry


def l2_normalize(x, axis=-1, eps=EPS) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom

    def back(g):
        radial = (g * out).sum(axis=axis, keepdims=True)
        # below eps the denominator is the constant eps
        inside = norm > eps
        return (np.where(inside, (g - out * radial) / denom, g / eps),)

    return _make(out, (x,), back, "l2_normalize")


def cosine_similarity(a, b, axis=-1, eps=EPS) -> Tensor:
    """``a.b / (max(|a|, eps) max(|b|, eps))`` along ``axis`` with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[axis] != b.shape[axis]:
        raise InputError(f"cosine similarity needs equal lengths, got {a.shape} and {b.shape}")
    return tsum(mul(l2_normalize(a, axis, eps), l2_normalize(b, axis, eps)), axis)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    # summing in sorted order makes the result exactly permutation-equivariant
    out = e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back, "softmax")


def softmax_positions(scores, beta) -> Tensor:
    """Temperature softmax over every position of ``scores`` jointly."""
    if not beta > 0:
        raise ConfigError(f"softmax temperature must be positive, got {beta}")
    scores = as_tensor(scores)
    flat = reshape(mul(scores, 1.0 / beta), (-1,))
    return reshape(softmax(flat, axis=0), scores.shape)


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Reverse-mode pass from a scalar ``loss``.

    Leaves reached by the graph get their ``.grad`` set. Returns a dict from
    leaf tensor to gradient array, or, when ``params`` is given, a list of
    gradients aligned with ``params`` (zeros for parameters the loss does not
    touch).
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise InputError("backward needs a scalar (0-d) loss tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        for node in reversed(_topological(loss)):
            g = grads.get(id(node))
            if g is None:
                continue
            if node._backward is None:
                leaves[id(node)] = node
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else np.array(pg, dtype=DTYPE)
    out = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key]
        out[leaf] = grads[key]
    if params is None:
        return out
    return [out.get(p, np.zeros_like(p.data)) for p in params]


def kink_margin(loss: Tensor) -> float:
    """Smallest ``|input|`` over every relu in the graph of ``loss`` (inf if none)."""
    margin = np.inf
    for node in _topological(loss):
        if node.op == "relu":
            margin = min(margin, float(np.abs(node._parents[0].data).min()))
    return margin


# ------------------------------------------------------------ gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: bool = False
    worst: str | None = None
    kink_margin: float = float("inf")
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.skipped and self.max_rel_error < 1e-4


def grad_check_many(
    f: Callable[[], dict],
    params: Sequence[Tensor],
    h=1e-5,
    kink_tol=1e-4,
    max_elements=None,
    rng=None,
    floor=1e-8,
) -> dict[str, GradCheckReport]:
    """Central-difference check of several scalar outputs sharing one graph.

    ``f`` returns a dict of named scalar tensors and must rebuild the graph
    from the current values in ``params`` on every call; each perturbation is
    evaluated once for all outputs. Relative error per element uses
    ``max(|analytic|, |numeric|, floor)`` as denominator. If any relu input in
    the graph sits within ``kink_tol`` of zero the point is not differentiable
    enough to compare and every report is marked skipped. ``max_elements``
    caps the number of elements probed per tensor (chosen with ``rng``).
    """
    outputs = f()
    margin = min(kink_margin(v) for v in outputs.values())
    if margin < kink_tol:
        return {k: GradCheckReport(np.nan, 0, skipped=True, kink_margin=margin) for k in outputs}
    analytic = {k: [g.reshape(-1) for g in backward(v, params)] for k, v in outputs.items()}
    worst = {k: [0.0, None] for k in outputs}
    per_param = {k: {} for k in outputs}
    checked = 0
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(rng.choice(flat.size, max_elements, replace=False))
        name = p.name or f"param{i}"
        p_worst = dict.fromkeys(outputs, 0.0)
        for j in idx:
            orig = flat[j]
            with no_grad():
                flat[j] = orig + h
                fp = {k: v.item() for k, v in f().items()}
                flat[j] = orig - h
                fm = {k: v.item() for k, v in f().items()}
            flat[j] = orig
            for k in outputs:
                num = (fp[k] - fm[k]) / (2 * h)
                ga = analytic[k][i][j]
                p_worst[k] = max(p_worst[k], abs(ga - num) / max(abs(ga), abs(num), floor))
            checked += 1
        for k in outputs:
            per_param[k][name] = p_worst[k]
            if worst[k][1] is None or p_worst[k] > worst[k][0]:
                worst[k] = [p_worst[k], name]
    return {
        k: GradCheckReport(float(worst[k][0]), checked, worst=worst[k][1], kink_margin=margin, per_param=per_param[k])
        for k in outputs
    }


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h=1e-5,
    kink_tol=1e-4,
    max_elements=None,
    rng=None,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` with central differences.

    See :func:`grad_check_many` for the error measure and the kink policy.
    """
    return grad_check_many(lambda: {"f": f()}, params, h, kink_tol, max_elements, rng)["f"]
