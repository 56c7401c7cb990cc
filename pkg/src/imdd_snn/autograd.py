"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Only the operations the demappers need are provided. Gradients are computed
by :func:`backward`, which returns fresh gradient arrays and leaves the tape
untouched, so repeated calls give identical results.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray


class Tensor:
    __slots__ = ("data", "parents", "grad_fns", "requires_grad", "op")
    # make ndarray <op> Tensor defer to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, parents: Sequence["Tensor"] = (), grad_fns: Sequence[Callable] = (), op: str = "leaf",
                 requires_grad: bool | None = None):
        self.data = np.asarray(data)
        self.parents = tuple(parents)
        # grad_fns[i] maps the output cotangent to parents[i]'s cotangent
        self.grad_fns = tuple(grad_fns)
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def parameter(data, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


def _unbroadcast(grad: NDArray, shape) -> NDArray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _make(data, op, pairs) -> Tensor:
    pairs = [(p, fn) for p, fn in pairs if p.requires_grad]
    if not pairs:
        return Tensor(data, op=op, requires_grad=False)
    return Tensor(data, [p for p, _ in pairs], [fn for _, fn in pairs], op=op, requires_grad=True)


# --- primitives ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", [(a, lambda g: -g)])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def matmul(a, b) -> Tensor:
    """2-D/3-D batched ``a @ b`` with ``b`` a 2-D matrix."""
    a, b = as_tensor(a), as_tensor(b)

    def grad_b(g):
        return np.tensordot(a.data, g, axes=(list(range(a.data.ndim - 1)), list(range(g.ndim - 1))))

    return _make(a.data @ b.data, "matmul", [(a, lambda g: g @ b.data.T), (b, grad_b)])


def affine(x, w, b) -> Tensor:
    """``x @ w.T + b`` for weights stored as (out, in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    return _make(x.data @ w.data.T + b.data, "affine", [
        (x, lambda g: g @ w.data),
        (w, lambda g: np.atleast_2d(g).T @ np.atleast_2d(x.data) if g.ndim > 1 else np.outer(g, x.data)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", [(a, lambda g: g * (1.0 - out**2))])


def total(a: Tensor) -> Tensor:
    return _make(np.sum(a.data), "sum", [(a, lambda g: np.broadcast_to(g, a.shape).copy())])


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.mean(a.data), "mean", [(a, lambda g: np.full(a.shape, g / n))])


def getitem(a: Tensor, key) -> Tensor:
    def grad(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        out[key] = g
        return out

    return _make(a.data[key], "getitem", [(a, grad)])


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    data = np.stack([t.data for t in items], axis=axis)
    pairs = [(t, (lambda i: lambda g: np.take(g, i, axis=axis))(i)) for i, t in enumerate(items)]
    return _make(data, "stack", pairs)


def max_over(a: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal element only."""
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def grad(g):
        z = np.zeros(a.shape, dtype=g.dtype)
        np.put_along_axis(z, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return z

    return _make(out, "max", [(a, grad)])


def log_softmax_np(logits: NDArray) -> NDArray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax_np(logits: NDArray) -> NDArray:
    return np.exp(log_softmax_np(logits))


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean of -log softmax(logits)[target] over the batch (a single row is a batch of one)."""
    logits = as_tensor(logits)
    targets = np.atleast_1d(np.asarray(targets))
    z = np.atleast_2d(logits.data)
    logp = log_softmax_np(z)
    rows = np.arange(len(targets))
    loss = -np.mean(logp[rows, targets])

    def grad(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (g * d / len(targets)).reshape(logits.shape)

    return _make(loss, "xent", [(logits, grad)])


def lincomb(terms, const=0.0):
    """``sum(c * x for c, x in terms) + const`` as a single tape node.

    Coefficients are constants (scalars or arrays). With no tensor among the
    ``x`` the result is a plain ndarray.
    """
    data = const
    for c, x in terms:
        data = data + c * (x.data if isinstance(x, Tensor) else x)
    if not any(isinstance(x, Tensor) and x.requires_grad for _, x in terms):
        return data
    pairs = [(x, (lambda c, shape: lambda g: _unbroadcast(g * c, shape))(c, x.shape))
             for c, x in terms if isinstance(x, Tensor)]
    return _make(data, "lincomb", pairs)


def heaviside_surrogate(x: Tensor, surrogate: Callable[[NDArray], NDArray], threshold: float = 0.0) -> Tensor:
    """Step function ``x >= threshold`` whose backward pass uses ``surrogate(x)`` as derivative."""
    out = (x.data >= threshold).astype(x.data.dtype)
    return _make(out, "spike", [(x, lambda g: g * surrogate(x.data))])


# --- reverse pass ----------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor]) -> list[NDArray]:
    """Gradients of scalar ``loss`` w.r.t. ``params``; unreachable params get zeros."""
    grads: dict[int, NDArray] = {id(loss): np.ones_like(loss.data, dtype=float)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None:
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            contrib = fn(g)
            key = id(parent)
            grads[key] = grads[key] + contrib if key in grads else contrib
    return [grads.get(id(p), np.zeros_like(p.data, dtype=float)) for p in params]


# --- optimizer -------------------------------------------------------------


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[NDArray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = state["step"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


def adam_step(state: Adam, grads: Sequence[NDArray]) -> list[NDArray]:
    state.step(grads)
    return [p.data for p in state.params]
