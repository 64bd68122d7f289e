"""A small reverse-mode differentiation tape over numpy arrays.

Every operation appends a node to its :class:`Tape`; nodes are created in
topological order, so the backward pass is a single reverse sweep over the
node list. Only first derivatives are supported.
"""
from dataclasses import dataclass, field

import numpy as np


class Tape:
    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, name, value):
        """Register a named leaf whose gradient ``backward`` reports."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice on this tape")
        var = Var(self, np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = var
        return var

    def constant(self, value):
        return Var(self, np.asarray(value, dtype=np.float64))

    def lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("cannot mix nodes from different tapes")
            return x
        return self.constant(x)

    def record(self, value, parents, backward_fn):
        needs = any(p.requires_grad for p in parents)
        var = Var(self, value, requires_grad=needs)
        if needs:
            var.parents = parents
            var.backward_fn = backward_fn
        return var


class Var:
    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "requires_grad", "name", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape, value, requires_grad=False, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def detach(self):
        return self.tape.constant(self.value)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, value_fn, grad_fn):
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    out = value_fn(a.value, b.value)

    def backward(g):
        ga, gb = grad_fn(g, a.value, b.value, out)
        return (unbroadcast(ga, a.value.shape) if a.requires_grad else None,
                unbroadcast(gb, b.value.shape) if b.requires_grad else None)

    return tape.record(out, (a, b), backward)


def _unary(a, value, grad_fn):
    return a.tape.record(value, (a,), lambda g: (grad_fn(g),))


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y, o: (g, g))


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y, o: (g, -g))


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, o: (g * y, g * x))


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y, o: (g / y, -g * x / (y * y)))


def neg(a):
    return _unary(a, -a.value, lambda g: -g)


def matmul(a, w):
    """``a @ w`` for ``a`` of shape (..., n) and a 2-D ``w`` of shape (n, m)."""
    tape = _tape_of(a, w)
    a, w = tape.lift(a), tape.lift(w)
    if w.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {w.shape}")
    out = a.value @ w.value

    def backward(g):
        ga = g @ w.value.T if a.requires_grad else None
        gw = None
        if w.requires_grad:
            a2 = a.value.reshape(-1, a.shape[-1])
            gw = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return tape.record(out, (a, w), backward)


def power(a, p):
    p = float(p)
    return _unary(a, a.value ** p, lambda g: g * p * a.value ** (p - 1.0))


def square(a):
    return _unary(a, a.value * a.value, lambda g: 2.0 * g * a.value)


def exp(a):
    out = np.exp(a.value)
    return _unary(a, out, lambda g: g * out)


def log(a):
    return _unary(a, np.log(a.value), lambda g: g / a.value)


def sqrt(a):
    out = np.sqrt(a.value)
    # zero subgradient at the kink keeps exact-fit losses finite
    safe = np.where(out > 0.0, out, 1.0)
    return _unary(a, out, lambda g: np.where(out > 0.0, g / (2.0 * safe), 0.0))


def sigmoid(a):
    x = a.value
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def leaky_relu(a, slope=0.2):
    x = a.value
    pos = x > 0
    return _unary(a, np.where(pos, x, slope * x), lambda g: np.where(pos, g, slope * g))


def tanh(a):
    out = np.tanh(a.value)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _unary(a, out, grad)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def log_softmax(a, axis=-1):
    x = a.value
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _unary(a, out, lambda g: g - soft * np.sum(g, axis=axis, keepdims=True))


def reshape(a, shape):
    orig = a.shape
    return _unary(a, a.value.reshape(shape), lambda g: g.reshape(orig))


def take(a, idx):
    """Basic or fancy indexing; the gradient is scattered back with ``np.add.at``."""
    shape = a.shape

    def grad(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _unary(a, a.value[idx], grad)


def concat(xs, axis=0):
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    out = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record(out, tuple(xs), backward)


def where(mask, a, b):
    """Elementwise select; gradients flow only to the chosen branch."""
    mask = np.asarray(mask, dtype=bool)
    return _binary(a, b, lambda x, y: np.where(mask, x, y),
                   lambda g, x, y, o: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)))


def backward(tape, loss):
    """Run the reverse sweep from scalar ``loss``; return ``{name: gradient}``.

    Registered parameters the loss does not reach get zero gradients.
    """
    if loss.tape is not tape:
        raise ValueError("loss node belongs to a different tape")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        if node.grad is None or node.backward_fn is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    return {name: (np.zeros_like(v.value) if v.grad is None else v.grad)
            for name, v in tape.params.items()}


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    errors: dict = field(default_factory=dict, repr=False)

    def passed(self, tol=1e-5):
        return self.max_rel_error < tol


def _loss_value(fn, params):
    tape = Tape()
    pv = {k: tape.param(k, v) for k, v in params.items()}
    return float(fn(tape, pv).value)


def gradient_check(fn, params, step=1e-6, floor=1e-4, transform=None):
    """Compare tape gradients of ``fn`` with central finite differences.

    ``fn(tape, param_vars)`` must build and return a scalar loss node.
    The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps coordinates whose true gradient is ~0 from reporting roundoff as
    relative error. ``transform`` lets callers tamper with the analytic
    gradients (negative controls).
    """
    if not 1e-8 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-8, 1e-3], got {step}")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    tape = Tape()
    pv = {k: tape.param(k, v.copy()) for k, v in work.items()}
    grads = backward(tape, fn(tape, pv))
    if transform is not None:
        grads = transform(grads)

    worst = (-1.0, "", (), 0.0, 0.0)
    errors = {}
    n = 0
    for name, arr in work.items():
        err = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            fp = _loss_value(fn, work)
            arr[idx] = orig - step
            fm = _loss_value(fn, work)
            arr[idx] = orig
            num = (fp - fm) / (2.0 * step)
            ana = float(grads[name][idx])
            e = abs(ana - num) / max(abs(ana), abs(num), floor)
            err[idx] = e
            n += 1
            if e > worst[0]:
                worst = (e, name, idx, ana, num)
        errors[name] = err
    return GradCheckReport(max(worst[0], 0.0), worst[1], worst[2], worst[3], worst[4], n, errors)
