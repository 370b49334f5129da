"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a closure that maps the output
gradient to parent gradients. ``Tensor.backward`` walks the recorded graph
in reverse topological order, so each graph is its own tape. Graphs built on
different threads share nothing.
"""

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "NonFiniteError",
    "as_tensor",
    "matmul",
    "add",
    "mul",
    "concat",
    "softmax",
    "layernorm",
    "gelu",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "bce_with_logits",
]


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def _check_finite(values, op):
    # a NaN/Inf anywhere makes the sum non-finite; so does overflow, which is fine to flag
    if not math.isfinite(values.sum()):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return values


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in a differentiation graph.

    Parameters
    ----------
    data : array-like
        Values, converted to a float64 array.
    requires_grad : bool, default=False
        Leaves with ``requires_grad=True`` receive ``.grad`` on backward.
    name : str, optional
        Label used in diagnostics and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = _check_finite(np.array(data, dtype=np.float64), name or "tensor")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return self.transpose()

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(values, parents, backward, op):
        parents = tuple(parents)
        needs = any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = _check_finite(values, op)
        out.grad = None
        out.requires_grad = needs
        out.name = None
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Parameters
        ----------
        grad : array-like, optional
            Seed gradient. Only allowed to be omitted for scalar tensors.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape).copy()
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
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

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                _check_finite(g, "backward")
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other ** -1.0)
        return mul(self, 1.0 / other)

    def __pow__(self, exponent):
        exponent = float(exponent)
        x = self.data
        return Tensor._make(
            x ** exponent,
            (self,),
            lambda g: (g * exponent * x ** (exponent - 1.0),),
            "pow",
        )

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        x = self.data
        shape = x.shape
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

        def backward(g):
            full = np.zeros(shape)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(x[index], (self,), backward, "getitem")

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape"
        )

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose"
        )

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    return Tensor._make(
        x * y,
        (a, b),
        lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        "mul",
    )


def matmul(a, b):
    """Matrix product with numpy batching rules.

    Raises
    ------
    ValueError
        If the contracted extents differ; the message names both shapes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._make(np.matmul(x, y), (a, b), backward, "matmul")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ValueError(
                f"concat needs equal non-axis extents, got {[t.shape for t in tensors]}"
            )
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat"
    )


def tanh(x):
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    y = _sigmoid(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    v = x.data
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * v * v)
    return Tensor._make(v * cdf, (x,), lambda g: (g * (cdf + v * pdf),), "gelu")


def leaky_relu(x, negative_slope=0.2):
    v = x.data
    slope = np.where(v > 0, 1.0, negative_slope)
    return Tensor._make(v * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``."""
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def layernorm(x, gain, bias, eps=1e-5):
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layernorm affine shapes {gain.shape}, {bias.shape} do not match width {d}"
        )
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    gv = gain.data

    def backward(g):
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(xhat * gv + bias.data, (x, gain, bias), backward, "layernorm")


def bce_with_logits(logits, targets, weight=1.0):
    """Mean binary cross-entropy on logits, scaled by ``weight``.

    Uses ``max(z, 0) - z*t + log(1 + exp(-|z|))`` so large logits do not overflow.
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"targets shape {t.shape} does not match logits shape {logits.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce targets must be binary (0 or 1)")
    z = logits.data
    count = max(z.size, 1)
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    scale = weight / count

    def backward(g):
        return (g * scale * (_sigmoid(z) - t),)

    return Tensor._make(np.asarray(per.sum() * scale), (logits,), backward, "bce_with_logits")
