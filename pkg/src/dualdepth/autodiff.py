"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation records one node on the active :class:`Tape`.
``Tape.backward`` replays the nodes in reverse insertion order, so each node
is visited exactly once and all of its inputs were recorded before it.

Shapes are never broadcast. Binary operations require identical shapes; the
only mixed operations are with Python scalars (``t * 0.5``, ``t + 1e-4``).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EXP_CLAMP = 40.0

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "_node")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; scalars become scale/shift nodes, never broadcasts
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations performed inside the ``with`` block
    on tensors that require gradients are recorded here. A tape belongs to
    one thread at a time.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, kind, inputs, output, backward) -> None:
        output._node = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), output, backward))

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(output)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if seed is None:
            if output.size != 1:
                raise ShapeError(f"backward from a non-scalar of shape {output.shape} needs a seed")
            seed = np.ones(output.shape)
        adjoints: dict[int, np.ndarray] = {id(output): np.asarray(seed, dtype=np.float64)}
        leaves: dict[int, Tensor] = {}
        stop = output._node if output._node is not None else -1
        for node in reversed(self.nodes[: stop + 1]):
            g = adjoints.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + gi
                else:
                    adjoints[key] = gi
                if inp._node is None:
                    leaves[key] = inp
        if output._node is None and output.requires_grad:
            leaves[id(output)] = output
        for key, leaf in leaves.items():
            g = adjoints.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _tape_stack() -> list[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_op(kind: str, inputs: Sequence[Tensor], out_values: np.ndarray, backward) -> Tensor:
    """Wrap ``out_values`` in a Tensor and record it if any input needs gradients.

    ``backward`` maps the output adjoint to one adjoint (or None) per input.
    Exposed so that other modules can define their own primitives.
    """
    out = Tensor(out_values)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward)
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_op("add", (a, b), a.values + b.values, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_op("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return make_op("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    av, bv = a.values, b.values
    out = av / bv
    return make_op("div", (a, b), out, lambda g: (g / bv, -g * out / bv))


def neg(a: Tensor) -> Tensor:
    return make_op("neg", (a,), -a.values, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return make_op("scale", (a,), a.values * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return make_op("add_scalar", (a,), a.values + c, lambda g: (g,))


def absolute(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    s = np.sign(a.values)
    return make_op("abs", (a,), np.abs(a.values), lambda g: (g * s,))


def square(a: Tensor) -> Tensor:
    av = a.values
    return make_op("square", (a,), av * av, lambda g: (2.0 * g * av,))


def exp(a: Tensor) -> Tensor:
    inside = np.abs(a.values) <= EXP_CLAMP
    out = np.exp(np.clip(a.values, -EXP_CLAMP, EXP_CLAMP))
    return make_op("exp", (a,), out, lambda g: (g * out * inside,))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return make_op("mean_all", (a,), np.array(a.values.mean()), lambda g: (np.full(shape, float(g) / n),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_op("sum_all", (a,), np.array(a.values.sum()), lambda g: (np.full(shape, float(g)),))


def channel_mean(a: Tensor) -> Tensor:
    """Mean over axis 1 of a 4-D tensor, keeping the axis (b, 1, h, w)."""
    c = a.shape[1]
    shape = a.shape
    out = a.values.mean(axis=1, keepdims=True)
    return make_op("channel_mean", (a,), out, lambda g: (np.broadcast_to(g / c, shape).copy(),))


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.values, -EXP_CLAMP, EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(-x))
    return make_op("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def elu(a: Tensor) -> Tensor:
    x = a.values
    pos = x >= 0
    em1 = np.expm1(np.clip(x, -EXP_CLAMP, EXP_CLAMP))
    out = np.where(pos, x, em1)
    deriv = np.where(pos, 1.0, em1 + 1.0)
    return make_op("elu", (a,), out, lambda g: (g * deriv,))


def activation(kind: str, a: Tensor) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "elu":
        return elu(a)
    raise ValueError(f"unknown activation {kind!r}")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "abs": absolute,
    "exp": exp,
    "neg": neg,
    "scale-by-constant": scale,
    "mean-all": mean_all,
}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch one of the named elementwise ops (``b`` is a tensor or, for scaling, a float)."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul", "scale-by-constant"):
        if b is None:
            raise ValueError(f"{kind} needs a second operand")
        return fn(a, b)
    return fn(a)


# structural --------------------------------------------------------------

def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    base = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], *t.shape[2:]) != (base[0], *base[2:]):
            raise ShapeError(f"concat: incompatible shapes {base} and {t.shape}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.values for t in tensors], axis=1)
    return make_op("concat", tuple(tensors), out, lambda g: tuple(np.split(g, splits, axis=1)))


def select_channel(a: Tensor, index: int) -> Tensor:
    shape = a.shape
    if not 0 <= index < shape[1]:
        raise ShapeError(f"select_channel: index {index} out of range for {shape[1]} channels")

    def backward(g):
        full = np.zeros(shape)
        full[:, index : index + 1] = g
        return (full,)

    return make_op("select_channel", (a,), a.values[:, index : index + 1].copy(), backward)


def flip_horizontal(a: Tensor) -> Tensor:
    return make_op("flip", (a,), a.values[..., ::-1].copy(), lambda g: (g[..., ::-1].copy(),))


# convolution and resampling ----------------------------------------------

def conv_output_extent(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"conv2d: ({n} + 2*{padding} - {k}) is not a non-negative multiple of stride {stride}"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, (b,c,h,w) * (o,c,kh,kw) -> (b,o,h',w')."""
    if x.values.ndim != 4 or kernel.values.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    b, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ck}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d: zero-size output")

    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.values
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    cols = np.empty((b, c, kh, kw, ho, wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u : u + he : stride, v : v + we : stride]
    cols = cols.reshape(b, c * kh * kw, ho * wo)
    wmat = kernel.values.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.values[None, :, None]
    out = out.reshape(b, o, ho, wo)
    pshape = xp.shape

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        gk = np.einsum("bop,bkp->ok", g2, cols).reshape(kernel.shape)
        gb = g2.sum(axis=(0, 2)) if bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(b, c, kh, kw, ho, wo)
            gp = np.zeros(pshape)
            for u in range(kh):
                for v in range(kw):
                    gp[:, :, u : u + he : stride, v : v + we : stride] += gcols[:, :, u, v]
            gx = gp[:, :, padding : padding + h, padding : padding + w] if padding else gp
        return (gx, gk, gb) if bias is not None else (gx, gk)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return make_op("conv2d", inputs, out, backward)


def avg_pool2(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {h}x{w}; pad or crop first")
    out = x.values.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op("avg_pool2", (x,), out, backward)


def upsample2(x: Tensor) -> Tensor:
    if x.values.ndim != 4:
        raise ShapeError(f"upsample2 expects a 4-D tensor, got {x.shape}")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.values, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_op("upsample2", (x,), out, backward)


# gradient checking -------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    ``f`` maps a tensor to a scalar tensor. Relative error per coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point.values if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x)
        if y.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {y.shape}")
        tape.backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x0)).item()
        flat[i] = orig - eps
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
