"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every value produced during a forward pass lives on a :class:`Tape` as a
node.  Primitives are looked up by name in a small registry; each one knows
how to compute its output and how to pull an output gradient back to its
inputs.  There is no broadcasting: binary elementwise primitives require
identical shapes, and the few places that need a row/column expansion use
``reshape`` plus ``matmul`` against a ones vector.

    >>> tape = Tape()
    >>> x = tape.leaf([3.0, 4.0])
    >>> y = apply_primitive("sum", [apply_primitive("l2_normalize", [x], tape)], tape)
    >>> backprop(tape, y)[x]
    array([ 0.032, -0.024])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

NORM_FLOOR = 1e-12


class DiffError(ValueError):
    pass


class ShapeError(DiffError):
    pass


class DegenerateNormError(DiffError):
    def __init__(self, row: int, norm: float):
        super().__init__(f"degenerate-norm: row {row} has norm {norm:.3e} < {NORM_FLOOR:g}")
        self.row = row
        self.norm = norm


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    saved: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)


class Tensor:
    """Handle to one node on a tape.  Values are read-only."""

    __slots__ = ("tape", "node")

    def __init__(self, tape: "Tape", node: int):
        self.tape = tape
        self.node = node

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.node].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _not_scalar(self.shape)

    def __repr__(self):
        return f"Tensor(node={self.node}, shape={self.shape})"

    def __add__(self, other):
        return apply_primitive("add", [self, other], self.tape)

    def __sub__(self, other):
        return apply_primitive("sub", [self, other], self.tape)

    def __mul__(self, other):
        return apply_primitive("mul", [self, other], self.tape)

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other], self.tape)

    @property
    def T(self):
        return apply_primitive("transpose", [self], self.tape)


def _not_scalar(shape):
    raise DiffError(f"expected a scalar-shaped tensor, got shape {shape}")


class Tape:
    """Append-only record of a forward computation.

    Node ids are list positions, so inputs of node ``k`` always have ids
    below ``k``.  A tape has a single writer.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> Tensor:
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def leaf(self, value, name: str | None = None) -> Tensor:
        value = _frozen(value)
        if not np.all(np.isfinite(value)):
            raise DiffError(f"leaf {name or len(self.nodes)} has non-finite entries")
        return self._push(Node("leaf", (), value, attrs={"name": name}))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves and return the fresh values."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
                continue
            prim = PRIMITIVES[node.kind]
            out, _ = prim.forward([values[i] for i in node.inputs], node.attrs)
            values.append(out)
        return values


class GradMap(dict):
    """node id -> gradient array.  Also indexable by :class:`Tensor`."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__contains__(key)


@dataclass(frozen=True)
class Primitive:
    forward: Callable[[list[np.ndarray], dict], tuple[np.ndarray, dict]]
    # (grad_out, inputs, out, saved, attrs) -> one gradient (or None) per input
    backward: Callable[..., Sequence[np.ndarray | None]]
    arity: int


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name: str, arity: int):
    def register(cls):
        PRIMITIVES[name] = Primitive(cls.forward, cls.backward, arity)
        return cls

    return register


def _require(cond: bool, kind: str, msg: str):
    if not cond:
        raise ShapeError(f"{kind}: {msg}")


def _same_shape(kind, a, b):
    _require(a.shape == b.shape, kind, f"shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives

@primitive("add", 2)
class _Add:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("add", *xs)
        return xs[0] + xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return g, g


@primitive("sub", 2)
class _Sub:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("sub", *xs)
        return xs[0] - xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return g, -g


@primitive("mul", 2)
class _Mul:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("mul", *xs)
        return xs[0] * xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return g * xs[1], g * xs[0]


@primitive("matmul", 2)
class _Matmul:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _require(a.ndim == 2 and b.ndim == 2, "matmul", f"needs 2-d operands, got {a.shape} and {b.shape}")
        _require(a.shape[1] == b.shape[0], "matmul", f"inner dims {a.shape[1]} != {b.shape[0]}")
        return a @ b, {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        a, b = xs
        return g @ b.T, a.T @ g


@primitive("transpose", 1)
class _Transpose:
    @staticmethod
    def forward(xs, attrs):
        _require(xs[0].ndim == 2, "transpose", f"needs a 2-d operand, got {xs[0].shape}")
        return np.ascontiguousarray(xs[0].T), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g.T,)


@primitive("reshape", 1)
class _Reshape:
    @staticmethod
    def forward(xs, attrs):
        shape = tuple(attrs["shape"])
        _require(int(np.prod(shape)) == xs[0].size, "reshape", f"cannot view {xs[0].shape} as {shape}")
        return xs[0].reshape(shape), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g.reshape(xs[0].shape),)


@primitive("bias_add", 2)
class _BiasAdd:
    @staticmethod
    def forward(xs, attrs):
        x, b = xs
        _require(x.ndim == 2 and b.ndim == 1, "bias_add", f"needs (rows, d) and (d,), got {x.shape} and {b.shape}")
        _require(x.shape[1] == b.shape[0], "bias_add", f"width {x.shape[1]} != bias length {b.shape[0]}")
        return x + b, {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return g, g.sum(axis=0)


@primitive("relu", 1)
class _Relu:
    @staticmethod
    def forward(xs, attrs):
        return np.maximum(xs[0], 0.0), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        # relu'(0) = 0
        return (g * (xs[0] > 0.0),)


@primitive("l2_normalize", 1)
class _L2Normalize:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        _require(x.ndim in (1, 2), "l2_normalize", f"needs a vector or matrix, got {x.shape}")
        rows = x.reshape(1, -1) if x.ndim == 1 else x
        norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
        bad = np.flatnonzero(norms < NORM_FLOOR)
        if bad.size:
            raise DegenerateNormError(int(bad[0]), float(norms[bad[0]]))
        u = rows / norms[:, None]
        return u.reshape(x.shape), {"norms": norms}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        shape = xs[0].shape
        u = out.reshape(len(saved["norms"]), -1)
        g = g.reshape(u.shape)
        dot = np.einsum("ij,ij->i", g, u)
        return (((g - u * dot[:, None]) / saved["norms"][:, None]).reshape(shape),)


@primitive("segment_max", 1)
class _SegmentMax:
    """Max over contiguous slices along ``axis``; ties go to the lowest index."""

    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axis = attrs.get("axis", 0)
        segments = attrs["segments"]
        _require(x.ndim == 2, "segment_max", f"needs a 2-d operand, got {x.shape}")
        xt = x if axis == 0 else x.T
        length = xt.shape[0]
        out = np.empty((len(segments), xt.shape[1]))
        arg = np.empty((len(segments), xt.shape[1]), dtype=np.int64)
        for s, (lo, hi) in enumerate(segments):
            _require(0 <= lo < hi <= length, "segment_max", f"segment {(lo, hi)} outside [0, {length})")
            idx = np.argmax(xt[lo:hi], axis=0)
            arg[s] = lo + idx
            out[s] = xt[lo:hi][idx, np.arange(xt.shape[1])]
        if axis == 1:
            out, arg = out.T, arg.T
        return np.ascontiguousarray(out), {"argmax": arg}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        axis = attrs.get("axis", 0)
        arg = saved["argmax"]
        grad = np.zeros_like(xs[0])
        if axis == 0:
            cols = np.broadcast_to(np.arange(g.shape[1]), g.shape)
            np.add.at(grad, (arg, cols), g)
        else:
            rows = np.broadcast_to(np.arange(g.shape[0])[:, None], g.shape)
            np.add.at(grad, (rows, arg), g)
        return (grad,)


@primitive("gather", 1)
class _Gather:
    @staticmethod
    def forward(xs, attrs):
        table = xs[0]
        ids = np.asarray(attrs["ids"], dtype=np.int64)
        _require(table.ndim == 2, "gather", f"table must be 2-d, got {table.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(f"gather: ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")
        return table[ids], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        grad = np.zeros_like(xs[0])
        np.add.at(grad, np.asarray(attrs["ids"], dtype=np.int64), g)
        return (grad,)


@primitive("exp", 1)
class _Exp:
    @staticmethod
    def forward(xs, attrs):
        return np.exp(xs[0]), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g * out,)


@primitive("log", 1)
class _Log:
    @staticmethod
    def forward(xs, attrs):
        if np.any(xs[0] <= 0.0):
            raise DiffError("log: non-positive input")
        return np.log(xs[0]), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g / xs[0],)


@primitive("scale", 1)
class _Scale:
    @staticmethod
    def forward(xs, attrs):
        return xs[0] * attrs["c"], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g * attrs["c"],)


@primitive("shift", 1)
class _Shift:
    @staticmethod
    def forward(xs, attrs):
        return xs[0] + attrs["c"], {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (g,)


@primitive("sum", 1)
class _Sum:
    @staticmethod
    def forward(xs, attrs):
        axis = attrs.get("axis")
        return np.asarray(xs[0].sum(axis=axis), dtype=np.float64), {}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        axis = attrs.get("axis")
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xs[0].shape).copy(),)


@primitive("logsumexp", 1)
class _LogSumExp:
    """Row-wise log-sum-exp of a matrix, restricted to ``mask`` entries."""

    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        _require(x.ndim == 2, "logsumexp", f"needs a 2-d operand, got {x.shape}")
        mask = attrs.get("mask")
        if mask is None:
            mask = np.ones(x.shape, dtype=bool)
        _require(mask.shape == x.shape, "logsumexp", f"mask {mask.shape} vs input {x.shape}")
        if not mask.any(axis=1).all():
            raise DiffError("logsumexp: a row has an empty index set")
        masked = np.where(mask, x, -np.inf)
        peak = masked.max(axis=1)
        w = np.where(mask, np.exp(masked - peak[:, None]), 0.0)
        total = w.sum(axis=1)
        return peak + np.log(total), {"softmax": w / total[:, None]}

    @staticmethod
    def backward(g, xs, out, saved, attrs):
        return (saved["softmax"] * g[:, None],)


def apply_primitive(kind: str, inputs: Sequence[Tensor], tape: Tape, **attrs: Any) -> Tensor:
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise DiffError(f"unknown primitive {kind!r}") from None
    if len(inputs) != prim.arity:
        raise DiffError(f"{kind}: expected {prim.arity} inputs, got {len(inputs)}")
    for t in inputs:
        if not isinstance(t, Tensor) or t.tape is not tape:
            raise DiffError(f"{kind}: inputs must be tensors recorded on this tape")
    out, saved = prim.forward([tape.nodes[t.node].value for t in inputs], attrs)
    out = np.asarray(out, dtype=np.float64)
    out.flags.writeable = False
    return tape._push(Node(kind, tuple(t.node for t in inputs), out, saved, attrs))


def backprop(tape: Tape, seed: Tensor | int) -> GradMap:
    """Gradient of the scalar ``seed`` with respect to every leaf on ``tape``.

    Leaves that the seed does not depend on get a zero gradient.  Interior
    nodes that were reached are kept in the map as well.
    """
    seed_id = seed.node if isinstance(seed, Tensor) else int(seed)
    seed_val = tape.nodes[seed_id].value
    if seed_val.size != 1:
        _not_scalar(seed_val.shape)
    grads: dict[int, np.ndarray] = {seed_id: np.ones_like(seed_val)}
    for nid in range(seed_id, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.kind == "leaf":
            continue
        prim = PRIMITIVES[node.kind]
        xs = [tape.nodes[i].value for i in node.inputs]
        for i, gi in zip(node.inputs, prim.backward(g, xs, node.value, node.saved, node.attrs)):
            if gi is None:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = np.asarray(gi, dtype=np.float64)
    out = GradMap(grads)
    for nid, node in enumerate(tape.nodes):
        if node.kind == "leaf" and nid not in out:
            out[nid] = np.zeros_like(node.value)
    return out


def grad_check(builder: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    ``builder(tape, *leaves)`` must return a scalar tensor and be
    deterministic.  Relative error per coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    base = [np.array(x, dtype=np.float64) for x in inputs]

    def evaluate(values):
        tape = Tape()
        leaves = [tape.leaf(v) for v in values]
        out = builder(tape, *leaves)
        if out.value.size != 1:
            _not_scalar(out.shape)
        return tape, leaves, out

    tape, leaves, out = evaluate(base)
    grads = backprop(tape, out)
    worst = 0.0
    for k, x in enumerate(base):
        analytic = grads[leaves[k]]
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = evaluate(base)[2].item()
            flat[j] = orig - eps
            down = evaluate(base)[2].item()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# thin wrappers used by the model and losses

def relu(x: Tensor) -> Tensor:
    return apply_primitive("relu", [x], x.tape)


def l2_normalize(x: Tensor) -> Tensor:
    return apply_primitive("l2_normalize", [x], x.tape)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("bias_add", [x, b], x.tape)


def segment_max(x: Tensor, segments, axis: int = 0) -> Tensor:
    segments = tuple((int(lo), int(hi)) for lo, hi in segments)
    return apply_primitive("segment_max", [x], x.tape, segments=segments, axis=axis)


def gather(table: Tensor, ids) -> Tensor:
    return apply_primitive("gather", [table], table.tape, ids=np.asarray(ids, dtype=np.int64))


def reshape(x: Tensor, shape) -> Tensor:
    return apply_primitive("reshape", [x], x.tape, shape=tuple(shape))


def scale(x: Tensor, c: float) -> Tensor:
    return apply_primitive("scale", [x], x.tape, c=float(c))


def shift(x: Tensor, c: float) -> Tensor:
    return apply_primitive("shift", [x], x.tape, c=float(c))


def exp(x: Tensor) -> Tensor:
    return apply_primitive("exp", [x], x.tape)


def log(x: Tensor) -> Tensor:
    return apply_primitive("log", [x], x.tape)


def total(x: Tensor, axis: int | None = None) -> Tensor:
    return apply_primitive("sum", [x], x.tape, axis=axis)


def logsumexp(x: Tensor, mask=None) -> Tensor:
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return apply_primitive("logsumexp", [x], x.tape, mask=mask)


def expand_rows(v: Tensor, width: int) -> Tensor:
    """Column vector ``v`` (length r) repeated into an r x width matrix."""
    ones = v.tape.leaf(np.ones((1, width)))
    return reshape(v, (v.shape[0], 1)) @ ones
