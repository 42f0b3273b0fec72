"""Minimal reverse-mode differentiation over dense float64 numpy arrays.

Every op builds a node holding its parents and a closure that maps the
output gradient to parent gradients. ``backward`` walks the graph in reverse
topological order and accumulates into ``.grad`` of leaf tensors created
with ``requires_grad=True``. Inside ``no_grad()`` ops run eagerly without
recording anything.

Broadcasting is limited to matrix-vector products and adding a bias row to
every row of a matrix. Masks and other constants are passed at full shape.
"""

from __future__ import annotations

import contextlib
import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateMaskError, DimensionError

NEG_SENTINEL = -1e30

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _node(value, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _shape_error(op: str, a, b) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, bv) if bv.ndim == 1 else g @ bv.T
        if b.requires_grad:
            gb = av.T @ g
        return ga, gb

    return _node(av @ bv, (a, b), bw)


def _bias_like(a: Tensor, b: Tensor) -> bool:
    return (
        a.value.ndim == 2
        and (b.value.ndim == 1 and b.shape[0] == a.shape[1] or b.value.ndim == 2 and b.shape == (1, a.shape[1]))
    )


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _node(a.value + b.value, (a, b), lambda g: (g, g))
    if _bias_like(a, b):
        bshape = b.shape
        return _node(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0).reshape(bshape)))
    raise _shape_error("add", a.shape, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _node(a.value - b.value, (a, b), lambda g: (g, -g))
    if _bias_like(a, b):
        bshape = b.shape
        return _node(a.value - b.value, (a, b), lambda g: (g, -g.sum(axis=0).reshape(bshape)))
    raise _shape_error("sub", a.shape, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.value > 0
    return _node(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of nothing")
    ax = axis % ts[0].value.ndim
    for t in ts[1:]:
        if t.value.ndim != ts[0].value.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax
        ):
            raise _shape_error("concat", ts[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _node(np.concatenate([t.value for t in ts], axis=ax), ts, lambda g: tuple(np.split(g, sizes, axis=ax)))


def cols(a, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a matrix (entries of a vector)."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _node(a.value[..., start:stop], (a,), bw)


def rows(a, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of a matrix."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _node(a.value[start:stop], (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return _node(out, (a,), lambda g: (g.reshape(old),))


def sum_rows(a) -> Tensor:
    """Sum over rows: (R, C) -> (1, C)."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise DimensionError(f"sum_rows needs a matrix, got shape {a.shape}")
    rows = a.shape[0]
    return _node(a.value.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, rows, axis=0),))


def sum_cols(a) -> Tensor:
    """Sum over columns: (R, C) -> (R, 1)."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise DimensionError(f"sum_cols needs a matrix, got shape {a.shape}")
    ncols = a.shape[1]
    return _node(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, ncols, axis=1),))


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _node(np.array(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, size = a.shape, a.value.size
    return _node(np.array(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / size),))


def mse(pred, target) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))


def masked_log_softmax(y, mask) -> Tensor:
    """log of exp(y_i) M_i / sum_j exp(y_j) M_j, row-wise for matrices.

    Masked entries hold ``NEG_SENTINEL`` (so ``exp`` gives exactly 0) and get
    exactly zero gradient.
    """
    y = as_tensor(y)
    m = np.asarray(mask, dtype=bool)
    if m.shape != y.shape:
        raise _shape_error("masked_log_softmax", y.shape, m.shape)
    if not m.any(axis=-1).all():
        raise DegenerateMaskError("every entry of a mask row is false")
    yv = np.where(m, y.value, -np.inf)
    top = yv.max(axis=-1, keepdims=True)
    shifted = yv - top
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = np.where(m, shifted - lse, NEG_SENTINEL)
    p = np.where(m, np.exp(np.where(m, logp, 0.0)), 0.0)

    def bw(g):
        gm = np.where(m, g, 0.0)
        return (np.where(m, gm - p * gm.sum(axis=-1, keepdims=True), 0.0),)

    return _node(logp, (y,), bw)


def backward(loss: Tensor) -> None:
    if loss.value.size != 1 or loss.value.ndim > 1 and loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
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
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


class AdamState:
    """Adam with bias correction; moments are kept per parameter in order."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.value) for p in self.params]
        self.second_moment = [np.zeros_like(p.value) for p in self.params]

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.first_moment, self.second_moment)):
            out[f"{prefix}.m.{i}"] = m
            out[f"{prefix}.v.{i}"] = v
        return out

    def load_arrays(self, prefix: str, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for i, p in enumerate(self.params):
            m, v = arrays[f"{prefix}.m.{i}"], arrays[f"{prefix}.v.{i}"]
            if m.shape != p.shape or v.shape != p.shape:
                raise DataError(f"optimizer moment {i} has shape {m.shape}, parameter has {p.shape}")
            self.first_moment[i] = m.copy()
            self.second_moment[i] = v.copy()
        self.step_count = int(step_count)

    def snapshot(self):
        return (self.step_count, [m.copy() for m in self.first_moment], [v.copy() for v in self.second_moment])

    def restore(self, snap) -> None:
        self.step_count, first, second = snap
        self.first_moment = [m.copy() for m in first]
        self.second_moment = [v.copy() for v in second]


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        p.value = p.value - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_difference_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
                            floor: float = 1e-6, max_entries: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Largest elementwise relative error between backprop and central differences.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    ``max_entries`` samples that many coordinates per parameter.
    """
    zero_grad(params)
    loss = loss_fn()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]
    zero_grad(params)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.value.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, max_entries, replace=False)
            for i in idx:
                old = flat[i]
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                num = (up - down) / (2 * h)
                an = a.reshape(-1)[i]
                err = abs(an - num) / max(abs(an), abs(num), floor)
                worst = max(worst, err)
    return worst


# Parameter container file:
#   8 bytes   magic b"JSRLCKPT"
#   4 bytes   format version, little-endian uint32
#   8 bytes   header length, little-endian uint64
#   header    UTF-8 JSON {"meta": {...}, "tensors": [{"name", "shape", "offset", "count"}]}
#   data      float64 little-endian, row-major, tensors back to back in header order
MAGIC = b"JSRLCKPT"
FORMAT_VERSION = 1


def dump_container(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def load_container(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise DataError("not a parameter container (bad magic)")
    if len(data) < 20:
        raise DataError("truncated parameter container")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported container version {version}")
    try:
        header = json.loads(data[20:20 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt container header: {exc}") from None
    if (len(data) - 20 - hlen) % 8:
        raise DataError("container payload is not a whole number of float64 values")
    payload = np.frombuffer(data, dtype="<f8", offset=20 + hlen)
    tensors = {}
    for e in header["tensors"]:
        if e["offset"] + e["count"] > payload.size:
            raise DataError(f"container truncated inside tensor {e['name']}")
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + e["count"]].reshape(tuple(e["shape"])).astype(np.float64)
    return tensors, header["meta"]
