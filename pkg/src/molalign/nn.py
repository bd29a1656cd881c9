"""Minimal reverse-mode autodiff on float64 numpy arrays.

Only the primitives the encoders and the contrastive loss need are provided:
matmul, add/sub/mul/divide (with broadcasting), relu, exp, log, sum/mean
reductions, row-wise L2 normalization, row gather and row scatter-add.
Every forward result is checked for NaN/Inf.
"""

from __future__ import annotations

import builtins
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


def _check(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return value


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_sink", "op")

    def __init__(self, value, parents: tuple = (), backward=None, requires_grad=False, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._sink: Optional[np.ndarray] = None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every trainable leaf's sink."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            if node._backward is not None:
                node._backward(node.grad)
            if node._sink is not None:
                node._sink += node.grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        return divide(self, other)


def constant(value) -> Tensor:
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(value, parents, backward, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(_check(value, op), parents if needs else (), backward if needs else None, needs, op)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _node(a.value @ b.value, (a, b), backward, "matmul")


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op} shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.value + b.value, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _node(a.value - b.value, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _node(a.value * b.value, (a, b), backward, "mul")


def divide(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "divide")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.value, a.shape))
        _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.shape))

    return _node(out, (a, b), backward, "divide")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.value > 0  # subgradient 0 at exactly 0

    def backward(g):
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.value, 0.0), (x,), backward, "relu")


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.value)

    def backward(g):
        _accumulate(x, g * out)

    return _node(out, (x,), backward, "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.value)

    def backward(g):
        _accumulate(x, g / x.value)

    return _node(out, (x,), backward, "log")


def sum(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _node(out, (x,), backward, "sum")


def mean(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    out = x.value.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape) / n)

    return _node(out, (x,), backward, "mean")


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Scale slices to unit L2 norm; all-zero slices stay zero."""
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        norm = _check(np.sqrt((x.value * x.value).sum(axis=axis, keepdims=True)), "l2_normalize")
    safe = np.where(norm > 0, norm, 1.0)
    y = x.value / safe

    def backward(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, np.where(norm > 0, (g - y * proj) / safe, 0.0))

    return _node(y, (x,), backward, "l2_normalize")


def segment_sum(values: np.ndarray, index: np.ndarray, num_rows: int) -> np.ndarray:
    """Rows of ``values`` summed into ``out[index[k]]``."""
    out = np.zeros((num_rows,) + values.shape[1:])
    if index.size == 0:
        return out
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def gather(x, index) -> Tensor:
    """Rows ``x[index]``."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"gather index out of range for {x.shape[0]} rows")

    def backward(g):
        if not x.requires_grad:
            return
        _accumulate(x, segment_sum(g, index, x.shape[0]))

    return _node(x.value[index], (x,), backward, "gather")


def scatter_add(x, index, num_rows: int) -> Tensor:
    """``out[index[k]] += x[k]`` into a fresh ``num_rows``-row array."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.shape[0]:
        raise ValueError("scatter_add needs one index per row")
    if index.size and (index.min() < 0 or index.max() >= num_rows):
        raise IndexError(f"scatter_add index out of range for {num_rows} rows")
    out = segment_sum(x.value, index, num_rows)

    def backward(g):
        _accumulate(x, g[index])

    return _node(out, (x,), backward, "scatter_add")


def transpose(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, g.T)

    return _node(x.value.T, (x,), backward, "transpose")


def log_softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise log-softmax with the row max subtracted as a constant."""
    shift = constant(logits.value.max(axis=1, keepdims=True))
    z = sub(logits, shift)
    return sub(z, log(sum(exp(z), axis=1, keepdims=True)))


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True


class ParameterStore:
    """Named float64 parameters with gradient accumulators."""

    def __init__(self):
        self._entries: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True) -> Parameter:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        param = Parameter(value, np.zeros_like(value), trainable)
        self._entries[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor bound to ``name``; backward adds into its accumulator."""
        p = self._entries[name]
        t = Tensor(p.value, requires_grad=p.trainable)
        if p.trainable:
            t._sink = p.grad
        return t

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad[...] = 0.0

    def set_trainable(self, name: str, trainable: bool) -> None:
        self._entries[name].trainable = trainable

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._entries.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            p = self._entries[k]
            if p.value.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {p.value.shape} vs {v.shape}")
            p.value[...] = v

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for k, p in self._entries.items():
            other.add(k, p.value, p.trainable)
        return other

    def num_trainable(self) -> int:
        return int(builtins.sum(p.value.size for p in self._entries.values() if p.trainable))



@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update of trainable entries, then zero all grads."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in store.items():
        if not p.trainable:
            continue
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    store.zero_grad()


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_epochs: int
    total_epochs: int
    decay: str = "cosine"  # or "constant"

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")
        if self.decay not in ("cosine", "constant"):
            raise ValueError(f"unknown decay {self.decay!r}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Linear warm-up to ``base_lr``, then constant or cosine decay toward 0."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    w = schedule.warmup_epochs
    if epoch < w:
        return schedule.base_lr * (epoch + 1) / w
    if schedule.decay == "constant":
        return schedule.base_lr
    span = schedule.total_epochs - w
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / span))


def grad_check(
    loss_fn: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    names: Optional[Iterable[str]] = None,
) -> float:
    """Max relative error between backprop and central differences.

    Checks up to ``max_coords`` coordinates sampled uniformly from trainable
    entries; relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    names = [n for n in (names or store.names()) if store[n].trainable]
    store.zero_grad()
    loss_fn(store).backward()
    analytic = {n: store[n].grad.copy() for n in names}
    store.zero_grad()

    coords = [(n, i) for n in names for i in range(store[n].value.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(picks)]

    worst = 0.0
    for name, i in coords:
        flat = store[name].value.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        plus = loss_fn(store).item()
        flat[i] = orig - eps
        minus = loss_fn(store).item()
        flat[i] = orig
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NonFiniteError(f"non-finite loss while perturbing {name}[{i}]")
        numeric = (plus - minus) / (2 * eps)
        a = analytic[name].reshape(-1)[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
