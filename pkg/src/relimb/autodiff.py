"""Dense f64 tensors with a reverse-mode gradient tape.

Forward ops record onto the active :class:`Tape`; ``backward`` replays the
tape in reverse and accumulates gradients into every ``requires_grad``
tensor it reaches. Gradients accumulate across calls until ``zero_grad``.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "no_grad",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "concat",
    "vstack",
    "gather_rows",
    "neighbor_mean",
    "row_mean",
    "row_sum",
    "sum_all",
    "sigmoid",
    "relu",
    "bce_with_logits",
    "mse",
    "Adam",
    "SGD",
    "save_params",
    "load_params",
]


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Convenience operators; all route through the taped primitives.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed differentiable operations.

    Nodes are appended in execution order, so the record is always
    topologically sorted: a node's inputs precede it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = [Tape()]
_GRAD_ENABLED: list[bool] = [True]


def active_tape() -> Tape:
    return _TAPE_STACK[-1]


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()


def _record(inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray, list[np.ndarray | None]], None]) -> Tensor:
    needs = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        active_tape().nodes.append(_Node(tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep from ``loss``; fills ``.grad`` of requires_grad tensors.

    Repeated calls without zeroing accumulate into the same buffers.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _record((a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")

    def bwd(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _record((a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}")

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _record((a, b), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _record((a,), a.data * c, bwd)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ValueError("concat of empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=-1)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _record(tuple(tensors), out, bwd)


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the first axis (row blocks)."""
    if not tensors:
        raise ValueError("vstack of empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=0)
    rows = [t.data.shape[0] for t in tensors]
    splits = np.cumsum(rows)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=0)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _record(tuple(tensors), out, bwd)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows ``a[idx]``; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record((a,), out, bwd)


def neighbor_mean(a: Tensor, offsets: np.ndarray, indices: np.ndarray) -> Tensor:
    """Row-wise mean over CSR neighbor lists; empty slices give zero rows.

    Output row ``i`` is ``mean(a[indices[offsets[i]:offsets[i+1]]])``.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n_out = len(offsets) - 1
    deg = np.diff(offsets).astype(np.float64)
    out = np.zeros((n_out, a.data.shape[1]), dtype=np.float64)
    if len(indices):
        seg = np.repeat(np.arange(n_out), np.diff(offsets))
        np.add.at(out, seg, a.data[indices])
        nz = deg > 0
        out[nz] /= deg[nz, None]

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        ga = np.zeros_like(a.data)
        if len(indices):
            seg = np.repeat(np.arange(n_out), np.diff(offsets))
            contrib = g[seg] / deg[seg, None]
            np.add.at(ga, indices, contrib)
        return (ga,)

    return _record((a,), out, bwd)


def row_mean(a: Tensor) -> Tensor:
    """Mean over axis 0, keeping a single row."""
    n = a.data.shape[0]
    out = a.data.mean(axis=0, keepdims=True)

    def bwd(g):
        return (np.repeat(g, n, axis=0) / n,)

    return _record((a,), out, bwd)


def row_sum(a: Tensor) -> Tensor:
    """Sum over the last axis, keeping the axis (``(n, d) -> (n, 1)``)."""
    out = a.data.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record((a,), out, bwd)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def bwd(g):
        return (np.full_like(a.data, float(g)),)

    return _record((a,), out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                   np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _record((a,), out, bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _record((a,), out, bwd)


def bce_with_logits(logits: Tensor, targets: Tensor, reduction: str = "mean") -> Tensor:
    """Fused sigmoid + binary cross-entropy (log-sum-exp form, overflow-safe)."""
    if logits.data.shape != targets.data.shape:
        raise ValueError(
            f"bce_with_logits shape mismatch: {logits.data.shape} vs {targets.data.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    x, y = logits.data, targets.data
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = max(x.size, 1)
    out = np.asarray(per.sum() / (n if reduction == "mean" else 1))

    def bwd(g):
        s = 1.0 / (1.0 + np.exp(-x))
        gx = (s - y) * float(g)
        if reduction == "mean":
            gx = gx / n
        return (gx if logits.requires_grad else None, None)

    return _record((logits, targets), out, bwd)


def mse(pred: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = pred.data - target.data
    n = max(diff.size, 1)
    out = np.asarray((diff * diff).sum() / (n if reduction == "mean" else 1))

    def bwd(g):
        gp = 2.0 * diff * float(g)
        if reduction == "mean":
            gp = gp / n
        return (gp if pred.requires_grad else None,
                -gp if target.requires_grad else None)

    return _record((pred, target), out, bwd)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def sgd_step(params: dict[str, Tensor], lr: float) -> None:
    for p in params.values():
        if p.grad is not None:
            p.data -= lr * p.grad


def adam_step(params: dict[str, Tensor], state: dict, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    for name, p in params.items():
        if p.grad is None:
            continue
        m, v = state.setdefault(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = b1 * m + (1 - b1) * p.grad
        v = b2 * v + (1 - b2) * p.grad * p.grad
        state[name] = (m, v)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        sgd_step(self.params, self.lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------

class Rng:
    """Seeded random stream; identical seed gives an identical stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, pool: np.ndarray, k: int) -> np.ndarray:
        return self._gen.choice(pool, size=k, replace=False)

    def choice_weighted(self, values, p) -> object:
        return self._gen.choice(values, p=p)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent stream for a sub-task, reproducibly."""
        return Rng((self.seed * 1_000_003 + key) % (2**63 - 1))

    def gamma(self, alpha: float) -> float:
        """Marsaglia-Tsang Gamma(alpha, 1) sampler; alpha < 1 uses the boost."""
        if alpha <= 0:
            raise ValueError(f"gamma alpha must be positive, got {alpha}")
        if alpha < 1.0:
            # Gamma(a) = Gamma(a + 1) * U^(1/a)
            u = self.uniform()
            while u <= 0.0:
                u = self.uniform()
            return self.gamma(alpha + 1.0) * u ** (1.0 / alpha)
        d = alpha - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0:
                continue
            v = v * v * v
            u = self.uniform()
            if u < 1.0 - 0.0331 * x ** 4:
                return d * v
            if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v

    def beta(self, alpha: float, beta: float) -> float:
        """Beta(alpha, beta) via two Gamma draws; returns a value in (0, 1)."""
        if alpha <= 0 or beta <= 0:
            raise ValueError(f"beta parameters must be positive, got ({alpha}, {beta})")
        for _ in range(64):
            g1 = self.gamma(alpha)
            g2 = self.gamma(beta)
            if g1 + g2 > 0:
                x = g1 / (g1 + g2)
                if 0.0 < x < 1.0:
                    return x
        # Degenerate draws are astronomically rare; clamp into the open interval.
        return float(np.nextafter(0.0, 1.0))


def beta_sample(rng: Rng, alpha: float, beta: float) -> float:
    return rng.beta(alpha, beta)


# ---------------------------------------------------------------------------
# checkpoint format (version 1): JSON of named f64 arrays with shapes
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_params(params: dict[str, Tensor], path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in sorted(params.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path) -> dict[str, Tensor]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    out = {}
    for name, rec in doc["params"].items():
        arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        out[name] = Tensor(arr, requires_grad=True)
    return out
