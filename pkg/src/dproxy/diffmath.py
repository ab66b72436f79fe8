"""Dense differentiable primitives with explicit forward and backward rules.

Every operation records its inputs and a backward closure on a dynamic
tape (the graph itself); ``backward`` walks it in reverse topological
order and accumulates gradients into every reachable tensor that has
``requires_grad``.  Accumulation is additive, so calling backward twice
on the same graph doubles every leaf gradient.

Two float widths are supported through the tensors' dtype: float64 for
finite-difference verification (32-bit checks are meaningless) and
float32 for training runs.  Reductions rely on numpy's fixed summation
algorithms, so identical inputs give bitwise-identical outputs run to
run.

No accelerators, no sparse tensors, no graph rewriting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteDetected, ShapeMismatch

_debug_checks = False


def set_debug(enabled: bool) -> None:
    """Enable the NaN/Inf tripwire after every primitive (slow)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor2:
    """A 2-D array plus the tape bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "grad", "needs_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ShapeMismatch(f"Tensor2 must be 2-D, got shape {data.shape}")
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.needs_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor2(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def constant(data, dtype=None) -> Tensor2:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return Tensor2(arr)


def parameter(data, dtype=None) -> Tensor2:
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return Tensor2(arr, requires_grad=True)


def custom_op(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor2:
    """Assemble an op node from precomputed forward data and a backward rule.

    The backward callable receives the output gradient and must call
    ``accumulate(parent, contribution)`` for each parent it feeds.
    Exists so tests and extensions can define ops without touching the
    module internals.
    """
    return _finish(data, parents, backward)


def accumulate(t: Tensor2, contribution: np.ndarray) -> None:
    """Add a gradient contribution to a tensor, allocating on first use."""
    if not t.needs_grad:
        return
    if _debug_checks and not np.all(np.isfinite(contribution)):
        raise NonFiniteDetected("gradient contribution contains NaN or Inf")
    if t.grad is None:
        t.grad = contribution.astype(t.data.dtype, copy=True)
    else:
        t.grad += contribution


def _finish(data: np.ndarray, parents: tuple, backward) -> Tensor2:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NonFiniteDetected("forward output contains NaN or Inf")
    out = Tensor2(data)
    out.needs_grad = any(p.needs_grad for p in parents)
    if out.needs_grad:
        out._parents = parents
        out._backward = backward
    return out


def _same_dtype(*tensors: Tensor2) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeMismatch(f"mixed dtypes in one graph: {sorted(map(str, dtypes))}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Sum over artificially broadcast axes so the contribution matches the
    # parent's true shape.
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeMismatch(f"cannot reduce grad {grad.shape} to {shape}")
    return out


def _check_broadcast(a: Tensor2, b: Tensor2, op: str) -> None:
    ra, ca = a.shape
    rb, cb = b.shape
    if (ra != rb and 1 not in (ra, rb)) or (ca != cb and 1 not in (ca, cb)):
        raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor2, b: Tensor2, ta: bool = False, tb: bool = False) -> Tensor2:
    _same_dtype(a, b)
    am = a.data.T if ta else a.data
    bm = b.data.T if tb else b.data
    if am.shape[1] != bm.shape[0]:
        raise ShapeMismatch(f"matmul: inner dims {am.shape} @ {bm.shape}")
    out = am @ bm

    def backward(g):
        if not ta and not tb:
            accumulate(a, g @ b.data.T)
            accumulate(b, a.data.T @ g)
        elif ta and not tb:
            accumulate(a, b.data @ g.T)
            accumulate(b, a.data @ g)
        elif not ta and tb:
            accumulate(a, g @ b.data)
            accumulate(b, g.T @ a.data)
        else:
            accumulate(a, (g @ b.data).T)
            accumulate(b, (a.data @ g).T)

    return _finish(out, (a, b), backward)


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        accumulate(a, _reduce_to(g, a.shape))
        accumulate(b, _reduce_to(g, b.shape))

    return _finish(out, (a, b), backward)


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        accumulate(a, _reduce_to(g, a.shape))
        accumulate(b, _reduce_to(-g, b.shape))

    return _finish(out, (a, b), backward)


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        accumulate(a, _reduce_to(g * b.data, a.shape))
        accumulate(b, _reduce_to(g * a.data, b.shape))

    return _finish(out, (a, b), backward)


def smul(a: Tensor2, c: float) -> Tensor2:
    c = a.data.dtype.type(c)
    out = a.data * c

    def backward(g):
        accumulate(a, g * c)

    return _finish(out, (a,), backward)


def sadd(a: Tensor2, c: float) -> Tensor2:
    out = a.data + a.data.dtype.type(c)

    def backward(g):
        accumulate(a, g)

    return _finish(out, (a,), backward)


def exp(a: Tensor2) -> Tensor2:
    out = np.exp(a.data)

    def backward(g):
        accumulate(a, g * out)

    return _finish(out, (a,), backward)


def log(a: Tensor2) -> Tensor2:
    out = np.log(a.data)

    def backward(g):
        accumulate(a, g / a.data)

    return _finish(out, (a,), backward)


def relu(a: Tensor2) -> Tensor2:
    mask = a.data > 0
    out = np.where(mask, a.data, a.data.dtype.type(0))

    def backward(g):
        accumulate(a, g * mask)

    return _finish(out, (a,), backward)


def sigmoid(a: Tensor2) -> Tensor2:
    x = a.data
    # Stable in both tails: never exponentiates a positive argument.
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def backward(g):
        accumulate(a, g * out * (1.0 - out))

    return _finish(out, (a,), backward)


def rowwise_softmax(a: Tensor2, temperature: float = 1.0) -> Tensor2:
    if temperature <= 0:
        raise ShapeMismatch("softmax temperature must be positive")
    inv_t = a.data.dtype.type(1.0 / temperature)
    z = a.data * inv_t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        gp = g * out
        accumulate(a, (gp - out * gp.sum(axis=1, keepdims=True)) * inv_t)

    return _finish(out, (a,), backward)


def layernorm(a: Tensor2, eps: float = 1e-5) -> Tensor2:
    x = a.data
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + a.data.dtype.type(eps))
    y = (x - mean) * inv_std

    def backward(g):
        # dx = inv_std * (g - mean(g) - y * mean(g * y)), per row
        gm = g.mean(axis=1, keepdims=True)
        gym = (g * y).mean(axis=1, keepdims=True)
        accumulate(a, inv_std * (g - gm - y * gym))

    return _finish(y, (a,), backward)


def rowwise_l2_normalize(a: Tensor2) -> Tensor2:
    x = a.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise NonFiniteDetected("cannot normalize a zero row")
    y = x / norms

    def backward(g):
        gy = (g * y).sum(axis=1, keepdims=True)
        accumulate(a, (g - y * gy) / norms)

    return _finish(y, (a,), backward)


def rowwise_dot(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"rowwise_dot: {a.shape} vs {b.shape}")
    out = (a.data * b.data).sum(axis=1, keepdims=True)

    def backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return _finish(out, (a, b), backward)


def cosine_rows(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine_rows: {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    na = np.sqrt((x * x).sum(axis=1, keepdims=True))
    nb = np.sqrt((y * y).sum(axis=1, keepdims=True))
    if np.any(na == 0) or np.any(nb == 0):
        raise NonFiniteDetected("cosine of a zero row is undefined")
    dots = (x * y).sum(axis=1, keepdims=True)
    c = dots / (na * nb)

    def backward(g):
        accumulate(a, g * (y / (na * nb) - c * x / (na * na)))
        accumulate(b, g * (x / (na * nb) - c * y / (nb * nb)))

    return _finish(c, (a, b), backward)


def concat_cols(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_dtype(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"concat_cols: row counts {a.shape[0]} vs {b.shape[0]}")
    out = np.concatenate([a.data, b.data], axis=1)
    ca = a.shape[1]

    def backward(g):
        accumulate(a, g[:, :ca])
        accumulate(b, g[:, ca:])

    return _finish(out, (a, b), backward)


def slice_cols(a: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeMismatch(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    out = a.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        accumulate(a, full)

    return _finish(out, (a,), backward)


def take_rows(a: Tensor2, indices: np.ndarray) -> Tensor2:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch("take_rows expects a flat index vector")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch(f"take_rows: index out of range for {a.shape[0]} rows")
    out = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)  # deterministic scatter-add, repeats allowed
        accumulate(a, full)

    return _finish(out, (a,), backward)


def sum_all(a: Tensor2) -> Tensor2:
    out = np.array([[a.data.sum()]], dtype=a.data.dtype)

    def backward(g):
        accumulate(a, np.full_like(a.data, g[0, 0]))

    return _finish(out, (a,), backward)


def mean_all(a: Tensor2) -> Tensor2:
    n = a.data.size
    out = np.array([[a.data.sum() / n]], dtype=a.data.dtype)

    def backward(g):
        accumulate(a, np.full_like(a.data, g[0, 0] / n))

    return _finish(out, (a,), backward)


def masked_logsumexp_rows(a: Tensor2, mask: np.ndarray) -> Tensor2:
    """Per-row log-sum-exp over entries where mask is nonzero.

    The mask is a plain array, not a differentiable input.  Every row
    must keep at least one unmasked entry.
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeMismatch(f"mask shape {m.shape} != data shape {a.shape}")
    if not m.any(axis=1).all():
        raise ShapeMismatch("masked_logsumexp_rows: a row has no unmasked entries")
    x = np.where(m, a.data, -np.inf)
    row_max = x.max(axis=1, keepdims=True)
    e = np.exp(x - row_max)  # masked entries: exp(-inf) = 0
    s = e.sum(axis=1, keepdims=True)
    out = row_max + np.log(s)

    def backward(g):
        accumulate(a, g * (e / s))

    return _finish(out.astype(a.data.dtype), (a,), backward)


def scalar_mix(lam: Tensor2, a: Tensor2, b: Tensor2) -> Tensor2:
    """lam * a + (1 - lam) * b with a per-row mixing column lam (m x 1)."""
    _same_dtype(lam, a, b)
    if a.shape != b.shape or lam.shape != (a.shape[0], 1):
        raise ShapeMismatch(
            f"scalar_mix: lam {lam.shape}, a {a.shape}, b {b.shape}"
        )
    lv = lam.data
    out = lv * a.data + (1.0 - lv) * b.data

    def backward(g):
        accumulate(lam, (g * (a.data - b.data)).sum(axis=1, keepdims=True))
        accumulate(a, g * lv)
        accumulate(b, g * (1.0 - lv))

    return _finish(out, (lam, a, b), backward)


# ---------------------------------------------------------------------------
# backward driver


def backward(loss: Tensor2) -> None:
    """Backpropagate from a 1x1 loss through its recorded graph.

    Leaf gradients accumulate; transient node gradients are reset on
    every call, so repeating backward doubles the leaves exactly.  The
    graph survives the call and is freed when the caller drops it.
    """
    if loss.shape != (1, 1):
        raise ShapeMismatch(f"backward needs a 1x1 loss, got {loss.shape}")

    topo: list[Tensor2] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor2, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in topo:
        if node._parents:  # transient: new pass, fresh gradient
            node.grad = None
    loss.grad = np.ones((1, 1), dtype=loss.data.dtype)

    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameter store


class ParamStore:
    """Named parameters with stable insertion-order iteration."""

    def __init__(self):
        self._params: dict[str, Tensor2] = {}

    def add(self, name: str, data: np.ndarray, dtype=np.float32) -> Tensor2:
        if name in self._params:
            raise ShapeMismatch(f"duplicate parameter name {name!r}")
        t = parameter(np.asarray(data), dtype=dtype)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor2:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor2]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_entries(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def astype(self, dtype) -> "ParamStore":
        clone = ParamStore()
        for name, t in self._params.items():
            clone.add(name, t.data.copy(), dtype=dtype)
        return clone

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            t = self._params[name]
            if arr.shape != t.data.shape:
                raise ShapeMismatch(
                    f"parameter {name!r}: stored shape {arr.shape} != {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable[[ParamStore], Tensor2],
    store: ParamStore,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of f against central finite differences.

    ``f`` must rebuild its graph from the store on every call and return
    a 1x1 tensor.  Each parameter entry is perturbed by +-step and the
    difference quotient is compared with the recorded gradient; the
    relative error denominator is clamped at 1e-6 so true-zero gradients
    do not divide by zero.  Run this on a float64 store; float32 finite
    differences are noise.
    """
    if not (0 < step <= 1e-2):
        raise ShapeMismatch(f"grad_check step must be in (0, 1e-2], got {step}")

    store.zero_grad()
    loss = f(store)
    if not np.isfinite(loss.data).all():
        raise NonFiniteDetected("loss is not finite at the evaluation point")
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in store.items()
    }

    max_rel = 0.0
    worst = ("", ())
    per_param: dict[str, float] = {}
    for name, t in store.items():
        flat = t.data.reshape(-1)
        an = analytic[name].reshape(-1)
        param_worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(store).item()
            flat[i] = orig - step
            f_minus = f(store).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteDetected(f"f not finite while perturbing {name}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(fd), abs(an[i]), 1e-6)
            rel = abs(fd - an[i]) / denom
            if rel > param_worst:
                param_worst = rel
            if rel > max_rel:
                max_rel = rel
                worst = (name, np.unravel_index(i, t.data.shape))
        per_param[name] = param_worst

    return GradCheckReport(
        max_rel_error=max_rel,
        worst_param=worst[0],
        worst_index=worst[1],
        per_param=per_param,
        tolerance=tolerance,
    )
