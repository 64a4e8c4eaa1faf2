"""Dense numeric engine: tensors on a reverse-mode tape, an Adam
optimizer, the one-cycle learning-rate schedule, finite-difference
gradient checking and a binary checkpoint container.

Recording is ambient: while a ``Tape`` is active (``with Tape() as t:``)
every op whose inputs require gradients appends a node; outside a tape
the same ops run as plain numpy with no bookkeeping. ``backward`` walks
the tape in exact reverse recording order, so gradient accumulation is
bit-reproducible.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class DetachedTensor(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class Tensor:
    """A numpy array plus gradient bookkeeping flags."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], tuple]):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Single-owner record of operations; not shareable while recording."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already recording")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, out, inputs, backward_fn):
        self._nodes.append(_Node(out, inputs, backward_fn))
        self._produced.add(id(out))

    def __len__(self):
        return len(self._nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# differentiable ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g @ b.data.T if na else None,
                a.data.T @ g if nb else None)

    return _emit(out, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """x @ w.T (+ b) in one node; w stored (out_features, in_features)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeMismatch(f"linear {x.shape} with weight {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        b = _as_tensor(b)
        data = data + b.data
    out = Tensor(data)
    nx, nw = x.requires_grad, w.requires_grad
    nb = b.requires_grad if b is not None else False

    def backward(g):
        gx = g @ w.data if nx else None
        gw = g.T @ x.data if nw else None
        gb = g.sum(axis=0) if nb else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit(out, inputs, backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(g, b.data.shape) if nb else None)

    return _emit(out, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, scalar_mul(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if na else None,
                _unbroadcast(g * ad, bd.shape) if nb else None)

    return _emit(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if na else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if nb else None
        return ga, gb

    return _emit(out, (a, b), backward)


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * c)
    na = a.requires_grad

    def backward(g):
        return (g * c if na else None,)

    return _emit(out, (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    needs = [t.requires_grad for t in ts]

    def backward(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(s if need else None for s, need in zip(splits, needs))

    return _emit(out, ts, backward)


def slice_lastdim(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[..., start:stop].copy())
    na = a.requires_grad
    shape = a.data.shape

    def backward(g):
        if not na:
            return (None,)
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _emit(out, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    na = a.requires_grad

    def backward(g):
        return (g * mask if na else None,)

    return _emit(out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    na = a.requires_grad
    y = out.data

    def backward(g):
        return (g * y if na else None,)

    return _emit(out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    na = a.requires_grad
    x = a.data

    def backward(g):
        return (g / x if na else None,)

    return _emit(out, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data))
    na = a.requires_grad
    # subgradient 0 at the kink keeps backward deterministic
    s = np.sign(a.data)

    def backward(g):
        return (g * s if na else None,)

    return _emit(out, (a,), backward)


def softmax_rows(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("softmax_rows expects a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    na = a.requires_grad

    def backward(g):
        if not na:
            return (None,)
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _emit(out, (a,), backward)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis))
    na = a.requires_grad
    shape = a.data.shape

    def backward(g):
        if not na:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(out, (a,), backward)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.asarray(a.data.mean()))
    na = a.requires_grad
    shape = a.data.shape
    size = a.data.size

    def backward(g):
        if not na:
            return (None,)
        return (np.broadcast_to(g / size, shape).copy(),)

    return _emit(out, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    na = a.requires_grad
    orig = a.data.shape

    def backward(g):
        return (g.reshape(orig) if na else None,)

    return _emit(out, (a,), backward)


def gather_rows(a, indices) -> Tensor:
    """Row lookup a[indices]; the adjoint scatter-adds into the table."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(a.data[idx])
    na = a.requires_grad
    shape = a.data.shape

    def backward(g):
        if not na:
            return (None,)
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(out, (a,), backward)


embedding_lookup = gather_rows


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Scatter-add rows of a into num_segments buckets (empty -> zeros)."""
    a = _as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.data.shape[0]:
        raise ShapeMismatch("segment ids must match the leading dimension")
    out_data = np.zeros((num_segments,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(out_data, seg, a.data)
    out = Tensor(out_data)
    na = a.requires_grad

    def backward(g):
        return (g[seg] if na else None,)

    return _emit(out, (a,), backward)


def segment_softmax(a, segment_ids, num_segments: int) -> Tensor:
    """Softmax of rows within each segment; rows of one segment sum to 1.

    Works on 1-D scores or on (n, k) stacks normalized per column.
    Segments with no rows simply produce no output rows.
    """
    a = _as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.data.shape[0]:
        raise ShapeMismatch("segment ids must match the leading dimension")
    tail = a.data.shape[1:]
    seg_max = np.full((num_segments,) + tail, -np.inf, dtype=a.data.dtype)
    np.maximum.at(seg_max, seg, a.data)
    e = np.exp(a.data - seg_max[seg])
    denom = np.zeros((num_segments,) + tail, dtype=a.data.dtype)
    np.add.at(denom, seg, e)
    y = e / denom[seg]
    out = Tensor(y)
    na = a.requires_grad

    def backward(g):
        if not na:
            return (None,)
        gy = np.zeros((num_segments,) + tail, dtype=g.dtype)
        np.add.at(gy, seg, g * y)
        return (y * (g - gy[seg]),)

    return _emit(out, (a,), backward)


# ---------------------------------------------------------------------------
# backward pass


class GradientMap:
    """Gradients keyed by tensor identity; unused tensors read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return g if g is not None else np.zeros_like(t.data)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Gradients of a scalar loss for every requires_grad tensor.

    Visits tape nodes in exact reverse recording order; accumulation
    order is therefore fixed and results are bit-identical across runs.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss has shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise DetachedTensor("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data)
    }
    for node in reversed(tape._nodes):
        gout = grads.get(id(node.out))
        if gout is None:
            continue
        for t, gin in zip(node.inputs, node.backward(gout)):
            if gin is None:
                continue
            if gin.shape != t.data.shape:
                gin = gin.reshape(t.data.shape)
            acc = grads.get(id(t))
            grads[id(t)] = gin if acc is None else acc + gin
    return GradientMap(grads)


# ---------------------------------------------------------------------------
# optimizer / schedule


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, Tensor], grads, state: OptimizerState,
              lr: float) -> OptimizerState:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[p] if isinstance(grads, GradientMap) else grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} for {name} {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


ONECYCLE_WARMUP_FRACTION = 0.05
ONECYCLE_DIV_FACTOR = 25.0
ONECYCLE_FINAL_DIV_FACTOR = 1e4


def onecycle_lr(step: int, total_steps: int, max_lr: float) -> float:
    """One-cycle schedule: linear warmup over the first 5% of steps from
    max_lr/25 to max_lr, then cosine anneal to max_lr/1e4 at the last
    step. The trace peaks exactly at ``round(0.05 * total_steps)``.
    """
    if not 0 <= step < total_steps:
        raise OutOfRange(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return max_lr
    warmup = int(round(ONECYCLE_WARMUP_FRACTION * total_steps))
    warmup = min(max(warmup, 1), total_steps - 1)
    initial = max_lr / ONECYCLE_DIV_FACTOR
    final = max_lr / ONECYCLE_FINAL_DIV_FACTOR
    if step <= warmup:
        return initial + (max_lr - initial) * (step / warmup)
    pct = (step - warmup) / (total_steps - 1 - warmup)
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * pct))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_index: int
    n_checked: int
    n_excluded: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-5,
    exclude: dict[str, np.ndarray] | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    retry_eps: tuple[float, ...] = (),
) -> dict[str, GradCheckResult]:
    """Compare tape gradients of ``f(params)`` against central finite
    differences, entry by entry.

    Relative error is |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). Entries
    flagged in ``exclude`` (e.g. relu inputs at exactly 0) are reported
    as excluded instead of checked. ``max_entries`` caps the entries per
    parameter via a seeded subsample; by default every entry is checked.
    f must be deterministic and should run at float64.

    A fixed-step central difference cannot resolve a gradient entry that
    sits below the oracle's own evaluation noise (about machine epsilon
    times the intermediate scale of f, divided by eps). When
    ``retry_eps`` is given, an entry exceeding tol at the base step is
    re-estimated at those coarser steps and its smallest relative error
    is kept; a genuine adjoint fault stays wrong at every step size.
    """
    with Tape() as tape:
        loss = f(params)
    grads = backward(tape, loss)
    rng = np.random.default_rng(seed)
    results: dict[str, GradCheckResult] = {}
    for name, p in params.items():
        g_ad = grads[p].reshape(-1)
        flat = p.data.flat  # flatiter: assignment always hits the array
        excluded_mask = None
        if exclude and name in exclude:
            excluded_mask = np.asarray(exclude[name], dtype=bool).reshape(-1)
        indices = np.arange(p.data.size)
        if excluded_mask is not None:
            indices = indices[~excluded_mask]
        n_excluded = p.data.size - indices.size
        if max_entries is not None and indices.size > max_entries:
            indices = np.sort(rng.choice(indices, size=max_entries, replace=False))

        def central(idx: int, step: float) -> float:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = float(f(params).data)
            flat[idx] = orig - step
            f_minus = float(f(params).data)
            flat[idx] = orig
            return (f_plus - f_minus) / (2.0 * step)

        def rel_error(idx: int, step: float) -> float:
            g_fd = central(idx, step)
            return abs(g_ad[idx] - g_fd) / max(abs(g_ad[idx]), abs(g_fd), 1e-8)

        worst = 0.0
        worst_idx = -1
        for idx in indices:
            rel = rel_error(idx, eps)
            for coarse in retry_eps:
                if rel < tol:
                    break
                rel = min(rel, rel_error(idx, coarse))
            if rel > worst:
                worst = rel
                worst_idx = int(idx)
        results[name] = GradCheckResult(
            name=name, max_rel_error=worst, worst_index=worst_idx,
            n_checked=int(indices.size), n_excluded=int(n_excluded))
    return results


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(directory, params: dict[str, Tensor], metadata: dict) -> None:
    """Write manifest.json (names, shapes, precision, metadata) and
    params.bin (little-endian raw arrays concatenated in manifest order).
    """
    os.makedirs(directory, exist_ok=True)
    dtype = None
    entries = []
    for name, p in params.items():
        if dtype is None:
            dtype = p.data.dtype
        elif p.data.dtype != dtype:
            raise ShapeMismatch("checkpoint parameters must share one dtype")
        entries.append({"name": name, "shape": list(p.data.shape)})
    precision = "f64" if dtype == np.float64 else "f32"
    manifest = {"precision": precision, "params": entries}
    manifest.update(metadata)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=False)
        fh.write("\n")
    little = "<f8" if precision == "f64" else "<f4"
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        for name, p in params.items():
            fh.write(np.ascontiguousarray(p.data, dtype=little).tobytes())


def load_checkpoint(directory) -> tuple[dict[str, Tensor], dict]:
    """Read a checkpoint directory back into named tensors + metadata."""
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    little = "<f8" if manifest["precision"] == "f64" else "<f4"
    dtype = np.float64 if manifest["precision"] == "f64" else np.float32
    raw = np.fromfile(os.path.join(directory, "params.bin"), dtype=little)
    sizes = [int(np.prod(entry["shape"])) if entry["shape"] else 1
             for entry in manifest["params"]]
    if sum(sizes) != raw.size:
        raise ShapeMismatch("params.bin size disagrees with the manifest")
    params: dict[str, Tensor] = {}
    offset = 0
    for entry, size in zip(manifest["params"], sizes):
        block = raw[offset:offset + size].astype(dtype).reshape(entry["shape"])
        params[entry["name"]] = Tensor(block, requires_grad=True)
        offset += size
    return params, manifest
