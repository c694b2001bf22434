"""Dense float64 tensors with a reverse-mode tape, core NN ops, AdamW, grad checking.

Every op computes its forward value eagerly with numpy and, when gradients are
enabled and an input requires them, records a backward closure on a global
tape. ``backward(loss)`` replays the tape in reverse (execution order is a
valid topological order) and then frees it. Arrays are 64-bit floats
throughout so finite-difference checks can run at tight tolerances.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import EmptyReduction, LabelOutOfRange, ShapeMismatch


class Tensor:
    """A dense array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_tape: list[tuple[Tensor, object]] = []
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend tape recording (forward values still computed)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def reset_tape() -> None:
    _tape.clear()


def tape_size() -> int:
    return len(_tape)


def _record(out: Tensor, backward_fn) -> None:
    if _grad_enabled and out.requires_grad:
        _tape.append((out, backward_fn))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the recorded tape, then free it."""
    if loss.data.shape != ():
        raise ShapeMismatch(f"backward expects a scalar, got shape {loss.data.shape}")
    try:
        loss.grad = np.ones(())
        for out, fn in reversed(_tape):
            if out.grad is not None:
                fn(out.grad)
    finally:
        reset_tape()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)
    a_data, b_data = a.data, b.data

    def fn(g):
        _accumulate(a, g @ b_data.T)
        _accumulate(b, a_data.T @ g)

    _record(out, fn)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects a matrix, got {a.shape}")
    out = Tensor(a.data.T, a.requires_grad)

    def fn(g):
        _accumulate(a, g.T)

    _record(out, fn)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: {a.shape} + {b.shape}") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    _record(out, fn)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, a.requires_grad)

    def fn(g):
        _accumulate(a, g * s)

    _record(out, fn)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, a.requires_grad)

    def fn(g):
        _accumulate(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    _record(out, fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean/unit variance, then apply the affine pair."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm affine shapes {gain.shape}/{bias.shape} vs d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.data + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)
    gain_data = gain.data

    def fn(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gain_data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, term * inv_std)

    _record(out, fn)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), x.requires_grad)
    x_data = x.data

    def fn(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x_data**2)
        grad = 0.5 * (1.0 + t) + 0.5 * x_data * (1.0 - t**2) * du
        _accumulate(x, g * grad)

    _record(out, fn)
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds into it."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch(f"embedding ids must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding id out of range [0, {table.shape[0]})")
    out = Tensor(table.data[idx], table.requires_grad)

    def fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    _record(out, fn)
    return out


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep, x.requires_grad)

    def fn(g):
        _accumulate(x, g * keep)

    _record(out, fn)
    return out


def take_rows(x: Tensor, rows) -> Tensor:
    """Select matrix rows by index (e.g. the [CLS] position)."""
    idx = np.asarray(rows, dtype=np.int64)
    out = Tensor(x.data[idx], x.requires_grad)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accumulate(x, full)

    _record(out, fn)
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
    )
    sizes = [t.shape[axis] for t in tensors]

    def fn(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(sl)])
            offset += size

    _record(out, fn)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum every element down to a scalar."""
    out = Tensor(np.float64(a.data.sum()), a.requires_grad)

    def fn(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    _record(out, fn)
    return out


IGNORE_INDEX = -100


def cross_entropy(logits: Tensor, target_ids, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over rows whose target is not ignored."""
    if logits.data.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects 2-D logits, got {logits.shape}")
    targets = np.asarray(target_ids, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"targets {targets.shape} vs logits rows {logits.shape[0]}")
    selected = targets != ignore_index
    m = int(selected.sum())
    if m == 0:
        raise EmptyReduction("all targets ignored")
    n_classes = logits.shape[1]
    live = targets[selected]
    if live.min() < 0 or live.max() >= n_classes:
        raise LabelOutOfRange(f"target outside [0, {n_classes})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True)) + logits.data.max(axis=1, keepdims=True)
    log_probs = logits.data - logsumexp
    nll = -log_probs[selected, live]
    out = Tensor(np.float64(nll.mean()), logits.requires_grad)

    def fn(g):
        probs = np.exp(log_probs)
        grad = np.zeros_like(logits.data)
        grad[selected] = probs[selected]
        grad[selected, live] -= 1.0
        _accumulate(logits, grad * (float(g) / m))

    _record(out, fn)
    return out


class AdamW:
    """Decoupled-weight-decay Adam with bias-corrected moments."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 5e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is not None and g.shape != p.data.shape:
                raise ShapeMismatch(f"grad shape {g.shape} vs param {p.data.shape}")
            if self.weight_decay != 0.0:
                p.data -= self.lr * self.weight_decay * p.data
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.step_count = t

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment arrays keyed by parameter position, for checkpointing."""
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out


def grad_check(
    f,
    params: list[Tensor],
    h: float = 1e-5,
    max_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients of ``f()`` and central differences.

    ``f`` must be a deterministic scalar-valued computation over ``params``.
    When ``max_samples`` is set, that many parameter elements are sampled
    (without replacement across the flattened concatenation of all params).
    """
    for p in params:
        p.zero_grad()
    reset_tape()
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if max_samples is not None and max_samples < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_samples, replace=False)
        coords = [coords[int(k)] for k in picks]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            saved = flat[j]
            flat[j] = saved + h
            up = float(f().data)
            flat[j] = saved - h
            down = float(f().data)
            flat[j] = saved
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[i].reshape(-1)[j])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
