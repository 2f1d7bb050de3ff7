"""Small reverse-mode autodiff over float64 numpy arrays.

Every op-produced :class:`Tensor` records its parents and a local backward
rule. Tensors are numbered in creation order, so creation order is a valid
topological order of the recorded graph; :func:`backward` walks the reachable
part of that tape in reverse, visiting each node once.
"""

from __future__ import annotations

import contextlib
import itertools
import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_counter)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return slice_(self, idx)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.pop(tid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg)
    return _make(out, (x,), lambda g: (g * np.where(pos, 1.0, neg + alpha),))


def where(cond: np.ndarray, a, b) -> Tensor:
    """``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# --------------------------------------------------------------------------
# shape


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def expand_dims(x: Tensor, axis: int) -> Tensor:
    return _make(np.expand_dims(x.data, axis), (x,), lambda g: (np.squeeze(g, axis),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    return _make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, x.shape),))


def slice_(x: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    basic = _is_basic(idx)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)
    return _make(x.data[idx], (x,), bw)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer)) for p in parts)


def take(x: Tensor, idx, axis: int = 0) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        out = np.zeros_like(x.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)
    return _make(np.take(x.data, idx, axis=axis), (x,), bw)


def segment_sum(x: Tensor, segments, n: int, axis: int = 0) -> Tensor:
    """Sum slices of ``x`` along ``axis`` into ``n`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.intp)
    shape = list(x.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(np.moveaxis(out, axis, 0), segments, np.moveaxis(x.data, axis, 0))
    return _make(out, (x,), lambda g: (np.take(g, segments, axis=axis),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return _make(np.stack([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# --------------------------------------------------------------------------
# reductions


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def _extreme(x: Tensor, axis: int, mask, use_max: bool) -> Tensor:
    fill = -np.inf if use_max else np.inf
    data = x.data if mask is None else np.where(mask, x.data, fill)
    arg = np.argmax(data, axis=axis) if use_max else np.argmin(data, axis=axis)
    arg = np.expand_dims(arg, axis)
    out = np.take_along_axis(data, arg, axis=axis).squeeze(axis)
    if mask is not None:
        out = np.where(np.isfinite(out), out, 0.0)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        if mask is not None:
            gx = np.where(mask, gx, 0.0)
        return (gx,)
    return _make(out, (x,), bw)


def max_(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Maximum over ``axis``; masked-out entries are ignored, empty rows give 0."""
    return _extreme(x, axis, None if mask is None else np.broadcast_to(mask, x.shape), True)


def min_(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    return _extreme(x, axis, None if mask is None else np.broadcast_to(mask, x.shape), False)


def masked_mean(x: Tensor, mask, axis: int = -1) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=DTYPE), x.shape)
    count = np.maximum(mask.sum(axis=axis), 1.0)
    return div(sum_(mul(x, mask), axis), count)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product over the last axis."""
    return sum_(mul(a, b), axis=-1)


# --------------------------------------------------------------------------
# linear algebra and normalization


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >= 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2:
                ga = _mm2(g, b.data.T)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # fold every batch axis into one product instead of summing afterwards
                k, m = b.shape
                ga_rows = a.data.shape[-2]
                gb = np.broadcast_to(a.data, g.shape[:-2] + (ga_rows, k)).reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        if ga is not None and ga.shape != a.shape:
            ga = _unbroadcast(ga, a.shape)
        return ga, gb
    return _make(_mm2(a.data, b.data) if b.ndim == 2 else a.data @ b.data, (a, b), bw)


def _mm2(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` for 2-D ``w`` as a single matrix product over all leading axes."""
    if x.ndim <= 2:
        return x @ w
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out, in)."""
    y = matmul(x, swapaxes(w, 0, 1))
    return y if b is None else add(y, b)


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    data = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = np.max(data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(data - m)
    z = e.sum(axis=axis, keepdims=True)
    out = e / np.where(z > 0, z, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    data = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = np.max(data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = data - m
    z = np.exp(shifted).sum(axis=axis, keepdims=True)
    lse = np.log(np.where(z > 0, z, 1.0))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        g = np.where(np.isfinite(out), g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), bw)


def cross_entropy(logits: Tensor, target, mask=None, axis: int = -1) -> Tensor:
    """Summed negative log-likelihood of integer ``target`` classes.

    ``logits`` has classes on ``axis``; ``target`` indexes that axis for every
    leading position. ``mask`` hides invalid classes.
    """
    lp = log_softmax(logits, axis=axis, mask=mask)
    target = np.asarray(target, dtype=np.intp)
    picked = np.expand_dims(target, axis)
    sel = np.take_along_axis(lp.data, picked, axis=axis)
    if not np.all(np.isfinite(sel)):
        raise ValueError("cross_entropy target points at a masked class")

    def bw(g):
        gl = np.zeros_like(lp.data)
        np.put_along_axis(gl, picked, -np.broadcast_to(g, picked.shape), axis=axis)
        return (gl,)
    return _make(-sel.sum(), (lp,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over an empty axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx_hat = g * gain.data
        n = x.shape[-1]
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)
    return _make(out, (x, gain, bias), bw)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = x.data / norm

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)
    return _make(out, (x,), bw)


# --------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; :meth:`step` clears gradients afterwards."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        if len(self.m) != len(self.params) or any(m.shape != p.shape for m, p in zip(self.m, self.params)):
            raise RuntimeError("optimizer state does not match its parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"__step__": np.array([self.t], dtype=DTYPE)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["__step__"][0])
        self.m = [arrays[f"m.{i}"].copy() for i in range(len(self.params))]
        self.v = [arrays[f"v.{i}"].copy() for i in range(len(self.params))]


# --------------------------------------------------------------------------
# checkpoints: magic, u64 manifest length, json manifest, raw little-endian f64 payloads

_MAGIC = b"SMAPCKP1"


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with Path(path).open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for b in blobs:
            f.write(b)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n])
    base = 16 + n
    out = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        out[e["name"]] = np.frombuffer(raw[start:start + e["nbytes"]], dtype="<f8").reshape(tuple(e["shape"])).astype(DTYPE)
    return out, manifest["meta"]


# --------------------------------------------------------------------------
# finite differences


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5, entries: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``x`` at flat positions ``entries`` (default: all)."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size) if entries is None else entries:
            old = flat[i]
            flat[i] = old + h
            fp = fn().item()
            flat[i] = old - h
            fm = fn().item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
    return g


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              per_input: bool = True) -> float:
    """Relative error between analytic and central-difference gradients.

    The error is ``|a - n| / max(|a|, |n|, 1e-8)`` in the 2-norm, taken over
    all entries or over ``max_entries`` randomly chosen ones per input. With
    ``per_input`` the worst input is reported; otherwise all inputs are
    stacked into one vector, which keeps inputs whose gradients sit near the
    rounding floor from dominating a whole-model check.
    """
    for x in inputs:
        x.grad = None
    backward(fn())
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    stacked_a, stacked_n = [], []
    for x in inputs:
        a = np.zeros_like(x.data) if x.grad is None else x.grad
        x.grad = None
        entries = None
        if max_entries is not None and x.data.size > max_entries:
            entries = rng.choice(x.data.size, size=max_entries, replace=False)
        n = numeric_grad(fn, x, h, entries)
        a, n = a.reshape(-1), n.reshape(-1)
        if entries is not None:
            a, n = a[entries], n[entries]
        stacked_a.append(a)
        stacked_n.append(n)
        worst = max(worst, _rel_err(a, n))
    if per_input:
        return worst
    return _rel_err(np.concatenate(stacked_a), np.concatenate(stacked_n))


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)
