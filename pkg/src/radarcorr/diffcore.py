"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the correspondence network needs are provided. Every
``Tensor`` records its parents and a closure that pushes its gradient to them;
``backward`` walks the graph in reverse topological order.

Gradient contract: leaf tensors (parameters, inputs) accumulate ``grad``
across backward calls until ``ParamStore.zero_grad`` is called. Intermediate
tensors are reset at the start of each backward pass.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"RADARCORR-PARAMS\n"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_t(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, s):
        return scale(self, s)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of everything ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = []
    seen = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        if not node.is_leaf:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- elementary ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        out = np.add(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return Tensor(out, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = _t(a)
    s = float(s)
    return Tensor(a.data * s, (a,), lambda g: a._accum(g * s))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes batch."""
    a, b = _t(a), _t(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        b._accum(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return Tensor(out, (a, b), bw)


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = _t(a)
    if axes is None:
        if a.data.ndim < 2:
            raise ShapeError("transpose needs at least 2 dimensions")
        axes = list(range(a.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.data, axes), (a,), lambda g: a._accum(np.transpose(g, inv)))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    old = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(old)))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), lambda g: a._accum(g * mask))


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, with max-subtraction."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return Tensor(y, (a,), bw)


def log_softmax_rows(a) -> Tensor:
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        a._accum(g - p * g.sum(axis=-1, keepdims=True))

    return Tensor(y, (a,), bw)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then ``gain * x + bias``."""
    a, gain, bias = _t(a), _t(gain), _t(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gain._accum(_unbroadcast(g * xhat, gain.shape))
        bias._accum(_unbroadcast(g, bias.shape))
        gx = g * gain.data
        a._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor(out, (a, gain, bias), bw)


def gather(a, index) -> Tensor:
    """``a.data[index]`` for a tuple of integer index arrays; scatter-adds on the way back."""
    a = _t(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accum(full)

    return Tensor(out, (a,), bw)


def total(a) -> Tensor:
    a = _t(a)
    shape = a.shape
    return Tensor(a.data.sum(), (a,), lambda g: a._accum(np.broadcast_to(g, shape)))


def linear(x, weight, bias=None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def attention(q, k, v, heads: int, w_out=None, b_out=None, key_mask=None) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``q`` is (..., n_q, d) and ``k``/``v`` are (..., n_k, d), already projected.
    Each head attends with ``softmax(q_h k_h^T / sqrt(d / heads)) v_h``; heads
    are concatenated and optionally passed through ``w_out``/``b_out``.
    ``key_mask`` (..., n_k) of booleans excludes keys where False.
    """
    q, k, v = _t(q), _t(k), _t(v)
    d = q.shape[-1]
    if d % heads:
        raise ShapeError(f"feature dim {d} not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"incompatible q/k/v shapes {q.shape} {k.shape} {v.shape}")
    dh = d // heads
    lead = q.shape[:-2]

    def split(t):
        n = t.shape[-2]
        t = reshape(t, lead + (n, heads, dh))
        nd = len(lead)
        return transpose(t, tuple(range(nd)) + (nd + 1, nd, nd + 2))

    qh, kh, vh = split(q), split(k), split(v)
    scores = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
    if key_mask is not None:
        m = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e30)
        scores = add(scores, m.reshape(lead + (1, 1, m.shape[-1])))
    ctx = matmul(softmax_rows(scores), vh)
    nd = len(lead)
    ctx = transpose(ctx, tuple(range(nd)) + (nd + 1, nd, nd + 2))
    out = reshape(ctx, lead + (q.shape[-2], d))
    if w_out is not None:
        out = linear(out, w_out, b_out)
    return out


# -- parameters and optimisation -------------------------------------------

@dataclass
class ParamStore:
    """Named parameters plus Adam moments. Initialisation is seeded."""

    seed: int = 0
    params: dict = field(default_factory=dict)
    step: int = 0
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def _new(self, name, data) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, name=name)
        self.params[name] = t
        return t

    def xavier(self, name, fan_in: int, fan_out: int) -> Tensor:
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return self._new(name, self._rng.uniform(-lim, lim, size=(fan_in, fan_out)))

    def zeros(self, name, shape) -> Tensor:
        return self._new(name, np.zeros(shape))

    def ones(self, name, shape) -> Tensor:
        return self._new(name, np.ones(shape))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        for k, arr in arrays.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if self.params[k].shape != arr.shape:
                raise ShapeError(f"{k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=np.float64)


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> ParamStore:
    """One bias-corrected Adam update of every parameter that has a gradient.

    ``weight_decay`` shrinks parameters by ``lr * weight_decay`` per step,
    decoupled from the gradient moments.
    """
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        if p.grad is None:
            continue
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
        v = store._v[name]
        m *= beta1
        m += (1 - beta1) * p.grad
        v *= beta2
        v += (1 - beta2) * p.grad * p.grad
        data = p.data * (1.0 - lr * weight_decay) if weight_decay else p.data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


# -- checkpoints ------------------------------------------------------------

def save_params(store: ParamStore, path, config: dict | None = None) -> None:
    """Write a checkpoint: magic line, JSON header line, raw little-endian float64 payload."""
    entries = []
    offset = 0
    for name, p in store.params.items():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.data.size * 8
    header = {"format_version": CHECKPOINT_VERSION, "seed": store.seed,
              "step": store.step, "config": config or {}, "params": entries}
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for p in store.params.values():
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class CheckpointError(ValueError):
    pass


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return (header, {name: array}) from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {header.get('format_version')}")
    payload = rest[nl + 1:]
    arrays = {}
    for e in header["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        chunk = payload[e["offset"]:e["offset"] + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(e["shape"])
    return header, arrays


# -- finite differences -----------------------------------------------------

def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f())
        x[idx] = orig - h
        fm = float(f())
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def grad_close(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-6) -> bool:
    """Relative agreement with an absolute floor: |a - n| <= max(rtol * max(|a|, |n|), atol)."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    bound = np.maximum(rtol * np.maximum(np.abs(a), np.abs(n)), atol)
    return bool(np.all(np.abs(a - n) <= bound))
