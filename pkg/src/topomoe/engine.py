"""Reverse-mode automatic differentiation on numpy arrays.

Everything is 64-bit floating point. A :class:`Tensor` wraps an ndarray and
remembers how it was produced; calling :func:`backward` on a scalar walks the
tape in reverse topological order and accumulates gradients into ``.grad``.
Gradients can be switched off globally (rollouts) with :func:`no_grad`,
in which case operations compute values only and build no tape.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An ndarray with a gradient slot and a backward closure."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        """Reverse accumulation from this (scalar or any-shaped seed-of-ones) tensor."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    # first assignment may alias g; later accumulations allocate instead of
    # mutating so aliased arrays are never written through
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, out, da: Callable, db: Callable) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(out)
    parents = []
    if isinstance(a, Tensor):
        parents.append(a)
    if isinstance(b, Tensor):
        parents.append(b)

    def backward(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(da(g), a.data.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(db(g), b.data.shape))

    return Tensor(out, tuple(parents), backward)


def _unary(a: Tensor, out, da: Callable) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(out)

    def backward(g):
        _accum(a, _unbroadcast(da(g), a.data.shape))

    return Tensor(out, (a,), backward)


def _val(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = av / bv
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def neg(a: Tensor) -> Tensor:
    return _unary(a, -a.data, lambda g: -g)


def matmul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = np.matmul(av, bv)

    def da(g):
        return np.matmul(g, np.swapaxes(bv, -1, -2))

    def db(g):
        return np.matmul(np.swapaxes(av, -1, -2), g)

    return _binary(a, b, out, da, db)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data >= 0
    out = np.where(mask, a.data, slope * a.data)
    return _unary(a, out, lambda g: np.where(mask, g, slope * g))


def square(a: Tensor) -> Tensor:
    return _unary(a, a.data * a.data, lambda g: 2.0 * g * a.data)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _unary(a, out, lambda g: 0.5 * g / out)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape)
        gx = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gx, a.data.shape)

    return _unary(a, out, da)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def amax(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient flows to the first argmax (ties)."""
    out = a.data.max(axis=axis, keepdims=keepdims)
    idx = a.data.argmax(axis=axis)

    def da(g):
        gfull = g if keepdims else np.expand_dims(g, axis)
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gfull, axis=axis)
        return gx

    return _unary(a, out, da)


def maximum(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    mask = av >= bv  # ties route to the first argument
    out = np.where(mask, av, bv)
    return _binary(a, b, out, lambda g: np.where(mask, g, 0.0), lambda g: np.where(mask, 0.0, g))


def minimum(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    mask = av <= bv
    out = np.where(mask, av, bv)
    return _binary(a, b, out, lambda g: np.where(mask, g, 0.0), lambda g: np.where(mask, 0.0, g))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    return minimum(maximum(a, lo), hi)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def da(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _unary(a, out, da)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def da(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return _unary(a, out, da)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [p.data for p in parts]
    out = np.concatenate(arrays, axis=axis)
    if not _GRAD_ENABLED:
        return Tensor(out)
    sizes = [a.shape[axis] for a in arrays]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return Tensor(out, tuple(parts), backward)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([p.data for p in parts], axis=axis)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, np.take(g, i, axis=axis))

    return Tensor(out, tuple(parts), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(old))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _unary(a, a.data.transpose(axes), lambda g: g.transpose(inv))


def unsqueeze(a: Tensor, axis: int = -1) -> Tensor:
    shape = list(a.data.shape)
    shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
    return reshape(a, tuple(shape))


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def da(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, key, g)
        return gx

    return _unary(a, out, da)


def take(a: Tensor, index: tuple) -> Tensor:
    """Fancy-index gather; backward scatter-adds into the source."""
    out = a.data[index]

    def da(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, index, g)
        return gx

    return _unary(a, out, da)


def where(cond: np.ndarray, a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = np.where(cond, av, bv)
    return _binary(a, b, out, lambda g: np.where(cond, g, 0.0), lambda g: np.where(cond, 0.0, g))


# ---------------------------------------------------------------------------
# layer primitives


def affine(x: Tensor, w: Tensor, b: Tensor, act: str | None = None) -> Tensor:
    """Fused x @ w + b with optional activation, flattened to one GEMM.

    ``x`` is (..., k), ``w`` (k, m), ``b`` (m,). A single tape node; the
    backward pass reuses the flattened layout for both weight and input grads.
    """
    xv, wv, bv = x.data, w.data, b.data
    lead = xv.shape[:-1]
    x2 = xv.reshape(-1, xv.shape[-1])
    pre = x2 @ wv
    pre += bv
    if act == "tanh":
        out2 = np.tanh(pre)
    elif act == "sigmoid":
        out2 = 1.0 / (1.0 + np.exp(-pre))
    elif act is None:
        out2 = pre
    else:
        raise ValueError(f"unsupported fused activation {act!r}")
    out = out2.reshape(lead + (wv.shape[1],))
    if not _GRAD_ENABLED:
        return Tensor(out)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if act == "tanh":
            g2 = g2 * (1.0 - out2 * out2)
        elif act == "sigmoid":
            g2 = g2 * out2 * (1.0 - out2)
        _accum(x, (g2 @ wv.T).reshape(xv.shape))
        _accum(w, x2.T @ g2)
        _accum(b, g2.sum(axis=0))

    return Tensor(out, (x, w, b), backward)


def masked_softmax(logits: Tensor, mask: np.ndarray, slope: float = 0.2) -> Tensor:
    """LeakyReLU then softmax along the last axis, restricted to ``mask``.

    Off-mask entries get zero probability and receive no gradient. For the
    (B, H, N, N) attention shape with a (B, 1, N, N) mask a fused kernel runs.
    """
    from . import _kernels as _k
    lv = logits.data
    fast = (_k.HAVE_NUMBA and lv.ndim == 4 and getattr(mask, "ndim", 0) == 4
            and mask.shape[1] == 1)
    if fast:
        m3 = np.ascontiguousarray(mask[:, 0])
        out = _k.masked_softmax_forward(np.ascontiguousarray(lv), m3, slope)
        if not _GRAD_ENABLED:
            return Tensor(out)

        def backward(g):
            _accum(logits, _k.masked_softmax_backward(
                np.ascontiguousarray(g), out, lv, m3, slope))

        return Tensor(out, (logits,), backward)

    act = np.where(lv >= 0, lv, slope * lv)
    act = np.where(mask, act, -np.inf)
    shifted = act - act.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        ds = out * (g - dot)
        _accum(logits, _unbroadcast(np.where(lv >= 0, ds, slope * ds), lv.shape))

    return Tensor(out, (logits,), backward)


_ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": lambda t: t,
    "leaky_relu": leaky_relu,
}


def mlp_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]], activation: str = "tanh",
                final_activation: str | None = None) -> Tensor:
    """Affine-activation chain. ``layers`` is a list of (weight, bias) pairs.

    The activation is applied after every layer except the last, which uses
    ``final_activation`` (default: same as ``activation``).
    """
    act = _ACTIVATIONS[activation]
    last = _ACTIVATIONS[final_activation if final_activation is not None else activation]
    h = x
    for i, (w, b) in enumerate(layers):
        h = affine(h, w, b)
        h = last(h) if i == len(layers) - 1 else act(h)
    return h


def gru_cell(h: Tensor, m: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Gated recurrent unit step: hidden ``h`` updated with input ``m``.

    z = sigmoid(Wz [h, m] + bz); r = sigmoid(Wr [h, m] + br)
    n = tanh(Wn [r*h, m] + bn); h' = (1 - z) * n + z * h
    """
    hm = concat([h, m], axis=-1)
    z = affine(hm, params["wz"], params["bz"], act="sigmoid")
    r = affine(hm, params["wr"], params["br"], act="sigmoid")
    rn = concat([r * h, m], axis=-1)
    n = affine(rn, params["wn"], params["bn"], act="tanh")
    return (1.0 - z) * n + z * h


def gat_head(x: Tensor, edge_feats: Tensor, adj: np.ndarray, params: dict[str, Tensor],
             slope: float = 0.2) -> Tensor:
    """Single attention head over a graph given as a dense adjacency mask.

    ``x`` has shape (..., N, d), ``edge_feats`` (..., N, N, de) and ``adj`` a
    0/1 mask of shape (..., N, N) where entry (j, k) marks an edge j -> k.
    Vertex j attends over its out-neighbours plus itself; logits come from a
    shared transform of both endpoint states and the edge feature.
    """
    xt = matmul(x, params["w"])                       # (..., N, d)
    src = matmul(xt, params["a_src"])                 # (..., N, 1)
    dst = matmul(xt, params["a_dst"])                 # (..., N, 1)
    ew = matmul(edge_feats, params["w_e"])            # (..., N, N, 1)
    logits = src + transpose_last2(dst) + reshape(ew, ew.data.shape[:-1])
    logits = leaky_relu(logits, slope)
    n = adj.shape[-1]
    mask = adj.astype(bool) | np.eye(n, dtype=bool)   # mandatory self-loop
    neg = np.where(mask, 0.0, -1e30)
    alpha = softmax(logits + neg, axis=-1)
    alpha = where(mask, alpha, 0.0)
    return matmul(alpha, xt)


def transpose_last2(a: Tensor) -> Tensor:
    axes = list(range(a.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParameterStore:
    """Named trainable tensors, shared by every agent when sharing is on."""

    def __init__(self, shared: bool = True):
        self.shared = shared
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(value, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_entries(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter in checkpoint: {k}")
            if self._params[k].data.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self._params[k].data.shape} vs {v.shape}")
            self._params[k].data = v.astype(np.float64).copy()

    def save(self, path):
        save_checkpoint(path, {k: v.data for k, v in self._params.items()})

    def load(self, path):
        self.load_values(load_checkpoint(path))


_CKPT_MAGIC = b"TMCK"
_CKPT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    """Binary named-tensor container.

    Layout (all integers little-endian): magic ``TMCK``; u32 version; u32 tensor
    count; then per tensor: u32 name length, UTF-8 name, u32 ndim, ndim * u64
    dims, and the row-major float64 little-endian payload.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            out[name] = data
        return out


class AdamState:
    """First/second moment accumulators for Adam with bias correction."""

    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(store: ParameterStore, state: AdamState):
    """One Adam update over every parameter that accumulated a gradient."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-5,
               tolerance: float = 1e-4, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Compare reverse-mode gradients of ``fn`` against central finite differences.

    ``fn`` must be a zero-argument closure over the given parameter tensors and
    return a scalar Tensor. For blocks larger than ``max_entries`` a seeded
    subsample of entries is probed; smaller blocks are probed exhaustively.
    Relative error uses an absolute floor of 1e-2 so that finite-difference
    noise on near-zero entries does not dominate.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar output")
    out.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                hi = fn().item()
            flat[i] = orig - step
            with no_grad():
                lo = fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            denom = max(abs(ga[i]), abs(fd), 1e-2)
            worst = max(worst, abs(ga[i] - fd) / denom)
        errors[name] = worst
    return {
        "per_block": errors,
        "max_error": max(errors.values()) if errors else 0.0,
        "tolerance": tolerance,
        "passed": all(e <= tolerance for e in errors.values()),
    }


# ---------------------------------------------------------------------------
# initialization helpers


def init_affine(store: ParameterStore, prefix: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, scale: float | None = None) -> tuple[Tensor, Tensor]:
    s = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    w = store.add(f"{prefix}/w", rng.normal(0.0, s, size=(fan_in, fan_out)))
    b = store.add(f"{prefix}/b", np.zeros(fan_out))
    return w, b


def init_gru(store: ParameterStore, prefix: str, dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    s = 1.0 / np.sqrt(2 * dim)
    for gate in ("z", "r", "n"):
        params[f"w{gate}"] = store.add(f"{prefix}/w{gate}", rng.normal(0.0, s, size=(2 * dim, dim)))
        params[f"b{gate}"] = store.add(f"{prefix}/b{gate}", np.zeros(dim))
    return params
