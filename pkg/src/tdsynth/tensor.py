"""Dense-tensor runtime with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record a tape of backward closures while any
input requires gradients.  The tape is confined to one evaluation; backward
walks it in reverse topological order exactly once.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class ShapeMismatch(ValueError):
    pass


def _shape_error(op, a, b):
    return ShapeMismatch(f"{op}: incompatible shapes {a} and {b}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=()):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _needs(*ts):
    return any(t.requires_grad or t._prev for t in ts)


def _make(data, parents, backward):
    out = Tensor(data)
    if _needs(*parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape)

    def back(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), back)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_error("sub", a.shape, b.shape)

    def back(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(-_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), back)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape)

    def back(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), back)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def back(g):
        a._accum(g @ b.data.T)
        ga = a.data
        if ga.ndim > 2:
            ga = ga.reshape(-1, ga.shape[-1])
            gg = g.reshape(-1, g.shape[-1])
        else:
            gg = g
        b._accum(ga.T @ gg)

    return _make(data, (a, b), back)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def back(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), back)


def tanh(a):
    a = _wrap(a)
    y = np.tanh(a.data)

    def back(g):
        a._accum(g * (1.0 - y * y))

    return _make(y, (a,), back)


def sigmoid(a):
    a = _wrap(a)
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(a.data) / (1.0 + np.exp(a.data)))

    def back(g):
        a._accum(g * y * (1.0 - y))

    return _make(y, (a,), back)


def log(a):
    a = _wrap(a)

    def back(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), back)


def softmax(a):
    """Softmax over the last axis."""
    a = _wrap(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        a._accum((g - (g * y).sum(axis=-1, keepdims=True)) * y)

    return _make(y, (a,), back)


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape

    def back(g):
        a._accum(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), back)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def back(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, p in zip(tensors, pieces):
            t._accum(p)

    return _make(data, tuple(tensors), back)


def slice_(a, index):
    a = _wrap(a)

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accum(full)

    return _make(a.data[index], (a,), back)


def rsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), back)


def rmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape) / n)

    return _make(data, (a,), back)


def amin(a, axis, keepdims=False):
    """Min over an axis; subgradient routed to the first minimal element."""
    a = _wrap(a)
    data = a.data.min(axis=axis, keepdims=keepdims)
    idx = a.data.argmin(axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        a._accum(full)

    return _make(data, (a,), back)


def minimum(a, b):
    """Elementwise min; ties route the subgradient to the first argument."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data

    def back(g):
        a._accum(_unbroadcast(g * take_a, a.data.shape))
        b._accum(_unbroadcast(g * (~take_a), b.data.shape))

    return _make(np.where(take_a, a.data, b.data), (a, b), back)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution, x: [B,C,H,W], w: [O,C,kh,kw], b: [O]."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    B, C, H, W = x.data.shape
    O, _, kh, kw = w.data.shape
    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    out = np.zeros((B, O, Ho, Wo), dtype=x.data.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, :, dy:dy + Ho * s:s, dx:dx + Wo * s:s]
            out += np.einsum("bchw,oc->bohw", patch, w.data[:, :, dy, dx])
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        out = out + b.data.reshape(1, O, 1, 1)
        parents.append(b)

    def back(g):
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[:, :, dy:dy + Ho * s:s, dx:dx + Wo * s:s]
                gw = np.einsum("bohw,bchw->oc", g, patch)
                grad_w = np.zeros_like(w.data)
                grad_w[:, :, dy, dx] = gw
                w._accum(grad_w)
                gxp[:, :, dy:dy + Ho * s:s, dx:dx + Wo * s:s] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, dy, dx])
        x._accum(gxp[:, :, p:p + H, p:p + W] if p else gxp)
        if b is not None:
            b._accum(g.sum(axis=(0, 2, 3)))

    return _make(out, tuple(parents), back)


def maxpool2(x):
    """2x2 max pooling, stride 2; ties route to the lowest window index."""
    x = _wrap(x)
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ShapeMismatch(f"maxpool2: odd spatial dims {x.shape}")
    win = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x._accum(gw.reshape(B, C, H, W))

    return _make(out, (x,), back)


def dropout(x, rate, rng, train):
    if not train or rate <= 0.0:
        return x
    x = _wrap(x)
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def back(g):
        x._accum(g * mask)

    return _make(x.data * mask, (x,), back)


def batch_norm(x, gamma, beta, running, train, momentum=0.1, eps=1e-5):
    """Batch norm over axis 0; `running` is a dict with 'mean'/'var' arrays."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if train:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running["mean"] = (1 - momentum) * running["mean"] + momentum * mean
        running["var"] = (1 - momentum) * running["var"] + momentum * var
    else:
        mean, var = running["mean"], running["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = gamma.data * xhat + beta.data

    def back(g):
        gamma._accum((g * xhat).sum(axis=0))
        beta._accum(g.sum(axis=0))
        if train:
            n = x.data.shape[0]
            gx = (gamma.data * inv / n) * (
                n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0))
        else:
            gx = g * gamma.data * inv
        x._accum(gx)

    return _make(out, (x, gamma, beta), back)


def zeros(shape):
    return Tensor(np.zeros(shape))


# ---------------------------------------------------------------------------
# parameter storage and optimizers


class FrozenStoreError(RuntimeError):
    pass


class ParamStore:
    """Named parameter tensors with a freeze flag for the whole group."""

    def __init__(self, frozen=False):
        self._params = {}
        self.frozen = frozen

    def add(self, name, array):
        if self.frozen:
            raise FrozenStoreError(f"store is frozen; cannot add {name}")
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        self._params[name] = Tensor(np.asarray(array, dtype=_DEFAULT_DTYPE),
                                    requires_grad=not self.frozen)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def num_params(self):
        return sum(t.size for t in self._params.values())

    def freeze(self):
        self.frozen = True
        for t in self._params.values():
            t.requires_grad = False
            t.grad = None

    def set_(self, name, array):
        if self.frozen:
            raise FrozenStoreError(f"store is frozen; cannot update {name}")
        np.copyto(self._params[name].data, array)

    def snapshot(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, snap):
        if self.frozen:
            raise FrozenStoreError("store is frozen; cannot restore")
        for k, a in snap.items():
            np.copyto(self._params[k].data, a)

    def state_bytes(self):
        h = b""
        for k in sorted(self._params):
            h += k.encode() + self._params[k].data.astype("<f8").tobytes()
        return h

    def copy(self, frozen=None):
        out = ParamStore()
        for k, t in self._params.items():
            out.add(k, t.data.copy())
        if self.frozen if frozen is None else frozen:
            out.freeze()
        return out


class SGD:
    def __init__(self, params, lr):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = [p for p in params if p.requires_grad]
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + raw little-endian row-major payload


def save_checkpoint(stores, path):
    """Write {module name -> ParamStore} to `path` (a directory)."""
    os.makedirs(path, exist_ok=True)
    entries = []
    payload = bytearray()
    for mod_name in stores:
        store = stores[mod_name]
        params = []
        for pname in store.names():
            arr = store[pname].data.astype("<f8")
            raw = arr.tobytes()
            params.append({"name": pname, "shape": list(arr.shape),
                           "offset": len(payload), "nbytes": len(raw)})
            payload.extend(raw)
        entries.append({"module": mod_name, "frozen": store.frozen,
                        "params": params})
    digest = hashlib.sha256(bytes(payload)).hexdigest()
    manifest = {"schema": 1, "dtype": "<f8", "sha256": digest,
                "entries": entries}
    with open(os.path.join(path, "params.bin"), "wb") as f:
        f.write(bytes(payload))
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_checkpoint(path):
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    with open(os.path.join(path, "params.bin"), "rb") as f:
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise IOError(f"checkpoint payload checksum mismatch in {path}")
    stores = {}
    for entry in manifest["entries"]:
        store = ParamStore()
        for p in entry["params"]:
            raw = payload[p["offset"]:p["offset"] + p["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f8").reshape(p["shape"])
            store.add(p["name"], arr.copy())
        if entry["frozen"]:
            store.freeze()
        stores[entry["module"]] = store
    return stores
