"""Neural module templates (MLP / CNN / RNN) instantiated from type
signatures, and the monotonically growing library of frozen trained
modules plus fresh trainable templates.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lang import (FunType, GraphType, ListType, TensorType, Type, parse_type,
                   type_text)
from .tensor import ParamStore, Tensor


class InadmissibleSignature(ValueError):
    pass


@dataclass
class Hyper:
    mlp_hidden: int = 32
    cnn_channels: tuple = (4, 8)
    cnn_kernel: int = 3
    rnn_hidden: int = 16
    dropout: float = 0.0       # paper-scale config enables these
    batch_norm: bool = False


def _flat(dims):
    out = 1
    for d in dims:
        out *= d
    return out


def select_kind(input_type: Type, output_type: Type, classify=False):
    """Pick (kind, output_activation) for a module signature.

    Rank-2+ tensor inputs get a CNN, list inputs an RNN, anything else an
    MLP.  Bool outputs get a sigmoid; real vectors flagged as classification
    targets get a softmax; everything else is linear.
    """
    if isinstance(input_type, GraphType):
        raise InadmissibleSignature(
            "graph inputs are handled by combinators, not raw modules")
    if isinstance(output_type, FunType):
        # curried fold body acc -> (elem -> acc); an MLP over the
        # concatenated pair
        if not isinstance(input_type, TensorType) or \
                not isinstance(output_type.arg, TensorType) or \
                not isinstance(output_type.res, TensorType):
            raise InadmissibleSignature(
                f"bad curried signature {type_text(input_type)} -> "
                f"{type_text(output_type)}")
        act = "sigmoid" if output_type.res.atom == "bool" else "linear"
        return "MLP", act
    if isinstance(input_type, ListType):
        kind = "RNN"
    elif isinstance(input_type, TensorType) and len(input_type.dims) >= 2:
        kind = "CNN"
    elif isinstance(input_type, TensorType):
        kind = "MLP"
    else:
        raise InadmissibleSignature(f"bad input type {type_text(input_type)}")
    if not isinstance(output_type, TensorType):
        raise InadmissibleSignature(f"bad output type {type_text(output_type)}")
    if output_type.atom == "bool":
        act = "sigmoid"
    elif classify:
        act = "softmax"
    else:
        act = "linear"
    return kind, act


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class NeuralModule:
    """A named, typed, differentiable function backed by a ParamStore."""

    kind = "?"

    def __init__(self, name, signature, activation="linear"):
        self.name = name
        self.signature = signature
        self.activation = activation
        self.store = ParamStore()

    @property
    def frozen(self):
        return self.store.frozen

    def freeze(self):
        self.store.freeze()

    def _activate(self, x):
        if self.activation == "sigmoid":
            return T.sigmoid(x)
        if self.activation == "softmax":
            return T.softmax(x)
        return x

    def apply(self, value, mode="eval", rng=None):
        raise NotImplementedError

    def apply_pair(self, acc, x, mode="eval", rng=None):
        raise NotImplementedError(f"{self.name} is not a curried module")

    def fresh_copy(self, name, seed):
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.kind} {self.name}: {type_text(self.signature)}>"


def _flatten_input(x: Tensor) -> Tensor:
    if x.data.ndim > 2:
        return T.reshape(x, (x.data.shape[0], -1))
    return x


class MLPModule(NeuralModule):
    """One hidden relu layer.  Tensor input, or a window/pair of tensors
    presented as a single concatenated vector (fixed arity)."""

    kind = "MLP"

    def __init__(self, name, signature, hyper, seed, activation="linear",
                 in_elems=1):
        super().__init__(name, signature, activation)
        self.hyper = hyper
        self.in_elems = in_elems
        self.in_dim = self._input_dim(signature, in_elems)
        self.out_dims = self._output_dims(signature)
        rng = np.random.default_rng(seed)
        h = hyper.mlp_hidden
        out = _flat(self.out_dims)
        self.store.add("w1", _uniform(rng, self.in_dim, (self.in_dim, h)))
        self.store.add("b1", np.zeros(h))
        self.store.add("w2", _uniform(rng, h, (h, out)))
        self.store.add("b2", np.zeros(out))
        self._seed = seed

    @staticmethod
    def _input_dim(signature, in_elems):
        arg = signature.arg
        if isinstance(arg, TensorType):
            if isinstance(signature.res, FunType):  # curried fold body
                return _flat(arg.dims) + _flat(signature.res.arg.dims)
            return _flat(arg.dims)
        if isinstance(arg, ListType):  # conv kernel over a fixed-arity window
            return in_elems * _flat(arg.elem.dims)
        raise InadmissibleSignature(f"MLP cannot take {type_text(arg)}")

    @staticmethod
    def _output_dims(signature):
        res = signature.res
        if isinstance(res, FunType):
            res = res.res
        return res.dims

    def _run(self, flat, mode, rng):
        h = T.relu(flat @ self.store["w1"] + self.store["b1"])
        if self.hyper.dropout > 0.0:
            h = T.dropout(h, self.hyper.dropout, rng, mode == "train")
        out = h @ self.store["w2"] + self.store["b2"]
        if len(self.out_dims) > 1:
            out = T.reshape(out, (out.data.shape[0],) + self.out_dims)
        return self._activate(out)

    def apply(self, value, mode="eval", rng=None):
        if isinstance(value, list):  # conv window: concatenate, fixed arity
            if len(value) * _flat(value[0].data.shape[1:]) != self.in_dim:
                raise T.ShapeMismatch(
                    f"{self.name}: kernel arity mismatch, window of "
                    f"{len(value)} does not fill input dim {self.in_dim}")
            value = T.concat([_flatten_input(v) for v in value], axis=1)
        return self._run(_flatten_input(value), mode, rng)

    def apply_pair(self, acc, x, mode="eval", rng=None):
        flat = T.concat([_flatten_input(acc), _flatten_input(x)], axis=1)
        return self._run(flat, mode, rng)

    def fresh_copy(self, name, seed):
        return MLPModule(name, self.signature, self.hyper, seed,
                         self.activation, self.in_elems)


class CNNModule(NeuralModule):
    """Two conv+pool stages then a linear head.

    Rank-2 inputs are treated as one channel; rank-3 inputs as
    channels-first (C, H, W).
    """

    kind = "CNN"

    def __init__(self, name, signature, hyper, seed, activation="linear"):
        super().__init__(name, signature, activation)
        self.hyper = hyper
        arg = signature.arg
        if not isinstance(arg, TensorType) or len(arg.dims) not in (2, 3):
            raise InadmissibleSignature(f"CNN cannot take {type_text(arg)}")
        if len(arg.dims) == 2:
            self.cin, self.h, self.w = 1, *arg.dims
        else:
            self.cin, self.h, self.w = arg.dims
        if self.h % 4 or self.w % 4:
            raise InadmissibleSignature(
                f"CNN needs spatial dims divisible by 4, got {arg.dims}")
        self.out_dims = signature.res.dims
        c1, c2 = hyper.cnn_channels
        k = hyper.cnn_kernel
        rng = np.random.default_rng(seed)
        self.store.add("k1", _uniform(rng, self.cin * k * k, (c1, self.cin, k, k)))
        self.store.add("kb1", np.zeros(c1))
        self.store.add("k2", _uniform(rng, c1 * k * k, (c2, c1, k, k)))
        self.store.add("kb2", np.zeros(c2))
        feat = c2 * (self.h // 4) * (self.w // 4)
        out = _flat(self.out_dims)
        self.store.add("wo", _uniform(rng, feat, (feat, out)))
        self.store.add("bo", np.zeros(out))
        self._seed = seed

    def apply(self, value, mode="eval", rng=None):
        x = value
        if x.data.ndim == 3:
            x = T.reshape(x, (x.data.shape[0], 1) + x.data.shape[1:])
        pad = self.hyper.cnn_kernel // 2
        h = T.maxpool2(T.relu(T.conv2d(x, self.store["k1"], self.store["kb1"],
                                       padding=pad)))
        h = T.maxpool2(T.relu(T.conv2d(h, self.store["k2"], self.store["kb2"],
                                       padding=pad)))
        h = T.reshape(h, (h.data.shape[0], -1))
        if self.hyper.dropout > 0.0:
            h = T.dropout(h, self.hyper.dropout, rng, mode == "train")
        out = h @ self.store["wo"] + self.store["bo"]
        if len(self.out_dims) > 1:
            out = T.reshape(out, (out.data.shape[0],) + self.out_dims)
        return self._activate(out)

    def fresh_copy(self, name, seed):
        return CNNModule(name, self.signature, self.hyper, seed, self.activation)


class RNNModule(NeuralModule):
    """Single-layer LSTM over a list; the head reads the final cell state,
    which keeps additive accumulation unsquashed."""

    kind = "RNN"

    def __init__(self, name, signature, hyper, seed, activation="linear"):
        super().__init__(name, signature, activation)
        self.hyper = hyper
        arg = signature.arg
        if not isinstance(arg, ListType):
            raise InadmissibleSignature(f"RNN needs a list input")
        self.in_dim = _flat(arg.elem.dims)
        self.out_dims = signature.res.dims
        h = hyper.rnn_hidden
        rng = np.random.default_rng(seed)
        self.store.add("wx", _uniform(rng, self.in_dim, (self.in_dim, 4 * h)))
        self.store.add("wh", _uniform(rng, h, (h, 4 * h)))
        self.store.add("b", np.zeros(4 * h))
        out = _flat(self.out_dims)
        self.store.add("wo", _uniform(rng, h, (h, out)))
        self.store.add("bo", np.zeros(out))
        self._seed = seed

    def apply(self, value, mode="eval", rng=None):
        if not isinstance(value, list):
            raise T.ShapeMismatch(f"{self.name}: expected a list value")
        hdim = self.hyper.rnn_hidden
        B = value[0].data.shape[0]
        h = T.zeros((B, hdim))
        c = T.zeros((B, hdim))
        for elem in value:
            x = _flatten_input(elem)
            gates = x @ self.store["wx"] + h @ self.store["wh"] + self.store["b"]
            i = T.sigmoid(T.slice_(gates, (slice(None), slice(0, hdim))))
            f = T.sigmoid(T.slice_(gates, (slice(None), slice(hdim, 2 * hdim))))
            g = T.tanh(T.slice_(gates, (slice(None), slice(2 * hdim, 3 * hdim))))
            o = T.sigmoid(T.slice_(gates, (slice(None), slice(3 * hdim, 4 * hdim))))
            c = f * c + i * g
            h = o * T.tanh(c)
        out = c @ self.store["wo"] + self.store["bo"]
        if len(self.out_dims) > 1:
            out = T.reshape(out, (out.data.shape[0],) + self.out_dims)
        return self._activate(out)

    def fresh_copy(self, name, seed):
        return RNNModule(name, self.signature, self.hyper, seed, self.activation)


class FixedModule(NeuralModule):
    """A parameterless module wrapping an exact function of tape tensors
    (e.g. the min-plus relaxation kernel)."""

    kind = "FIXED"

    def __init__(self, name, signature, fn):
        super().__init__(name, signature)
        self.fn = fn
        self.store.freeze()

    def apply(self, value, mode="eval", rng=None):
        return self.fn(value)

    def fresh_copy(self, name, seed):
        return FixedModule(name, self.signature, self.fn)


def instantiate(kind, signature, hyper=None, seed=0, name=None,
                activation=None, in_elems=1):
    hyper = hyper or Hyper()
    if name is None:
        name = f"{kind.lower()}_{seed}"
    if activation is None:
        out_t = signature.res.res if isinstance(signature.res, FunType) \
            else signature.res
        activation = "sigmoid" if getattr(out_t, "atom", None) == "bool" \
            else "linear"
    if kind == "MLP":
        return MLPModule(name, signature, hyper, seed, activation, in_elems)
    if kind == "CNN":
        return CNNModule(name, signature, hyper, seed, activation)
    if kind == "RNN":
        return RNNModule(name, signature, hyper, seed, activation)
    raise InadmissibleSignature(f"unknown module kind {kind}")


def instantiate_for(signature, hyper=None, seed=0, name=None, classify=False):
    kind, act = select_kind(signature.arg, signature.res, classify)
    return instantiate(kind, signature, hyper, seed, name, act)


class DuplicateName(KeyError):
    pass


class Library:
    """Ordered, append-only collection of neural modules.

    Entries are never removed or mutated; frozen trained modules live next
    to fresh trainable templates.
    """

    def __init__(self):
        self._modules = {}

    def add(self, module):
        if module.name in self._modules:
            raise DuplicateName(f"library already has {module.name!r}")
        self._modules[module.name] = module
        return self

    def add_frozen(self, modules):
        for m in modules:
            if m.name in self._modules:
                raise DuplicateName(f"library already has {m.name!r}")
        for m in modules:
            m.freeze()
            self._modules[m.name] = m
        return self

    def get(self, name):
        if name not in self._modules:
            raise KeyError(f"unknown library name {name!r}")
        return self._modules[name]

    def __contains__(self, name):
        return name in self._modules

    def __len__(self):
        return len(self._modules)

    def names(self):
        return list(self._modules)

    def modules(self):
        return list(self._modules.values())

    def signature_of(self, name):
        m = self._modules.get(name)
        return m.signature if m else None

    def entries_of_type(self, signature):
        return [m for m in self._modules.values() if m.signature == signature]

    def fresh_candidates(self, signature, hyper=None, seed=0):
        """Frozen matches plus one fresh template of the selected kind."""
        out = [m for m in self.entries_of_type(signature) if m.frozen]
        try:
            fresh = instantiate_for(signature, hyper, seed,
                                    name=f"fresh_{len(self._modules)}")
        except InadmissibleSignature:
            return out if out else []
        out.append(fresh)
        return out

    # manifest + checkpoints ------------------------------------------------

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        entries = []
        stores = {}
        for m in self._modules.values():
            entries.append({
                "name": m.name,
                "signature": type_text(m.signature),
                "kind": m.kind,
                "frozen": m.frozen,
                "activation": m.activation,
                "in_elems": getattr(m, "in_elems", 1),
                "seed": getattr(m, "_seed", 0),
                "checkpoint": "params",
            })
            stores[m.name] = m.store
        with open(os.path.join(path, "library.json"), "w") as f:
            json.dump({"schema": 1, "entries": entries}, f, indent=1,
                      sort_keys=True)
        T.save_checkpoint(stores, os.path.join(path, "params"))

    @staticmethod
    def load(path, hyper=None):
        with open(os.path.join(path, "library.json")) as f:
            manifest = json.load(f)
        stores = T.load_checkpoint(os.path.join(path, "params"))
        lib = Library()
        for e in manifest["entries"]:
            sig = parse_type(e["signature"])
            mod = instantiate(e["kind"], sig, hyper, e["seed"], e["name"],
                              e["activation"], e.get("in_elems", 1))
            store = stores[e["name"]]
            for pname in store.names():
                np.copyto(mod.store[pname].data, store[pname].data)
            if e["frozen"]:
                mod.freeze()
            lib.add(mod)
        return lib
