"""Differentiable evaluation of complete programs on typed values.

Values carry a leading batch dimension on every tensor: a VTensor holds one
[B, *dims] array, a VList holds per-position [B, *dims] arrays, and a VGraph
additionally carries shared symmetric adjacency lists.  Evaluation in train
mode runs on the autodiff tape end to end.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .lang import (Compose, ConvC, FoldC, Hole, LibRef, MapC, Term, Zeros)
from .tensor import Tensor


@dataclass
class VTensor:
    t: Tensor


@dataclass
class VList:
    items: list


@dataclass
class VGraph:
    nodes: list
    adj: list                 # adj[u]: sorted neighbor indices; symmetric


Value = object


@dataclass
class VClosure:
    """A curried module partially applied to an accumulator."""
    module: object
    acc: Tensor
    mode: str = "eval"
    rng: object = None

    def call(self, x: Tensor) -> Tensor:
        return self.module.apply_pair(self.acc, x, self.mode, self.rng)


@dataclass
class InterpConfig:
    conv_radius: int = 1      # list conv window is 2p+1
    max_degree: int = 4       # graph neighborhoods padded to self + this
    seq_tag: str = ""


class EvalError(RuntimeError):
    pass


def _batch_size(value):
    if isinstance(value, VTensor):
        return value.t.data.shape[0]
    if isinstance(value, VList):
        return value.items[0].data.shape[0]
    if isinstance(value, VGraph):
        return value.nodes[0].data.shape[0]
    raise EvalError(f"not a value: {value!r}")


def evaluate(term: Term, value, library, mode="eval", rng=None,
             config: InterpConfig | None = None):
    """Apply a complete program to a value.

    `library` is anything with get(name) -> module (a Library or a plain
    dict of candidate bindings).
    """
    config = config or InterpConfig()
    getter = library.get if hasattr(library, "get") else library.__getitem__

    def resolve(name):
        m = getter(name)
        if m is None:
            raise KeyError(f"unknown library name {name!r}")
        return m

    def apply(t: Term, v):
        if isinstance(t, Hole):
            raise EvalError("cannot evaluate a partial program")
        if isinstance(t, LibRef):
            return apply_module(resolve(t.name), v)
        if isinstance(t, Compose):
            return apply(t.outer, apply(t.inner, v))
        if isinstance(t, MapC):
            return map_apply(lambda x: apply(t.body, x), v)
        if isinstance(t, FoldC):
            init = const_value(t.init, _batch_size(v))
            return fold_apply(lambda acc, x: step(t.body, acc, x), init, v)
        if isinstance(t, ConvC):
            if t.adt == "list":
                out = v
                for _ in range(t.repeat):
                    out = conv_list_apply(
                        lambda win: kernel_apply(t.kernel, win),
                        config.conv_radius, out)
                return out
            return conv_graph_apply(
                lambda win: kernel_apply(t.kernel, win), v, t.repeat,
                config.max_degree)
        if isinstance(t, Zeros):
            raise EvalError("zeros is a constant, not a function")
        raise EvalError(f"not a term: {t!r}")

    def apply_module(module, v):
        if isinstance(v, VTensor):
            return VTensor(module.apply(v.t, mode, rng))
        if isinstance(v, VList):
            return VTensor(module.apply(v.items, mode, rng))
        raise EvalError(f"{module.name} cannot consume {type(v).__name__}")

    def step(body: Term, acc: Tensor, x: Tensor) -> Tensor:
        """Apply a curried fold body to (accumulator, element)."""
        if isinstance(body, LibRef):
            return resolve(body.name).apply_pair(acc, x, mode, rng)
        if isinstance(body, Compose):
            mid = apply(body.inner, VTensor(acc))
            return step(body.outer, mid.t, x)
        raise EvalError("fold body must resolve to a curried module")

    def kernel_apply(kernel: Term, window):
        """Apply a conv kernel term to a window (list of [B,*dims] tensors)."""
        if isinstance(kernel, LibRef):
            return resolve(kernel.name).apply(window, mode, rng)
        out = apply(kernel, VList(window))
        if isinstance(out, VTensor):
            return out.t
        raise EvalError("conv kernel must yield a tensor")

    def const_value(t: Term, batch: int) -> Tensor:
        if isinstance(t, Zeros):
            return T.zeros((batch, t.dim))
        raise EvalError("fold seed must be a zeros constant")

    return apply(term, value)


def map_apply(fn, value):
    """Apply fn (Value -> Value) per element; structure preserved."""
    if isinstance(value, VList):
        return VList([fn(VTensor(x)).t for x in value.items])
    if isinstance(value, VGraph):
        return VGraph([fn(VTensor(x)).t for x in value.nodes], value.adj)
    raise EvalError(f"map over {type(value).__name__}")


def fold_apply(step, init: Tensor, value) -> VTensor:
    """Left fold; graphs fold over the node list in index order."""
    if isinstance(value, VList):
        items = value.items
    elif isinstance(value, VGraph):
        items = value.nodes
    else:
        raise EvalError(f"fold over {type(value).__name__}")
    acc = init
    for x in items:
        acc = step(acc, x)
    return VTensor(acc)


def conv_list_apply(kernel, radius: int, value: VList) -> VList:
    """Sliding window of width 2*radius+1 with clamped boundary replication."""
    items = value.items
    k = len(items)
    out = []
    for i in range(k):
        window = [items[min(max(j, 0), k - 1)]
                  for j in range(i - radius, i + radius + 1)]
        out.append(kernel(window))
    return VList(out)


def conv_graph_apply(kernel, value: VGraph, repeat: int,
                     max_degree: int) -> VGraph:
    """Neighborhood convolution applied `repeat` times.

    The window is self-first, then neighbors in ascending node index,
    padded with the node's own value up to max_degree entries.
    """
    nodes, adj = value.nodes, value.adj
    for u, nbrs in enumerate(adj):
        if len(nbrs) > max_degree:
            raise EvalError(
                f"node {u} has degree {len(nbrs)} > max degree {max_degree}")
    for _ in range(repeat):
        new_nodes = []
        for u, nbrs in enumerate(adj):
            window = [nodes[u]] + [nodes[v] for v in sorted(nbrs)]
            window += [nodes[u]] * (max_degree + 1 - len(window))
            new_nodes.append(kernel(window))
        nodes = new_nodes
    return VGraph(nodes, adj)


def zeros_apply(dims, batch=1) -> VTensor:
    if isinstance(dims, int):
        dims = (dims,)
    return VTensor(T.zeros((batch,) + tuple(dims)))
