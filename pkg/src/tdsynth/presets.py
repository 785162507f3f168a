"""Bundled reference configurations: type universes, fresh-template
libraries, and the exact min-plus relaxation kernel used by the grid
shortest-path tasks.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .interp import InterpConfig
from .lang import FunType, ListType, TensorType
from .modules import FixedModule, Hyper, Library, MLPModule, instantiate_for
from .tasks import shortest_path_node_type
from .typecheck import UniverseConfig

IMG = TensorType("real", (8, 8))
FEAT = TensorType("real", (16,))
BOOL1 = TensorType("bool", (1,))
REAL1 = TensorType("real", (1,))


def counting_universe_config() -> UniverseConfig:
    return UniverseConfig(
        shapes=(("real", (8, 8)), ("real", (16,)), ("bool", (1,)),
                ("real", (1,))),
        adts=("list",), f_max=2)


def counting_library(seed=0, hyper=None) -> Library:
    """Fresh templates for the list/counting task family."""
    hyper = hyper or Hyper()
    lib = Library()
    specs = [
        ("new_cnn", FunType(IMG, FEAT)),
        ("new_cls", FunType(FEAT, BOOL1)),
        ("new_reg", FunType(BOOL1, REAL1)),
        ("new_agg_b", FunType(ListType(BOOL1), REAL1)),
        ("new_agg_f", FunType(ListType(FEAT), REAL1)),
    ]
    for i, (name, sig) in enumerate(specs):
        lib.add(instantiate_for(sig, hyper, seed=seed * 100 + i, name=name))
    # curried fold body: accumulator and element concatenated into one MLP
    lib.add(MLPModule("new_fold_b", FunType(REAL1, FunType(BOOL1, REAL1)),
                      hyper, seed * 100 + 50))
    return lib


def graph_universe_config(color=False) -> UniverseConfig:
    node = shortest_path_node_type(color)
    return UniverseConfig(
        shapes=(("real", node.dims), ("real", (2,)), ("real", (1,))),
        adts=("graph",), f_max=2)


GRAPH_STATE = TensorType("real", (2,))


def graph_library(seed=0, hyper=None, color=False) -> Library:
    """Fresh templates for the grid shortest-path family.

    The relaxation-kernel template is an MLP over the concatenated
    neighborhood window (self + up to 4 neighbors)."""
    hyper = hyper or Hyper()
    node = shortest_path_node_type(color)
    lib = Library()
    lib.add(instantiate_for(FunType(node, GRAPH_STATE), hyper,
                            seed=seed * 100 + 1, name="new_reg"))
    lib.add(instantiate_for(FunType(GRAPH_STATE, REAL1), hyper,
                            seed=seed * 100 + 2, name="new_proj"))
    lib.add(MLPModule("new_kernel", FunType(ListType(GRAPH_STATE),
                                            GRAPH_STATE),
                      hyper, seed * 100 + 3, in_elems=5))
    return lib


def minplus_kernel(name="exact_relax"):
    """Exact relaxation d'(u) = min(d(u), min over neighbors of d(v)+w(u)),
    where w(u) is the penalty for entering node u.

    The window is self-first; each entry is a (penalty, distance) pair.
    Self-padding is neutral: min(d, d + w) == d for nonnegative penalties.
    """
    sig = FunType(ListType(GRAPH_STATE), GRAPH_STATE)

    def fn(window):
        self_v = window[0]
        w_u = T.slice_(self_v, (slice(None), slice(0, 1)))
        d_u = T.slice_(self_v, (slice(None), slice(1, 2)))
        best = d_u
        for nb in window[1:]:
            d_v = T.slice_(nb, (slice(None), slice(1, 2)))
            best = T.minimum(best, d_v + w_u)
        return T.concat([w_u, best], axis=1)

    return FixedModule(name, sig, fn)


def graph_interp_config() -> InterpConfig:
    return InterpConfig(conv_radius=1, max_degree=4)
