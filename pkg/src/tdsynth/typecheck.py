"""Type assignment for complete and partial programs, and the finite
type universe the synthesizers draw hole types from.

Composition is checked in application order: compose(f, g) applies g first,
so it is typed a -> c when g: a -> b and f: b -> c.  Holes are axiomatically
assumed to have their annotated type.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .lang import (Compose, ConvC, FoldC, FunType, Hole, LibRef, ListType,
                   MapC, TensorType, Term, Type, Zeros, children, make_adt,
                   type_text)


class TypeInconsistency(TypeError):
    """Raised for terms that cannot be assigned a type."""

    def __init__(self, msg, path=()):
        super().__init__(f"{msg} (at path {list(path)})")
        self.path = path


def infer_type(term: Term, library=None, _path=()) -> Type:
    if isinstance(term, LibRef):
        if library is not None:
            sig = library.signature_of(term.name) if hasattr(
                library, "signature_of") else library.get(term.name)
            if sig is None:
                raise KeyError(f"unknown library name {term.name!r}")
            if sig != term.signature:
                raise TypeInconsistency(
                    f"{term.name} annotated {type_text(term.signature)} but "
                    f"library has {type_text(sig)}", _path)
        return term.signature
    if isinstance(term, Hole):
        return term.expected
    if isinstance(term, Zeros):
        return TensorType("real", (term.dim,))
    if isinstance(term, Compose):
        tf = infer_type(term.outer, library, _path + (0,))
        tg = infer_type(term.inner, library, _path + (1,))
        if not isinstance(tf, FunType) or not isinstance(tg, FunType):
            raise TypeInconsistency("compose of a non-function", _path)
        if tg.res != tf.arg:
            raise TypeInconsistency(
                f"compose mismatch: inner yields {type_text(tg.res)}, outer "
                f"takes {type_text(tf.arg)}", _path)
        return FunType(tg.arg, tf.res)
    if isinstance(term, MapC):
        tb = infer_type(term.body, library, _path + (0,))
        if not isinstance(tb, FunType) or not isinstance(tb.arg, TensorType) \
                or not isinstance(tb.res, TensorType):
            raise TypeInconsistency(
                "map body must map tensor type to tensor type", _path)
        return FunType(make_adt(term.adt, tb.arg), make_adt(term.adt, tb.res))
    if isinstance(term, FoldC):
        tb = infer_type(term.body, library, _path + (0,))
        tz = infer_type(term.init, library, _path + (1,))
        ok = (isinstance(tb, FunType) and isinstance(tb.res, FunType)
              and tb.arg == tb.res.res and isinstance(tb.res.arg, TensorType))
        if not ok:
            raise TypeInconsistency(
                "fold body must have type t' -> (t -> t')", _path)
        if tz != tb.arg:
            raise TypeInconsistency(
                f"fold init has type {type_text(tz)}, body accumulates "
                f"{type_text(tb.arg)}", _path)
        return FunType(make_adt(term.adt, tb.res.arg), tb.arg)
    if isinstance(term, ConvC):
        tk = infer_type(term.kernel, library, _path + (0,))
        ok = (isinstance(tk, FunType) and isinstance(tk.arg, ListType)
              and isinstance(tk.res, TensorType))
        if not ok:
            raise TypeInconsistency(
                "conv kernel must have type list<t> -> t'", _path)
        if term.repeat > 1 and tk.res != tk.arg.elem:
            raise TypeInconsistency(
                "repeated conv needs a state-preserving kernel", _path)
        return FunType(make_adt(term.adt, tk.arg.elem),
                       make_adt(term.adt, tk.res))
    raise TypeError(f"not a term: {term!r}")


def check_type(term: Term, expected: Type, library=None) -> bool:
    try:
        return infer_type(term, library) == expected
    except TypeInconsistency:
        return False


def annotate(term: Term, library=None):
    """Every subterm position with its assigned type: list of (path, Type).

    Paths are root-to-node child-index sequences; exactly one entry per node.
    """
    out = []

    def walk(t, path):
        out.append((path, infer_type(t, library, path)))
        for i, c in enumerate(children(t)):
            walk(c, path + (i,))

    infer_type(term, library)  # reject ill-typed terms before walking
    walk(term, ())
    return out


def enumerate_subterm_slots(term: Term, library=None):
    return annotate(term, library)


# ---------------------------------------------------------------------------
# the finite type universe


@dataclass(frozen=True)
class UniverseConfig:
    shapes: tuple            # tuple of (atom, dims) pairs on the allow-list
    adts: tuple = ("list", "graph")
    f_max: int = 2
    k_max: int = 3
    d_max: int = 64

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("empty tensor shape allow-list")
        for atom, dims in self.shapes:
            if len(dims) > self.k_max:
                raise ValueError(f"tensor rank {len(dims)} exceeds {self.k_max}")
            if any(d > self.d_max for d in dims):
                raise ValueError(f"dimension exceeds {self.d_max} in {dims}")


@dataclass
class TypeUniverse:
    tensors: list = field(default_factory=list)
    data: list = field(default_factory=list)       # tensors + ADTs
    functions: list = field(default_factory=list)  # depth-bounded, right-nested

    def all_types(self):
        return self.data + self.functions

    def __contains__(self, t: Type):
        return t in self.data or t in self.functions

    def __len__(self):
        return len(self.data) + len(self.functions)


def enumerate_universe(config: UniverseConfig) -> TypeUniverse:
    """Deterministic ordered enumeration of the finite type universe.

    Functions are enumerated up to nesting depth f_max, right-nested only
    (d1 -> d2, then d1 -> (d2 -> d3), ...), which covers fold bodies.
    """
    u = TypeUniverse()
    u.tensors = [TensorType(atom, tuple(dims)) for atom, dims in config.shapes]
    u.data = list(u.tensors)
    for kind in config.adts:
        u.data.extend(make_adt(kind, t) for t in u.tensors)
    layer = list(u.data)
    for _ in range(config.f_max):
        layer = [FunType(a, r) for a in u.data for r in layer]
        u.functions.extend(layer)
    return u


def compose_intermediates(universe: TypeUniverse):
    """Data types admissible as the intermediate of a composition."""
    return list(universe.data)
