"""Type universe and program AST of the point-free combinator language.

Types are booleans/reals, tensors over them, list/graph ADTs over tensor
types, and (right-nested) function types.  Programs are compositions of
named library functions with map/fold/conv combinators, zero constants, and
typed holes standing for missing code in partial programs.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

K_MAX_DEFAULT = 3
D_MAX_DEFAULT = 64


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class TensorType:
    atom: str                 # 'bool' | 'real'
    dims: tuple = ()          # () means scalar

    def __post_init__(self):
        if self.atom not in ("bool", "real"):
            raise ValueError(f"bad atom {self.atom!r}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"tensor dims must be >= 1, got {self.dims}")


@dataclass(frozen=True)
class ListType:
    elem: TensorType


@dataclass(frozen=True)
class GraphType:
    node: TensorType


@dataclass(frozen=True)
class FunType:
    arg: "Type"
    res: "Type"


Type = Union[TensorType, ListType, GraphType, FunType]
DataType = Union[TensorType, ListType, GraphType]


def is_data(t: Type) -> bool:
    return isinstance(t, (TensorType, ListType, GraphType))


def adt_of(t: Type):
    """('list'|'graph', element tensor type) for an ADT, else None."""
    if isinstance(t, ListType):
        return ("list", t.elem)
    if isinstance(t, GraphType):
        return ("graph", t.node)
    return None


def make_adt(kind: str, elem: TensorType) -> Type:
    return ListType(elem) if kind == "list" else GraphType(elem)


def type_text(t: Type) -> str:
    if isinstance(t, TensorType):
        return t.atom + "".join(f"[{d}]" for d in t.dims)
    if isinstance(t, ListType):
        return f"list<{type_text(t.elem)}>"
    if isinstance(t, GraphType):
        return f"graph<{type_text(t.node)}>"
    if isinstance(t, FunType):
        if isinstance(t.arg, FunType):
            raise ValueError("cannot render a left-nested function type")
        return f"{type_text(t.arg)} -> {type_text(t.res)}"
    raise TypeError(f"not a type: {t!r}")


# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class LibRef:
    name: str
    signature: Type


@dataclass(frozen=True)
class Compose:
    """compose(outer, inner): apply inner first, i.e. outer(inner(x))."""
    outer: "Term"
    inner: "Term"


@dataclass(frozen=True)
class MapC:
    adt: str                  # 'list' | 'graph'
    body: "Term"


@dataclass(frozen=True)
class FoldC:
    adt: str
    body: "Term"
    init: "Term"


@dataclass(frozen=True)
class ConvC:
    adt: str
    kernel: "Term"
    repeat: int = 1

    def __post_init__(self):
        if self.repeat < 1:
            raise ValueError("conv repeat must be >= 1")


@dataclass(frozen=True)
class Zeros:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("zeros dimension must be >= 1")


@dataclass(frozen=True)
class Hole:
    expected: Type
    hid: int = 0


Term = Union[LibRef, Compose, MapC, FoldC, ConvC, Zeros, Hole]


def children(term: Term):
    if isinstance(term, Compose):
        return (term.outer, term.inner)
    if isinstance(term, MapC):
        return (term.body,)
    if isinstance(term, FoldC):
        return (term.body, term.init)
    if isinstance(term, ConvC):
        return (term.kernel,)
    return ()


def replace_child(term: Term, index: int, new: Term) -> Term:
    if isinstance(term, Compose):
        return Compose(new, term.inner) if index == 0 else Compose(term.outer, new)
    if isinstance(term, MapC):
        return MapC(term.adt, new)
    if isinstance(term, FoldC):
        return FoldC(term.adt, new, term.init) if index == 0 else \
            FoldC(term.adt, term.body, new)
    if isinstance(term, ConvC):
        return ConvC(term.adt, new, term.repeat)
    raise ValueError(f"{type(term).__name__} has no children")


def subterm_at(term: Term, path) -> Term:
    for i in path:
        term = children(term)[i]
    return term


def replace_at(term: Term, path, new: Term) -> Term:
    if not path:
        return new
    i = path[0]
    return replace_child(term, i, replace_at(children(term)[i], path[1:], new))


def holes(term: Term):
    """All (path, Hole) pairs in preorder (leftmost first)."""
    out = []

    def walk(t, path):
        if isinstance(t, Hole):
            out.append((path, t))
        for i, c in enumerate(children(t)):
            walk(c, path + (i,))

    walk(term, ())
    return out


def is_complete(term: Term) -> bool:
    return not holes(term)


def substitute_hole(term: Term, hid: int, new: Term) -> Term:
    for path, h in holes(term):
        if h.hid == hid:
            return replace_at(term, path, new)
    raise KeyError(f"no hole with id {hid}")


def program_size(term: Term) -> int:
    """Occurrences of library functions and combinators.

    Zeros counts 1; holes count 0; conv counts 1 regardless of exponent.
    """
    if isinstance(term, Hole):
        return 0
    return 1 + sum(program_size(c) for c in children(term))


def lib_names(term: Term):
    """Library names referenced anywhere in the term, in preorder."""
    out = []
    if isinstance(term, LibRef):
        out.append(term.name)
    for c in children(term):
        out.extend(lib_names(c))
    return out


# ---------------------------------------------------------------------------
# printing


def print_program(term: Term) -> str:
    if isinstance(term, LibRef):
        return term.name
    if isinstance(term, Compose):
        return f"compose({print_program(term.outer)}, {print_program(term.inner)})"
    if isinstance(term, MapC):
        return f"map_{term.adt[0]}({print_program(term.body)})"
    if isinstance(term, FoldC):
        return f"fold_{term.adt[0]}({print_program(term.body)}, " \
               f"{print_program(term.init)})"
    if isinstance(term, ConvC):
        exp = f"^{term.repeat}" if term.repeat > 1 else ""
        return f"conv_{term.adt[0]}{exp}({print_program(term.kernel)})"
    if isinstance(term, Zeros):
        return f"zeros({term.dim})"
    if isinstance(term, Hole):
        return f"hole<{type_text(term.expected)}>"
    raise TypeError(f"not a term: {term!r}")


# ---------------------------------------------------------------------------
# parsing


class ParseError(ValueError):
    def __init__(self, msg, line, col):
        super().__init__(f"{msg} at line {line}, column {col}")
        self.line, self.col = line, col


class UnknownName(KeyError):
    pass


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<int>\d+)
  | (?P<name>[a-zA-Z_][a-zA-Z0-9_.]*)
  | (?P<punct>[(),<>^\[\]])
""", re.VERBOSE)


def _tokenize(text):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        val = m.group()
        if kind != "ws":
            tokens.append((kind, val, line, col))
        for ch in val:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text, lookup):
        self.toks = _tokenize(text)
        self.i = 0
        self.lookup = lookup
        self.next_hid = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, val=None):
        k, v, line, col = self.toks[self.i]
        if (kind and k != kind) or (val is not None and v != val):
            want = val if val is not None else kind
            raise ParseError(f"expected {want!r}, found {v!r}", line, col)
        self.i += 1
        return v

    def parse_program(self):
        k, v, line, col = self.peek()
        if k == "name":
            if v == "compose":
                self.take()
                self.take(val="(")
                outer = self.parse_program()
                self.take(val=",")
                inner = self.parse_program()
                self.take(val=")")
                return Compose(outer, inner)
            if v in ("map_l", "map_g"):
                self.take()
                self.take(val="(")
                body = self.parse_program()
                self.take(val=")")
                return MapC("list" if v == "map_l" else "graph", body)
            if v in ("fold_l", "fold_g"):
                self.take()
                self.take(val="(")
                body = self.parse_program()
                self.take(val=",")
                init = self.parse_program()
                self.take(val=")")
                return FoldC("list" if v == "fold_l" else "graph", body, init)
            if v in ("conv_l", "conv_g"):
                self.take()
                repeat = 1
                if self.peek()[1] == "^":
                    self.take(val="^")
                    try:
                        repeat = int(self.take("int"))
                    except ValueError:
                        raise ParseError("malformed repeat exponent", line, col)
                    if repeat < 1:
                        raise ParseError("malformed repeat exponent", line, col)
                self.take(val="(")
                kernel = self.parse_program()
                self.take(val=")")
                return ConvC("list" if v == "conv_l" else "graph", kernel, repeat)
            if v == "zeros":
                self.take()
                self.take(val="(")
                dim = int(self.take("int"))
                self.take(val=")")
                return Zeros(dim)
            if v == "hole":
                self.take()
                self.take(val="<")
                t = self.parse_type()
                self.take(val=">")
                h = Hole(t, self.next_hid)
                self.next_hid += 1
                return h
            self.take()
            sig = self.lookup(v)
            if sig is None:
                raise UnknownName(f"unknown library name {v!r} "
                                  f"(line {line}, column {col})")
            return LibRef(v, sig)
        raise ParseError(f"expected a program, found {v!r}", line, col)

    def parse_type(self):
        left = self.parse_type_atom()
        if self.peek()[0] == "arrow":
            self.take("arrow")
            return FunType(left, self.parse_type())
        return left

    def parse_type_atom(self):
        k, v, line, col = self.peek()
        if v == "(":
            self.take(val="(")
            t = self.parse_type()
            self.take(val=")")
            return t
        if k != "name":
            raise ParseError(f"expected a type, found {v!r}", line, col)
        if v in ("bool", "real"):
            self.take()
            dims = []
            while self.peek()[1] == "[":
                self.take(val="[")
                dims.append(int(self.take("int")))
                self.take(val="]")
            return TensorType(v, tuple(dims))
        if v in ("list", "graph"):
            self.take()
            self.take(val="<")
            inner = self.parse_type_atom()
            self.take(val=">")
            if not isinstance(inner, TensorType):
                raise ParseError("ADT payload must be a tensor type", line, col)
            return ListType(inner) if v == "list" else GraphType(inner)
        raise ParseError(f"expected a type, found {v!r}", line, col)


def parse_type(text: str) -> Type:
    p = _Parser(text, lambda name: None)
    t = p.parse_type()
    p.take("eof")
    return t


def parse_program(text: str, library=None) -> Term:
    """Parse program text; `library` resolves names to signatures.

    `library` may be a mapping of name -> Type, an object with
    `signature_of(name)`, or None (in which case any name is an error).
    """
    if library is None:
        lookup = lambda name: None
    elif hasattr(library, "signature_of"):
        lookup = library.signature_of
    else:
        lookup = library.get
    p = _Parser(text, lookup)
    term = p.parse_program()
    p.take("eof")
    return term
