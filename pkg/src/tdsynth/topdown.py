"""Best-first, type-directed refinement of partial programs.

The queue holds type-safe partial programs ordered by structural
simplicity (size, counting each hole at its minimum completion size of 1;
FIFO tie-break).  Expansion always targets the leftmost hole, which makes
every complete program reachable by exactly one refinement path.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

from .lang import (Compose, ConvC, FoldC, FunType, GraphType, Hole, LibRef,
                   ListType, MapC, TensorType, Term, Type, Zeros, holes,
                   print_program, program_size, substitute_hole)
from .typecheck import TypeUniverse, compose_intermediates


@dataclass
class SearchConfig:
    max_size: int = 8
    max_candidates: int = 20
    conv_repeats: tuple = (1,)
    tie_break: str = "fifo"
    max_queue: int = 2_000_000


@dataclass(order=False)
class SynthesisSubtask:
    program: Term
    focus: object            # hole id, or None when complete
    cost: int


class SynthesisExhausted(RuntimeError):
    pass


def _cost(term: Term) -> int:
    return program_size(term) + len(holes(term))


def init_queue(target: Type):
    root = Hole(target, 0)
    return [SynthesisSubtask(root, 0, _cost(root))]


def _productions(hole_type: Type, library, universe: TypeUniverse,
                 config: SearchConfig, fresh_ids):
    """All grammar instantiations whose head type equals the hole type.

    Yields replacement terms; nonterminals become typed holes with ids
    drawn from `fresh_ids` (a counter in a list).
    """
    out = []

    def new_hole(t):
        fresh_ids[0] += 1
        return Hole(t, fresh_ids[0])

    for mod in library.modules():
        if mod.signature == hole_type:
            out.append(LibRef(mod.name, mod.signature))
    if isinstance(hole_type, TensorType) and hole_type.atom == "real" \
            and len(hole_type.dims) == 1:
        out.append(Zeros(hole_type.dims[0]))
    if isinstance(hole_type, FunType):
        a, c = hole_type.arg, hole_type.res
        for b in compose_intermediates(universe):
            out.append(Compose(new_hole(FunType(b, c)),
                               new_hole(FunType(a, b))))
        in_adt = _adt(a)
        out_adt = _adt(c)
        if in_adt and out_adt and in_adt[0] == out_adt[0]:
            kind = in_adt[0]
            out.append(MapC(kind, new_hole(FunType(in_adt[1], out_adt[1]))))
            for rep in config.conv_repeats:
                if rep > 1 and in_adt[1] != out_adt[1]:
                    continue
                out.append(ConvC(kind,
                                 new_hole(FunType(ListType(in_adt[1]),
                                                  out_adt[1])), rep))
        if in_adt and isinstance(c, TensorType):
            kind, elem = in_adt
            out.append(FoldC(kind, new_hole(FunType(c, FunType(elem, c))),
                             new_hole(c)))
    return out


def _adt(t: Type):
    if isinstance(t, ListType):
        return ("list", t.elem)
    if isinstance(t, GraphType):
        return ("graph", t.node)
    return None


def expand(subtask: SynthesisSubtask, library, universe, config,
           fresh_ids=None):
    """One child subtask per production filling the focused hole."""
    if fresh_ids is None:
        fresh_ids = [max((h.hid for _, h in holes(subtask.program)),
                         default=0)]
    hole = next(h for _, h in holes(subtask.program)
                if h.hid == subtask.focus)
    out = []
    for repl in _productions(hole.expected, library, universe, config,
                             fresh_ids):
        child = substitute_hole(subtask.program, hole.hid, repl)
        cost = _cost(child)
        if cost > config.max_size:
            continue
        remaining = holes(child)
        if remaining:
            # leftmost hole only: one refinement path per program
            out.append(SynthesisSubtask(child, remaining[0][1].hid, cost))
        else:
            out.append(SynthesisSubtask(child, None, cost))
    return out


def generate(target: Type, library, universe, config: SearchConfig):
    """Yield complete type-safe programs in nondecreasing size order."""
    fresh_ids = [0]
    counter = 0
    heap = []
    for task in init_queue(target):
        heap.append((task.cost, counter, task))
        counter += 1
    heapq.heapify(heap)
    seen = set()
    popped = 0
    while heap:
        popped += 1
        if popped > config.max_queue:
            return
        _, _, task = heapq.heappop(heap)
        if task.focus is None:
            text = print_program(task.program)
            if text not in seen:
                seen.add(text)
                yield task.program
            continue
        for child in expand(task, library, universe, config, fresh_ids):
            heapq.heappush(heap, (child.cost, counter, child))
            counter += 1


def synthesize(task, library, universe, config: SearchConfig, trainer,
               progress=None):
    """Generate-and-tune loop: train complete programs as they are popped,
    stop after max_candidates, return candidates ranked by validation loss.

    `trainer` is a callable (program, index) -> TrainedCandidate.
    """
    from .training import rank
    target = task.signature
    results = []
    for index, program in enumerate(generate(target, library, universe,
                                             config)):
        if index >= config.max_candidates:
            break
        cand = trainer(program, index)
        results.append(cand)
        if progress is not None:
            progress(cand)
    if not results:
        raise SynthesisExhausted(
            "no complete program found: universe or search config too small")
    return rank(results)


# ---------------------------------------------------------------------------
# census of the program space


def census(target: Type, library, universe, size: int, typed: bool,
           config: SearchConfig | None = None) -> int:
    """Number of programs of exactly `size`.

    typed=True counts complete type-safe programs of the target type;
    typed=False counts programs well-formed only by arity (every compose,
    combinator, and conv slot filled; types ignored).  Conv exponents do
    not multiply the count.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if typed:
        return _census_typed(target, library, universe, size)
    return _census_untyped(library, size)


def _census_typed(target, library, universe, size):
    memo = {}
    sigs = {}
    for mod in library.modules():
        sigs[mod.signature] = sigs.get(mod.signature, 0) + 1

    def count(t: Type, s: int) -> int:
        key = (t, s)
        if key in memo:
            return memo[key]
        memo[key] = 0  # cut recursion; sizes strictly decrease below
        total = 0
        if s == 1:
            total += sigs.get(t, 0)
            if isinstance(t, TensorType) and t.atom == "real" \
                    and len(t.dims) == 1:
                total += 1  # zeros
        else:
            if isinstance(t, FunType):
                a, c = t.arg, t.res
                for b in compose_intermediates(universe):
                    for i in range(1, s - 1):
                        total += count(FunType(b, c), i) * \
                            count(FunType(a, b), s - 1 - i)
                in_adt, out_adt = _adt(a), _adt(c)
                if in_adt and out_adt and in_adt[0] == out_adt[0]:
                    total += count(FunType(in_adt[1], out_adt[1]), s - 1)
                    total += count(FunType(ListType(in_adt[1]), out_adt[1]),
                                   s - 1)
                if in_adt and isinstance(c, TensorType):
                    body_t = FunType(c, FunType(in_adt[1], c))
                    for i in range(1, s - 1):
                        total += count(body_t, i) * count(c, s - 1 - i)
        memo[key] = total
        return total

    return count(target, size)


def _census_untyped(library, size):
    leaves = len(library) + 1  # any library name, or zeros
    unary = 4                  # map_l, map_g, conv_l, conv_g
    binary = 2                 # compose, fold_l
    memo = {1: leaves}

    def count(s):
        if s in memo:
            return memo[s]
        total = unary * count(s - 1)
        total += binary * sum(count(i) * count(s - 1 - i)
                              for i in range(1, s - 1))
        memo[s] = total
        return total

    return count(size)


def census_report(target, library, universe, max_size, config=None):
    """Returns (lines, rows); one line per size:
    'size=<s> typed=<n> untyped=<m>'."""
    lines, rows = [], []
    for s in range(1, max_size + 1):
        t = census(target, library, universe, s, True, config)
        u = census(target, library, universe, s, False, config)
        lines.append(f"size={s} typed={t} untyped={u}")
        rows.append({"size": s, "typed": t, "untyped": u})
    return lines, rows
