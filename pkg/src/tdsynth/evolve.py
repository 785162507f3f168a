"""Evolutionary program search: a population of type-safe programs under
random proportional selection, same-type subterm crossover, and same-type
subterm mutation.  Every member type-checks at the target type at all
times, by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lang import (Compose, ConvC, FoldC, FunType, ListType, MapC, LibRef,
                   TensorType, Term, Type, Zeros, print_program, program_size,
                   replace_at, subterm_at)
from .topdown import _adt, _census_typed
from .typecheck import annotate, compose_intermediates


@dataclass
class EvolveConfig:
    population: int = 20
    generations: int = 5
    p_crossover: float = 0.5
    p_mutation: float = 0.3
    max_growth: int = 2
    max_size: int = 8
    conv_repeats: tuple = (1,)
    seed: int = 0
    loss_target: float | None = None


class NoSolution(RuntimeError):
    """The generation budget produced no trainable candidate."""


@dataclass
class Population:
    members: list                    # (Term, fitness or None)
    generation: int = 0


class _Sampler:
    """Typed top-down random derivation, uniform over admissible
    productions, with budget feasibility from the typed program counts."""

    def __init__(self, library, universe, max_size, conv_repeats=(1,)):
        self.library = library
        self.universe = universe
        self.max_size = max_size
        self.conv_repeats = conv_repeats
        self.counts = {}

    def _count(self, t, s):
        key = (t, s)
        if key not in self.counts:
            self.counts[key] = _census_typed(t, self.library, self.universe, s)
        return self.counts[key]

    def feasible(self, t, budget):
        return any(self._count(t, s) > 0 for s in range(1, budget + 1))

    def sample(self, t: Type, budget: int, rng) -> Term:
        options = []
        for mod in self.library.modules():
            if mod.signature == t:
                options.append(("lib", mod))
        if isinstance(t, TensorType) and t.atom == "real" and len(t.dims) == 1:
            options.append(("zeros", None))
        if isinstance(t, FunType) and budget >= 2:
            a, c = t.arg, t.res
            if budget >= 3:
                for b in compose_intermediates(self.universe):
                    if any(self.feasible(FunType(b, c), i)
                           and self.feasible(FunType(a, b), budget - 1 - i)
                           for i in range(1, budget - 1)):
                        options.append(("compose", b))
            in_adt, out_adt = _adt(a), _adt(c)
            if in_adt and out_adt and in_adt[0] == out_adt[0]:
                body_t = FunType(in_adt[1], out_adt[1])
                if self.feasible(body_t, budget - 1):
                    options.append(("map", (in_adt[0], body_t)))
                kern_t = FunType(ListType(in_adt[1]), out_adt[1])
                if self.feasible(kern_t, budget - 1):
                    for rep in self.conv_repeats:
                        if rep > 1 and in_adt[1] != out_adt[1]:
                            continue
                        options.append(("conv", (in_adt[0], kern_t, rep)))
            if in_adt and isinstance(c, TensorType) and budget >= 3:
                body_t = FunType(c, FunType(in_adt[1], c))
                if any(self.feasible(body_t, i) and self.feasible(c, budget - 1 - i)
                       for i in range(1, budget - 1)):
                    options.append(("fold", (in_adt[0], body_t, c)))
        if not options:
            raise NoSolution(f"no program of the requested type fits "
                             f"in size {budget}")
        tag, arg = options[rng.integers(len(options))]
        if tag == "lib":
            return LibRef(arg.name, arg.signature)
        if tag == "zeros":
            return Zeros(t.dims[0])
        if tag == "compose":
            b, c, a = arg, t.res, t.arg
            splits = [i for i in range(1, budget - 1)
                      if self.feasible(FunType(b, c), i)
                      and self.feasible(FunType(a, b), budget - 1 - i)]
            i = splits[rng.integers(len(splits))]
            return Compose(self.sample(FunType(b, c), i, rng),
                           self.sample(FunType(a, b), budget - 1 - i, rng))
        if tag == "map":
            kind, body_t = arg
            return MapC(kind, self.sample(body_t, budget - 1, rng))
        if tag == "conv":
            kind, kern_t, rep = arg
            return ConvC(kind, self.sample(kern_t, budget - 1, rng), rep)
        kind, body_t, c = arg
        splits = [i for i in range(1, budget - 1)
                  if self.feasible(body_t, i) and self.feasible(c, budget - 1 - i)]
        i = splits[rng.integers(len(splits))]
        return FoldC(kind, self.sample(body_t, i, rng),
                     self.sample(c, budget - 1 - i, rng))


def init_population(target: Type, library, universe, n, max_size, seed,
                    conv_repeats=(1,)) -> Population:
    if n < 2:
        raise ValueError("population size must be >= 2")
    sampler = _Sampler(library, universe, max_size, conv_repeats)
    rng = np.random.default_rng([seed, 11])
    if not sampler.feasible(target, max_size):
        raise NoSolution("universe too small to seed a population")
    members = [(sampler.sample(target, max_size, rng), None)
               for _ in range(n)]
    return Population(members)


def fitness(val_loss: float) -> float:
    return 1.0 / (1.0 + val_loss)


def select(population: Population, rng) -> Population:
    """Sample survivors with replacement, probability proportional to
    fitness; population size preserved."""
    for term, fit in population.members:
        if fit is None:
            raise ValueError(f"unevaluated member {print_program(term)}")
    fits = np.array([f for _, f in population.members])
    probs = fits / fits.sum()
    picks = rng.choice(len(fits), size=len(fits), p=probs)
    return Population([population.members[i] for i in picks],
                      population.generation)


def crossover(a: Term, b: Term, rng, library=None):
    """Swap a uniformly chosen pair of same-typed subterms.

    Returns the parents unchanged when no equal-typed slot pair exists.
    """
    slots_a = annotate(a, library)
    slots_b = annotate(b, library)
    pairs = [(pa, pb) for pa, ta in slots_a for pb, tb in slots_b if ta == tb]
    if not pairs:
        return a, b
    pa, pb = pairs[rng.integers(len(pairs))]
    sub_a, sub_b = subterm_at(a, pa), subterm_at(b, pb)
    return replace_at(a, pa, sub_b), replace_at(b, pb, sub_a)


def mutate(a: Term, rng, max_growth, library, universe,
           conv_repeats=(1,)) -> Term:
    """Replace a uniformly chosen subterm with a fresh one of the same
    type (size bounded by the old subterm's size + max_growth)."""
    slots = annotate(a, library)
    path, t = slots[rng.integers(len(slots))]
    budget = program_size(subterm_at(a, path)) + max_growth
    sampler = _Sampler(library, universe, budget, conv_repeats)
    try:
        fresh = sampler.sample(t, budget, rng)
    except NoSolution:
        return a
    return replace_at(a, path, fresh)


def evolve(task, library, universe, config: EvolveConfig, trainer,
           progress=None):
    """Appendix-style loop: tune -> select -> crossover -> mutate.

    Returns every evaluated candidate, ranked by validation loss.
    Raises NoSolution when nothing trainable was ever produced.
    """
    from .training import rank
    target = task.signature
    rng = np.random.default_rng([config.seed, 19])
    pop = init_population(target, library, universe, config.population,
                          config.max_size, config.seed, config.conv_repeats)
    all_results = []
    index = 0
    cache = {}

    def tune_all(p: Population):
        nonlocal index
        members = []
        for term, _ in p.members:
            text = print_program(term)
            if text in cache:
                cand = cache[text]
            else:
                cand = trainer(term, index)
                index += 1
                cache[text] = cand
                all_results.append(cand)
                if progress is not None:
                    progress(cand)
            members.append((term, fitness(cand.val_loss)))
        return Population(members, p.generation)

    pop = tune_all(pop)
    for gen in range(config.generations):
        best = max(f for _, f in pop.members)
        if config.loss_target is not None and \
                best >= fitness(config.loss_target):
            break
        pop = select(pop, rng)
        members = list(pop.members)
        for i in range(0, len(members) - 1, 2):
            if rng.random() < config.p_crossover:
                ta, tb = crossover(members[i][0], members[i + 1][0], rng,
                                   library)
                if program_size(ta) <= config.max_size and \
                        program_size(tb) <= config.max_size:
                    members[i] = (ta, None)
                    members[i + 1] = (tb, None)
        for i in range(len(members)):
            if rng.random() < config.p_mutation:
                t = mutate(members[i][0], rng, config.max_growth, library,
                           universe, config.conv_repeats)
                if program_size(t) <= config.max_size:
                    members[i] = (t, None)
        pop = tune_all(Population(members, gen + 1))
    finite = [c for c in all_results if np.isfinite(c.val_loss)]
    if not finite:
        raise NoSolution("no trainable candidate within the generation budget")
    return rank(all_results)
