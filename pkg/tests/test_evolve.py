import numpy as np
import pytest

from tdsynth.evolve import (EvolveConfig, Population, crossover, evolve,
                            fitness, init_population, mutate, select)
from tdsynth.lang import (FunType, ListType, TensorType, print_program,
                          program_size)
from tdsynth.presets import counting_library, counting_universe_config
from tdsynth.tasks import make_count_task, make_recognize_task
from tdsynth.training import TrainConfig, train
from tdsynth.typecheck import check_type, enumerate_universe

IMG = TensorType("real", (8, 8))
R1 = TensorType("real", (1,))
TARGET = FunType(ListType(IMG), R1)


def _setup(max_size=8):
    lib = counting_library(0)
    uni = enumerate_universe(counting_universe_config())
    return lib, uni


def test_population_members_type_check():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 20, 8, seed=0)
    assert len(pop.members) == 20
    for m, fit in pop.members:
        assert fit is None
        assert check_type(m, TARGET)


def test_population_seed_deterministic():
    lib, uni = _setup()
    a = init_population(TARGET, lib, uni, 10, 8, seed=4)
    b = init_population(TARGET, lib, uni, 10, 8, seed=4)
    assert [print_program(x) for x, _ in a.members] == \
        [print_program(x) for x, _ in b.members]


def test_population_size_bound():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 50, 6, seed=1)
    assert all(program_size(m) <= 6 for m, _ in pop.members)


def test_fitness_transform():
    assert fitness(0.0) == 1.0
    assert fitness(9.0) == pytest.approx(0.1)
    assert fitness(1.0) == pytest.approx(0.5)


def test_selection_uniform_when_equal():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 4, 8, seed=2)
    pop = Population([(t, 1.0) for t, _ in pop.members])
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(200):
        chosen = select(pop, rng)
        for m in chosen.members:
            for i, orig in enumerate(pop.members):
                if m is orig:
                    counts[i] += 1
                    break
    total = counts.sum()
    # chi-square sanity: each arm near 25%
    assert np.all(np.abs(counts / total - 0.25) < 0.05)


def test_selection_proportional_to_fitness():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 2, 8, seed=3)
    pop = Population([(pop.members[0][0], 3.0), (pop.members[1][0], 1.0)])
    rng = np.random.default_rng(1)
    first = 0
    n = 4000
    for _ in range(n // 2):
        chosen = select(pop, rng)
        first += sum(1 for m in chosen.members if m is pop.members[0])
    assert abs(first / n - 0.75) < 0.03


def test_crossover_identical_parents():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 2, 8, seed=5)
    a = pop.members[0][0]
    rng = np.random.default_rng(2)
    c1, c2 = crossover(a, a, rng)
    assert print_program(c1) == print_program(a)
    assert print_program(c2) == print_program(a)


def test_crossover_children_type_check_500():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 40, 8, seed=6)
    rng = np.random.default_rng(3)
    for _ in range(500):
        i, j = rng.integers(40), rng.integers(40)
        c1, c2 = crossover(pop.members[i][0], pop.members[j][0], rng)
        assert check_type(c1, TARGET) and check_type(c2, TARGET)


def test_mutation_type_checks_500():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 40, 8, seed=7)
    rng = np.random.default_rng(4)
    for k in range(500):
        m = mutate(pop.members[k % 40][0], rng, 2, lib, uni)
        assert check_type(m, TARGET)


def test_mutation_growth_bound():
    lib, uni = _setup()
    pop = init_population(TARGET, lib, uni, 20, 8, seed=8)
    rng = np.random.default_rng(5)
    for m, _ in pop.members:
        out = mutate(m, rng, 0, lib, uni)
        assert program_size(out) <= program_size(m)


def test_evolve_zero_generations_returns_ranked_initial():
    lib, uni = _setup()
    task = make_recognize_task(0, 150, 1.0, 2)
    seen = []

    def trainer(p, i):
        seen.append(p)
        return train(p, task, lib, TrainConfig(epochs=2, seed=1), index=i)

    ranked = evolve(task, lib, uni,
                    EvolveConfig(population=4, generations=0, seed=1,
                                 max_size=8), trainer)
    assert len(ranked) >= 1
    losses = [r.val_loss for r in ranked]
    assert losses == sorted(losses)


def test_evolve_deterministic():
    lib, uni = _setup()
    task = make_count_task(0, 120, 1.0, 2)

    def trainer(p, i):
        return train(p, task, lib, TrainConfig(epochs=2, seed=2), index=i)

    a = evolve(task, lib, uni, EvolveConfig(population=4, generations=1,
                                            seed=9, max_size=8), trainer)
    b = evolve(task, lib, uni, EvolveConfig(population=4, generations=1,
                                            seed=9, max_size=8), trainer)
    assert [(r.text, r.val_loss) for r in a] == \
        [(r.text, r.val_loss) for r in b]
