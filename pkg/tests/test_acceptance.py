"""Acceptance gate: ten end-to-end checks with pinned tolerances.

Each test prints one pass/fail line via plain asserts.  The heavier
synthesis checks (counting and graph transfer) run five seeds each and
accept a majority per their pinned thresholds.
"""
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from tdsynth import tensor as T
from tdsynth.evolve import _Sampler
from tdsynth.interp import InterpConfig, VGraph, VList, VTensor, evaluate
from tdsynth.lang import (FunType, LibRef, ListType, TensorType, children,
                          parse_program, replace_child)
from tdsynth.lifelong import SequenceSpec, run_sequence, standalone_baseline
from tdsynth.modules import FixedModule, Library, NeuralModule
from tdsynth.presets import (GRAPH_STATE, counting_library,
                             counting_universe_config, graph_library,
                             graph_universe_config, minplus_kernel)
from tdsynth.tasks import (bellman_ford_oracle, grid_adjacency,
                           make_count_task, make_shortest_path_task,
                           max_distance_constant)
from tdsynth.topdown import SearchConfig, census, synthesize
from tdsynth.training import (TrainConfig, compute_loss, evaluate_metric,
                              instantiate_candidate, select_loss, train)
from tdsynth.typecheck import check_type, enumerate_universe

from test_topdown import _brute_force_terms

R1 = TensorType("real", (1,))
COUNT_TARGET = FunType(ListType(TensorType("real", (8, 8))), R1)


def _counting():
    return counting_library(0), enumerate_universe(counting_universe_config())


def _random_value(t, rng, length=3):
    if isinstance(t, TensorType):
        if t.atom == "bool":
            return VTensor(T.Tensor(rng.integers(0, 2, (2,) + t.dims)
                                    .astype(float)))
        return VTensor(T.Tensor(rng.standard_normal((2,) + t.dims)))
    if isinstance(t, ListType):
        return VList([_random_value(t.elem, rng).t for _ in range(length)])
    raise AssertionError(f"unexpected input type {t}")


# 1 ------------------------------------------------------------------------


def test_1_typing_soundness():
    start = time.monotonic()
    library, universe = _counting()
    sampler = _Sampler(library, universe, 7)
    rng = np.random.default_rng(11)
    targets = [t for t in universe.functions
               if isinstance(t.arg, (TensorType, ListType))
               and not isinstance(t.res, FunType)
               and sampler.feasible(t, 7)]
    assert targets

    # 1000 well-typed programs evaluate with no shape or arity errors
    programs = []
    for i in range(1000):
        target = targets[i % len(targets)]
        term = sampler.sample(target, 7, rng)
        assert check_type(term, target, library)
        value = _random_value(target.arg, rng)
        evaluate(term, value, library)
        programs.append((term, target))

    # 1000 corrupted (arity-valid, type-invalid) programs are rejected
    sigs = [(m.name, m.signature) for m in library.modules()]
    rejected = 0
    for term, target in programs:
        bad = _corrupt(term, target, sigs, library, rng)
        assert not check_type(bad, target, library)
        rejected += 1
    assert rejected == 1000
    assert time.monotonic() - start <= 120


def _refs(term, path=()):
    out = [(path, term)] if isinstance(term, LibRef) else []
    for i, c in enumerate(children(term)):
        out.extend(_refs(c, path + (i,)))
    return out


def _replace_at(term, path, new):
    if not path:
        return new
    i = path[0]
    kids = children(term)
    return replace_child(term, i, _replace_at(kids[i], path[1:], new))


def _corrupt(term, target, sigs, library, rng):
    """Swap one library leaf for one of a different signature; keep trying
    until the program genuinely fails to type-check."""
    for _ in range(50):
        refs = _refs(term)
        path, leaf = refs[rng.integers(len(refs))]
        others = [(n, s) for n, s in sigs if s != leaf.signature]
        name, sig = others[rng.integers(len(others))]
        bad = _replace_at(term, path, LibRef(name, sig))
        if not check_type(bad, target, library):
            return bad
    raise AssertionError("could not build a type-invalid variant")


# 2 ------------------------------------------------------------------------


def test_2_census_pruning_and_exactness():
    start = time.monotonic()
    library, universe = _counting()
    sigs = [(m.name, m.signature) for m in library.modules()]
    typed = {s: census(COUNT_TARGET, library, universe, s, typed=True)
             for s in range(1, 7)}
    untyped = {s: census(COUNT_TARGET, library, universe, s, typed=False)
               for s in range(1, 7)}
    assert untyped[5] > 0 and untyped[6] > 0
    assert typed[5] / untyped[5] <= 0.01
    assert typed[6] / untyped[6] <= 0.001
    for s in range(1, 7):
        brute = len(_brute_force_terms(COUNT_TARGET, sigs, universe, s))
        assert typed[s] == brute, f"size {s}: census {typed[s]} != {brute}"
    assert time.monotonic() - start <= 300


# 3 ------------------------------------------------------------------------


def _fixed(name, a, b, fn):
    return FixedModule(name, FunType(a, b), fn)


class _PairModule(NeuralModule):
    kind = "PAIR"

    def __init__(self, name, signature, fn):
        super().__init__(name, signature)
        self.fn = fn
        self.store.freeze()

    def apply_pair(self, acc, x, mode="eval", rng=None):
        return self.fn(acc, x)


def _rand_graph(rng, n):
    adj = []
    for u in range(n):
        others = [v for v in range(n) if v != u]
        deg = int(rng.integers(0, min(4, len(others)) + 1))
        adj.append(sorted(rng.choice(others, size=deg, replace=False)
                          .tolist()) if deg else [])
    return adj


def test_3_combinator_semantics_vs_oracles():
    rng = np.random.default_rng(23)
    f = lambda a: np.tanh(a) + 0.5

    lib = Library()
    lib.add(_fixed("f", R1, R1, lambda x: T.tanh(x) + 0.5))
    lib.add(_PairModule("g", FunType(R1, FunType(R1, R1)),
                        lambda acc, x: acc + x * x))
    kern = FixedModule("k", FunType(ListType(R1), R1),
                       lambda w: sum(w[1:], w[0] * 0.5))
    lib.add(kern)

    map_l = parse_program("map_l(f)", lib)
    map_g = parse_program("map_g(f)", lib)
    fold_l = parse_program("fold_l(g, zeros(1))", lib)
    conv_l = parse_program("conv_l(k)", lib)
    conv_g = parse_program("conv_g(k)", lib)
    config = InterpConfig(max_degree=4)

    def col(v):
        return T.Tensor(np.array([[v]]))

    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        xs = rng.standard_normal(n)

        got = evaluate(map_l, VList([col(v) for v in xs]), lib)
        ref = np.array([f(v) for v in xs])
        worst = max(worst, np.max(np.abs(
            np.array([t.data[0, 0] for t in got.items]) - ref)))

        got = evaluate(fold_l, VList([col(v) for v in xs]), lib)
        acc = 0.0
        for v in xs:
            acc = acc + v * v
        worst = max(worst, abs(got.t.data[0, 0] - acc))

        got = evaluate(conv_l, VList([col(v) for v in xs]), lib,
                       config=config)
        for i in range(n):
            lo, hi = max(i - 1, 0), min(i + 1, n - 1)
            ref = 0.5 * xs[lo] + xs[i] + xs[hi]   # natural window order
            worst = max(worst, abs(got.items[i].data[0, 0] - ref))

        adj = _rand_graph(rng, n)
        nodes = VGraph([col(v) for v in xs], adj)

        got = evaluate(map_g, nodes, lib, config=config)
        ref = np.array([f(v) for v in xs])
        worst = max(worst, np.max(np.abs(
            np.array([t.data[0, 0] for t in got.nodes]) - ref)))

        got = evaluate(conv_g, nodes, lib, config=config)
        for u in range(n):
            window = [xs[u]] + [xs[v] for v in sorted(adj[u])]
            window += [xs[u]] * (5 - len(window))   # self padding
            ref = 0.5 * window[0] + sum(window[1:])
            worst = max(worst, abs(got.nodes[u].data[0, 0] - ref))
    assert worst <= 1e-6


# 4 ------------------------------------------------------------------------


def test_4_bellman_ford_embedding_50_grids():
    rng = np.random.default_rng(29)
    lib = Library()
    k = minplus_kernel()
    lib.add(k)
    config = InterpConfig(max_degree=4)
    for trial in range(50):
        side = int(rng.integers(3, 6))
        n = side * side
        adj = grid_adjacency(side)
        M = max_distance_constant(side)
        prog = parse_program(f"conv_g^{n}({k.name})", lib)
        w = rng.uniform(0.05, 0.5, n)
        d0 = np.full(n, M)
        d0[0] = 0.0
        nodes = [T.Tensor(np.array([[w[u], d0[u]]])) for u in range(n)]
        out = evaluate(prog, VGraph(nodes, adj), lib, config=config)
        got = np.array([x.data[0, 1] for x in out.nodes])
        ref = bellman_ford_oracle(w, adj, 0, M)
        assert np.max(np.abs(got - ref)) <= 1e-6


# 5 ------------------------------------------------------------------------


def _loss_of(program, bindings, value, y, kind, config):
    for mod in bindings.values():
        for t in mod.store.tensors():
            t.grad = None
    out = evaluate(program, value, bindings, "eval", None, config)
    return compute_loss(out, y, kind)


def _gradcheck_program(program, bindings, value, y, kind, rng,
                       config=None, probes=4):
    config = config or InterpConfig()
    loss = _loss_of(program, bindings, value, y, kind, config)
    loss.backward()
    grads = {(n, p): (mod.store[p].grad.copy()
                      if mod.store[p].grad is not None
                      else np.zeros_like(mod.store[p].data))
             for n, mod in bindings.items() for p in mod.store.names()}
    worst = 0.0
    for name, mod in bindings.items():
        for pname in mod.store.names():
            t = mod.store[pname]
            flat = t.data.reshape(-1)
            k = min(probes, flat.size)
            for idx in rng.choice(flat.size, size=k, replace=False):
                eps = 1e-5 * max(1.0, abs(flat[idx]))
                orig = flat[idx]
                flat[idx] = orig + eps
                up = _loss_of(program, bindings, value, y, kind,
                              config).data.item()
                flat[idx] = orig - eps
                dn = _loss_of(program, bindings, value, y, kind,
                              config).data.item()
                flat[idx] = orig
                num = (up - dn) / (2 * eps)
                ana = grads[(name, pname)].reshape(-1)[idx]
                denom = max(abs(num), abs(ana), 1e-8)
                if abs(num - ana) > 1e-10:   # skip exactly-dead entries
                    worst = max(worst, abs(num - ana) / denom)
    return worst


def test_5_gradient_correctness_templates_and_programs():
    start = time.monotonic()
    rng = np.random.default_rng(31)
    worst = 0.0

    # every bundled module template, via a minimal program that uses it.
    # Inputs are off-lattice continuous values (even for bool-typed
    # tensors) so no relu preactivation sits exactly on its kink, where
    # finite differences are undefined.
    def smooth_value(t, rng, length=3):
        if isinstance(t, TensorType):
            return VTensor(T.Tensor(rng.uniform(0.1, 0.9, (2,) + t.dims)))
        return VList([smooth_value(t.elem, rng).t for _ in range(length)])

    library, universe = _counting()
    glib = graph_library(0)
    for lib in (library, glib):
        for mod in list(lib.modules()):
            sig = mod.signature
            config = InterpConfig()
            if isinstance(sig.res, FunType):        # curried fold body
                program = parse_program(f"fold_l({mod.name}, zeros(1))", lib)
                value = smooth_value(ListType(sig.res.arg), rng)
                out_t = sig.res.res
                y = _target_for(out_t, 2, rng, select_loss(out_t))
            elif lib is glib and isinstance(sig.arg, ListType):
                # relaxation-kernel template, exercised through conv_g
                program = parse_program(f"conv_g({mod.name})", lib)
                elem = sig.arg.elem
                value = VGraph(
                    [T.Tensor(rng.standard_normal((2,) + elem.dims))
                     for _ in range(4)], grid_adjacency(2))
                out_t = sig.res
                y = rng.standard_normal((2, 4) + out_t.dims)
                config = InterpConfig(max_degree=4)
            else:
                program = LibRef(mod.name, sig)
                value = smooth_value(sig.arg, rng)
                out_t = sig.res
                y = _target_for(out_t, 2, rng, select_loss(out_t))
            bound, bindings = instantiate_candidate(program, lib, seed=17)
            worst = max(worst, _gradcheck_program(
                bound, bindings, value, y, select_loss(out_t), rng, config))

    # five random complete synthesized programs
    sampler = _Sampler(library, universe, 7)
    srng = np.random.default_rng(37)
    done = 0
    while done < 5:
        term = sampler.sample(COUNT_TARGET, 7, srng)
        bound, bindings = instantiate_candidate(term, library,
                                                seed=100 + done)
        if not bindings:
            continue
        value = smooth_value(COUNT_TARGET.arg, srng)
        y = srng.standard_normal((2, 1))
        worst = max(worst, _gradcheck_program(
            bound, bindings, value, y, "mse", rng))
        done += 1

    assert worst <= 1e-3, f"max relative gradient error {worst}"
    assert time.monotonic() - start <= 180


def _target_for(out_t, batch, rng, kind):
    if kind == "bce":
        return rng.integers(0, 2, (batch,) + out_t.dims).astype(float)
    if kind == "ce":
        y = np.zeros((batch,) + out_t.dims)
        for b in range(batch):
            y[b, rng.integers(out_t.dims[0])] = 1.0
        return y
    return rng.standard_normal((batch,) + out_t.dims)


# 6 ------------------------------------------------------------------------

SEEDS = (1, 2, 3, 4, 5)


@pytest.fixture(scope="module")
def cs_sequences():
    """One two-task counting sequence per seed: full-data count on one
    glyph class, then a new class at 10% data.  Shared by the synthesis,
    transfer, and no-forgetting checks."""
    runs = {}
    for seed in SEEDS:
        spec = SequenceSpec(
            f"cs{seed}", "counting",
            [{"task": "count", "class": 3, "n": 600},
             {"task": "count", "class": 7, "n": 600, "fraction": 0.1}],
            seed=seed)
        kept = []
        report = run_sequence(
            spec, search_config=SearchConfig(max_size=8, max_candidates=20),
            train_config=TrainConfig(epochs=60), keep_results=kept)
        runs[seed] = (spec, report, kept)
    return runs


def test_6_count_synthesis_rmse(cs_sequences):
    wins = 0
    for seed in SEEDS:
        _, report, _ = cs_sequences[seed]
        first = report.tasks[0]
        assert not first.no_solution
        assert first.wall_time <= 900   # each synthesis run within 15 min
        if first.best_metrics["test"] <= 0.5:
            wins += 1
    assert wins >= 4, f"test RMSE <= 0.5 on only {wins}/5 seeds"


def test_7_high_level_transfer_beats_baseline(cs_sequences):
    wins = 0
    reuse_ok = 0
    for seed in SEEDS:
        spec, report, _ = cs_sequences[seed]
        second = report.tasks[1]
        assert not second.no_solution
        task = make_count_task(7, 600, 0.1, spec.seed * 1000 + 2)
        base = standalone_baseline(
            task, TrainConfig(epochs=60, seed=spec.seed * 100 + 2))
        if second.best_metrics["test"] < base.metrics["test"]:
            wins += 1
        if any(n.startswith("lib.") for n in second.reused):
            reuse_ok += 1
    assert wins >= 4, f"transfer beat the baseline on only {wins}/5 seeds"
    assert reuse_ok >= 4, f"frozen lib.* reuse on only {reuse_ok}/5 seeds"


# 8 ------------------------------------------------------------------------

KERNEL_SIG = FunType(ListType(GRAPH_STATE), GRAPH_STATE)


def _synthesize_graph(task, lib, seed):
    universe = enumerate_universe(graph_universe_config(color=True))
    counter = [0]

    def namer():
        counter[0] += 1
        return f"g{seed}_{counter[0]}"

    config = TrainConfig(epochs=5, seed=seed)
    return synthesize(
        task, lib, universe,
        SearchConfig(max_size=8, max_candidates=12, conv_repeats=(1, 10)),
        lambda p, i: train(p, task, lib, config, namer, i))


def test_8_relaxation_kernel_transfer():
    wins = 0
    for seed in SEEDS:
        task1 = make_shortest_path_task(100, 1000 + seed)
        lib1 = graph_library(seed)
        pipeline = parse_program(
            "compose(map_g(new_proj), "
            "compose(conv_g^10(new_kernel), map_g(new_reg)))", lib1)
        trained = train(pipeline, task1, lib1,
                        TrainConfig(epochs=5, seed=seed))
        kernel = next(m for m in trained.bindings.values()
                      if m.signature == KERNEL_SIG)
        kernel.freeze()
        kernel.name = f"lib.relax_{seed}"

        task2 = make_shortest_path_task(100, 2000 + seed, color=True)
        lib_t = graph_library(seed, color=True)
        lib_t.add(kernel)
        ranked = _synthesize_graph(task2, lib_t, seed * 100 + 2)
        # best candidate that actually reuses the frozen kernel
        reusing = [c for c in ranked if kernel.name in c.text]
        assert reusing, "no candidate reused the frozen relaxation kernel"
        transfer = reusing[0]
        scratch = _synthesize_graph(task2, graph_library(seed, color=True),
                                    seed * 100 + 2)[0]
        if transfer.metrics["test"] <= 1.5 * scratch.metrics["test"]:
            wins += 1
    assert wins >= 3, f"transfer within 1.5x from-scratch on {wins}/5 seeds"


# 9 ------------------------------------------------------------------------


def test_9_no_catastrophic_forgetting(cs_sequences):
    for seed in SEEDS:
        _, _, kept = cs_sequences[seed]
        assert kept
        for task, best in kept:
            again = evaluate_metric(best.program, best.bindings, task,
                                    "test")
            assert again == best.metrics["test"]   # bit-exact


# 10 -----------------------------------------------------------------------


def _cli(args):
    return subprocess.run([sys.executable, "-m", "tdsynth.cli"] + args,
                          capture_output=True, text=True, check=True)


def test_10_cli_determinism_and_parallel_equivalence(tmp_path):
    base = ["--seed", "7", "synth", "recognize", "--cls", "2", "--n", "60",
            "--epochs", "2", "--budget", "2"]
    outs = []
    for tag, jobs in (("a", "1"), ("b", "4"), ("c", "1")):
        path = tmp_path / f"{tag}.json"
        _cli(base + ["--jobs", jobs, "--out", str(path)])
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    json.loads(outs[0])

    c1 = tmp_path / "c1.json"
    c2 = tmp_path / "c2.json"
    _cli(["census", "--max-size", "4", "--out", str(c1)])
    _cli(["census", "--max-size", "4", "--out", str(c2)])
    assert c1.read_bytes() == c2.read_bytes()
    json.loads(c1.read_bytes())
