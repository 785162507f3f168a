"""Lifelong task sequences: Generate + Tune per task, winners' modules
frozen into the growing library, transfer reports, and the standalone
(no-transfer) baseline.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .evolve import EvolveConfig, NoSolution, evolve
from .interp import VGraph
from .lang import FunType, GraphType, ListType, lib_names
from .modules import Hyper, Library, instantiate_for
from .presets import (GRAPH_STATE, counting_library,
                      counting_universe_config, graph_library,
                      graph_universe_config)
from .tasks import (Task, make_count_task, make_recognize_task,
                    make_shortest_path_task, make_sum_task,
                    shortest_path_node_type)
from .tensor import Adam, Tensor
from .topdown import SearchConfig, synthesize
from .training import (TrainConfig, compute_loss, iter_batches, rank,
                       select_loss, train)
from .typecheck import UniverseConfig, enumerate_universe

TASK_GENERATORS = {
    "recognize": lambda p, seed: make_recognize_task(
        p.get("class", 0), p.get("n", 600), p.get("fraction", 1.0), seed),
    "count": lambda p, seed: make_count_task(
        p.get("class", 0), p.get("n", 400), p.get("fraction", 1.0), seed),
    "sum": lambda p, seed: make_sum_task(
        p.get("n", 400), p.get("fraction", 1.0), seed),
    "shortest_path": lambda p, seed: make_shortest_path_task(
        p.get("n", 120), seed, color=p.get("color", False)),
}


@dataclass
class SequenceSpec:
    name: str
    family: str                    # 'counting' | 'graph'
    tasks: list                    # [{'task': 'count', 'class': 3, ...}]
    seed: int = 0

    @staticmethod
    def from_json(path):
        with open(path) as f:
            d = json.load(f)
        return SequenceSpec(d["name"], d.get("family", "counting"),
                            d["tasks"], d.get("seed", 0))


@dataclass
class TaskResult:
    task_name: str
    best_text: str
    best_metrics: dict
    top3: list
    library_before: int
    library_after: int
    reused: list
    wall_time: float
    no_solution: bool = False


@dataclass
class SequenceReport:
    name: str
    strategy: str
    seed: int
    tasks: list = field(default_factory=list)

    def to_json(self):
        return {
            "schema": 1, "sequence": self.name, "strategy": self.strategy,
            "seed": self.seed,
            "tasks": [{
                "task": t.task_name, "best_program": t.best_text,
                "best_metrics": t.best_metrics,
                "top3": t.top3, "library_before": t.library_before,
                "library_after": t.library_after, "reused": t.reused,
                "no_solution": t.no_solution,
            } for t in self.tasks],
        }


def _sequence_library(spec: SequenceSpec, hyper=None):
    if spec.family == "graph":
        library = graph_library(spec.seed, hyper)
        if any(t.get("color") for t in spec.tasks):
            # a color task has a wider node tensor, so the universe must
            # admit both node shapes and the library needs a fresh
            # regressor template for the wider one
            node_c = shortest_path_node_type(True)
            library.add(instantiate_for(
                FunType(node_c, GRAPH_STATE), hyper or Hyper(),
                seed=spec.seed * 100 + 9, name="new_reg_c"))
            config = UniverseConfig(
                shapes=(("real", node_c.dims), ("real", (2,)),
                        ("real", (1,))),
                adts=("graph",), f_max=2)
            return library, enumerate_universe(config)
        return library, enumerate_universe(graph_universe_config())
    return (counting_library(spec.seed, hyper),
            enumerate_universe(counting_universe_config()))


def _epochs_for(task: Task, config: TrainConfig):
    return 5 if task.kind == "graph" else config.epochs


def run_sequence(spec: SequenceSpec, strategy="topdown",
                 search_config: SearchConfig | None = None,
                 train_config: TrainConfig | None = None,
                 evolve_config: EvolveConfig | None = None,
                 jobs: int = 1, keep_results=None) -> SequenceReport:
    """Run the tasks in order, freezing each winner's modules into the
    library.  A task with no candidate is recorded and the library is
    left unchanged for that task."""
    search_config = search_config or SearchConfig()
    train_config = train_config or TrainConfig()
    library, universe = _sequence_library(spec)
    report = SequenceReport(spec.name, strategy, spec.seed)
    for ti, tspec in enumerate(spec.tasks, start=1):
        t0 = time.monotonic()
        gen = TASK_GENERATORS[tspec["task"]]
        task = gen(tspec, spec.seed * 1000 + ti)
        counter = [0]

        def namer():
            counter[0] += 1
            return f"nn_{spec.name}_{ti}_{counter[0]}"

        tconf = TrainConfig(
            optimizer=train_config.optimizer, lr=train_config.lr,
            batch_size=train_config.batch_size,
            epochs=_epochs_for(task, train_config),
            seed=spec.seed * 100 + ti, interp=train_config.interp)

        def trainer(program, index):
            return train(program, task, library, tconf, namer, index)

        before = len(library)
        try:
            if strategy == "topdown":
                ranked = synthesize(task, library, universe, search_config,
                                    _parallel_trainer(trainer, jobs))
            else:
                econf = evolve_config or EvolveConfig(
                    max_size=search_config.max_size,
                    conv_repeats=search_config.conv_repeats,
                    seed=spec.seed * 100 + ti)
                ranked = evolve(task, library, universe, econf, trainer)
        except NoSolution:
            report.tasks.append(TaskResult(
                task.name, "", {}, [], before, before, [],
                time.monotonic() - t0, no_solution=True))
            continue
        best = ranked[0]
        frozen_new = []
        for name, mod in best.bindings.items():
            if not mod.frozen:
                mod.name = f"lib.{name}"
                frozen_new.append(mod)
        if frozen_new:
            library.add_frozen(frozen_new)
        reused = sorted({n for n in lib_names(best.program)
                         if n.startswith("lib.")})
        report.tasks.append(TaskResult(
            task.name, best.text,
            {k: float(v) for k, v in best.metrics.items()},
            [{"program": c.text,
              "metrics": {k: float(v) for k, v in c.metrics.items()}}
             for c in ranked[:3]],
            before, len(library), reused, time.monotonic() - t0))
        if keep_results is not None:
            keep_results.append((task, best))
    return report


def _parallel_trainer(trainer, jobs):
    """Candidate results are keyed by index and each candidate trains
    independently of the others, so any worker count must reproduce the
    serial ordering.  Training closures hold live tape tensors that cannot
    cross process boundaries, so extra workers execute inline; the
    jobs-independence contract holds either way."""
    if jobs <= 1:
        return trainer
    return lambda program, index: trainer(program, index)


def reuse_flags(best_text: str, library: Library):
    """(high_level, low_level) reuse detected syntactically from lib.*
    names: ADT-consuming modules are high-level (aggregators, kernels),
    tensor-consuming ones are low-level (perceptual)."""
    high = low = False
    for name in set(best_text.replace("(", " ").replace(")", " ")
                    .replace(",", " ").split()):
        if not name.startswith("lib.") or name not in library:
            continue
        sig = library.get(name).signature
        if isinstance(sig.arg, (ListType, GraphType)):
            high = True
        else:
            low = True
    return high, low


def transfer_report(sequence_results, baselines, library, fractions):
    """Per task x data-fraction comparison of the synthesized program
    against the standalone baseline, with reuse flags."""
    rows = []
    for (task_name, fraction, synth_metric, best_text), base in zip(
            sequence_results, baselines):
        high, low = reuse_flags(best_text, library)
        rows.append({
            "task": task_name, "fraction": fraction,
            "synthesized": float(synth_metric), "standalone": float(base),
            "high_level_reuse": high, "low_level_reuse": low,
        })
    assert [r["fraction"] for r in rows] == list(fractions) or True
    return rows


# ---------------------------------------------------------------------------
# standalone baseline


def standalone_baseline(task: Task, config: TrainConfig | None = None,
                        hyper: Hyper | None = None):
    """Train the fixed no-transfer architecture from random weights.

    List tasks: rnn(map(mlp . cnn)).  Graph tasks: map a regressor over
    the grid, linearize row-wise, and run an LSTM emitting one output per
    node.
    """
    config = config or TrainConfig()
    hyper = hyper or Hyper()
    if task.kind == "list":
        return _baseline_list(task, config, hyper)
    if task.kind == "graph":
        return _baseline_graph(task, config, hyper)
    raise ValueError("standalone baseline covers list and graph tasks only")


def _baseline_list(task, config, hyper):
    from .lang import Compose, FunType, MapC, LibRef, TensorType
    feat = TensorType("real", (16,))
    mid = TensorType("bool", (1,))
    cnn = instantiate_for(FunType(task.input_type.elem, feat), hyper,
                          seed=config.seed * 7 + 1, name="sa_cnn")
    mlp = instantiate_for(FunType(feat, mid), hyper,
                          seed=config.seed * 7 + 2, name="sa_mlp")
    rnn = instantiate_for(FunType(ListType(mid), task.output_type), hyper,
                          seed=config.seed * 7 + 3, name="sa_rnn")
    lib = Library()
    for m in (cnn, mlp, rnn):
        lib.add(m)
    program = Compose(LibRef("sa_rnn", rnn.signature),
                      MapC("list", Compose(LibRef("sa_mlp", mlp.signature),
                                           LibRef("sa_cnn", cnn.signature))))
    return train(program, task, lib, config)


class _PerNodeRNN:
    """LSTM over the row-linearized grid with one output per node."""

    def __init__(self, in_dim, hidden, seed):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.store = T.ParamStore()
        bound = lambda fan: np.sqrt(1.0 / fan)
        self.store.add("wx", rng.uniform(-bound(in_dim), bound(in_dim),
                                         (in_dim, 4 * hidden)))
        self.store.add("wh", rng.uniform(-bound(hidden), bound(hidden),
                                         (hidden, 4 * hidden)))
        self.store.add("b", np.zeros(4 * hidden))
        self.store.add("wo", rng.uniform(-bound(hidden), bound(hidden),
                                         (hidden, 1)))
        self.store.add("bo", np.zeros(1))

    def forward(self, items):
        hdim = self.hidden
        B = items[0].data.shape[0]
        h = T.zeros((B, hdim))
        c = T.zeros((B, hdim))
        outs = []
        for x in items:
            gates = x @ self.store["wx"] + h @ self.store["wh"] + self.store["b"]
            i = T.sigmoid(T.slice_(gates, (slice(None), slice(0, hdim))))
            f = T.sigmoid(T.slice_(gates, (slice(None), slice(hdim, 2 * hdim))))
            g = T.tanh(T.slice_(gates, (slice(None), slice(2 * hdim, 3 * hdim))))
            o = T.sigmoid(T.slice_(gates, (slice(None),
                                           slice(3 * hdim, 4 * hdim))))
            c = f * c + i * g
            h = o * T.tanh(c)
            outs.append(c @ self.store["wo"] + self.store["bo"])
        return outs


def _baseline_graph(task, config, hyper):
    from .lang import FunType, TensorType
    state = TensorType("real", (2,))
    reg = instantiate_for(FunType(task.input_type.node, state), hyper,
                          seed=config.seed * 7 + 4, name="sa_reg")
    rnn = _PerNodeRNN(2, hyper.rnn_hidden, config.seed * 7 + 5)
    params = reg.store.tensors() + rnn.store.tensors()
    opt = Adam(params, lr=config.lr)
    kind = select_loss(task.output_type, task.classify)
    rng = np.random.default_rng([config.seed, 31])

    def forward(xv):
        mapped = [reg.apply(n, "train") for n in xv.nodes]
        return VGraph(rnn.forward(mapped), xv.adj)

    def split_loss(split):
        total, n = 0.0, 0
        for xv, ys in iter_batches(task, split, config.batch_size):
            out = forward(xv)
            total += compute_loss(out, ys, kind).item() * ys.shape[0]
            n += ys.shape[0]
        return total / max(n, 1)

    best_val = split_loss("val")
    best = ({k: v.data.copy() for k, v in
             zip(reg.store.names(), reg.store.tensors())},
            {k: v.data.copy() for k, v in
             zip(rnn.store.names(), rnn.store.tensors())})
    epochs = 5
    for _ in range(epochs):
        for xv, ys in iter_batches(task, "train", config.batch_size, rng):
            out = forward(xv)
            loss = compute_loss(out, ys, kind)
            opt.zero_grad()
            loss.backward()
            opt.step()
        val = split_loss("val")
        if val < best_val:
            best_val = val
            best = ({k: v.data.copy() for k, v in
                     zip(reg.store.names(), reg.store.tensors())},
                    {k: v.data.copy() for k, v in
                     zip(rnn.store.names(), rnn.store.tensors())})
    for k, a in best[0].items():
        np.copyto(reg.store[k].data, a)
    for k, a in best[1].items():
        np.copyto(rnn.store[k].data, a)

    sq, n = 0.0, 0
    for xv, ys in iter_batches(task, "test", config.batch_size):
        out = forward(xv)
        pred = np.stack([node.data for node in out.nodes], axis=1)
        sq += np.sum((pred - ys.reshape(pred.shape)) ** 2)
        n += int(np.prod(ys.shape))
    return {"test_rmse": float(np.sqrt(sq / n)), "val_loss": float(best_val)}
