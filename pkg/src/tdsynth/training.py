"""Gradient-based parameter fitting for candidate programs.

A candidate's fresh template references are cloned per occurrence (each
clone gets its own parameters and a unique name); frozen modules are bound
as-is and never updated.  Training early-stops on validation loss and all
reported metrics come from the best-validation snapshot in eval mode.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .interp import InterpConfig, VGraph, VList, VTensor, evaluate
from .lang import (GraphType, LibRef, ListType, TensorType, Term, Type,
                   children, print_program, program_size, replace_child)
from .tasks import Task
from .tensor import Adam, SGD, Tensor


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    loss_kind: str | None = None     # override; normally derived from type
    interp: InterpConfig = field(default_factory=InterpConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainedCandidate:
    program: Term
    text: str
    bindings: dict                   # name -> module (clones + frozen refs)
    val_loss: float
    metrics: dict                    # split -> metric value
    losses: dict                     # split -> loss value
    epochs_run: int = 0
    best_epoch: int = 0
    log: list = field(default_factory=list)
    index: int = 0

    @property
    def size(self):
        return program_size(self.program)


def select_loss(output_type: Type, classify=False, override=None):
    """Loss kind for an output type: 'bce', 'ce', or 'mse'."""
    if override:
        return override
    t = output_type
    if isinstance(t, (ListType, GraphType)):
        return "mse"
    if not isinstance(t, TensorType):
        raise ValueError("function-typed outputs have no loss")
    if t.atom == "bool" and int(np.prod(t.dims or (1,))) == 1:
        return "bce"
    if classify:
        return "ce"
    return "mse"


_EPS = 1e-12


def _loss_tensor(pred: Tensor, y: np.ndarray, kind: str) -> Tensor:
    target = Tensor(y)
    if kind == "bce":
        return T.rmean(-(target * T.log(pred + _EPS)
                         + (1.0 - target) * T.log(1.0 - pred + _EPS)))
    if kind == "ce":
        return T.rmean(-T.rsum(target * T.log(pred + _EPS), axis=-1))
    diff = pred - target
    return T.rmean(diff * diff)


def compute_loss(out_value, y_batch, kind):
    if isinstance(out_value, VTensor):
        return _loss_tensor(out_value.t, y_batch, kind)
    if isinstance(out_value, VGraph):
        losses = [_loss_tensor(node, y_batch[:, u, :], kind)
                  for u, node in enumerate(out_value.nodes)]
        total = losses[0]
        for l in losses[1:]:
            total = total + l
        return total * (1.0 / len(losses))
    raise ValueError("program output is not a tensor or graph value")


# ---------------------------------------------------------------------------
# candidate instantiation


def instantiate_candidate(program: Term, library, namer=None, seed=0):
    """Bind a program: frozen modules shared, fresh templates cloned
    per occurrence with unique names.  Returns (bound term, bindings)."""
    bindings = {}
    counter = [0]
    rng = np.random.default_rng([seed, 271])

    def next_name():
        if namer is not None:
            return namer()
        counter[0] += 1
        return f"nn_{seed}_{counter[0]}"

    def walk(t):
        if isinstance(t, LibRef):
            mod = library.get(t.name)
            if mod.frozen:
                bindings[mod.name] = mod
                return t
            clone = mod.fresh_copy(next_name(), int(rng.integers(1 << 31)))
            bindings[clone.name] = clone
            return LibRef(clone.name, t.signature)
        out = t
        for i, c in enumerate(children(t)):
            nc = walk(c)
            if nc is not c:
                out = replace_child(out, i, nc)
        return out

    bound = walk(program)
    return bound, bindings


# ---------------------------------------------------------------------------
# batching


def _group_key(task: Task, x):
    if task.kind == "list":
        return len(x)
    if task.kind == "graph":
        return x.side
    return 0


def collate(task: Task, samples):
    """Stack same-structure samples into one batched Value + target array."""
    xs = [s[0] for s in samples]
    ys = np.stack([np.asarray(s[1]) for s in samples])
    if task.kind == "tensor":
        return VTensor(Tensor(np.stack(xs))), ys
    if task.kind == "list":
        k = len(xs[0])
        items = [Tensor(np.stack([x[j] for x in xs])) for j in range(k)]
        return VList(items), ys
    nodes = [Tensor(np.stack([x.nodes[u] for x in xs]))
             for u in range(xs[0].nodes.shape[0])]
    return VGraph(nodes, xs[0].adj), ys


def iter_batches(task: Task, split: str, batch_size: int, rng=None):
    samples = task.splits[split]
    groups = {}
    for s in samples:
        groups.setdefault(_group_key(task, s[0]), []).append(s)
    batches = []
    for key in sorted(groups):
        grp = groups[key]
        if rng is not None:
            grp = [grp[i] for i in rng.permutation(len(grp))]
        for i in range(0, len(grp), batch_size):
            batches.append(grp[i:i + batch_size])
    if rng is not None and len(batches) > 1:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return [collate(task, b) for b in batches]


# ---------------------------------------------------------------------------
# training loop


def _eval_loss(program, bindings, task, split, kind, config):
    total, n = 0.0, 0
    for xv, ys in iter_batches(task, split, config.batch_size):
        out = evaluate(program, xv, bindings, mode="eval",
                       config=config.interp)
        b = ys.shape[0]
        total += compute_loss(out, ys, kind).item() * b
        n += b
    return total / max(n, 1)


def evaluate_metric(program, bindings, task, split, config=None):
    """Classification error rate in percent, or RMSE for regression."""
    config = config or TrainConfig()
    if not task.splits.get(split):
        raise ValueError(f"empty split {split!r}")
    kind = select_loss(task.output_type, task.classify, config.loss_kind)
    err, sq, n = 0.0, 0.0, 0
    for xv, ys in iter_batches(task, split, config.batch_size):
        out = evaluate(program, xv, bindings, mode="eval",
                       config=config.interp)
        if isinstance(out, VGraph):
            pred = np.stack([node.data for node in out.nodes], axis=1)
        else:
            pred = out.t.data
        if kind == "bce":
            err += np.sum((pred >= 0.5).astype(float).reshape(ys.shape[0], -1)
                          != ys.reshape(ys.shape[0], -1))
            n += ys.shape[0]
        elif kind == "ce":
            err += np.sum(pred.argmax(axis=-1) != ys.argmax(axis=-1))
            n += ys.shape[0]
        else:
            sq += np.sum((pred - ys.reshape(pred.shape)) ** 2)
            n += int(np.prod(ys.shape))
    if kind in ("bce", "ce"):
        return 100.0 * err / n
    return math.sqrt(sq / n)


def train(program: Term, task: Task, library, config: TrainConfig,
          namer=None, index=0) -> TrainedCandidate:
    bound, bindings = instantiate_candidate(program, library, namer,
                                            config.seed)
    kind = select_loss(task.output_type, task.classify, config.loss_kind)
    params = []
    for mod in bindings.values():
        if not mod.frozen:
            params.extend(mod.store.tensors())
    stores = {name: m.store for name, m in bindings.items() if not m.frozen}

    def snapshot():
        return {n: s.snapshot() for n, s in stores.items()}

    def restore(snap):
        for n, s in stores.items():
            s.restore(snap[n])

    log = []
    best_epoch = 0
    epochs_run = 0
    diverged = False
    if params:
        opt = (Adam(params, lr=config.lr) if config.optimizer == "adam"
               else SGD(params, lr=config.lr))
        rng = np.random.default_rng([config.seed, 977, index])
        best_val = _eval_loss(bound, bindings, task, "val", kind, config)
        best_snap = snapshot()
        for epoch in range(config.epochs):
            for xv, ys in iter_batches(task, "train", config.batch_size, rng):
                out = evaluate(bound, xv, bindings, mode="train", rng=rng,
                               config=config.interp)
                loss = compute_loss(out, ys, kind)
                if not np.isfinite(loss.item()):
                    diverged = True
                    break
                opt.zero_grad()
                loss.backward()
                opt.step()
            epochs_run = epoch + 1
            if diverged:
                break
            val = _eval_loss(bound, bindings, task, "val", kind, config)
            tr = _eval_loss(bound, bindings, task, "train", kind, config)
            log.append({"epoch": epoch, "train_loss": tr, "val_loss": val})
            if val < best_val:
                best_val, best_snap, best_epoch = val, snapshot(), epoch
        restore(best_snap)

    if diverged:
        losses = {s: float("inf") for s in task.splits}
        metrics = {s: float("inf") for s in task.splits}
        val_loss = float("inf")
    else:
        losses = {s: _eval_loss(bound, bindings, task, s, kind, config)
                  for s in task.splits}
        metrics = {s: evaluate_metric(bound, bindings, task, s, config)
                   for s in task.splits}
        val_loss = losses["val"]
    return TrainedCandidate(bound, print_program(bound), bindings, val_loss,
                            metrics, losses, epochs_run, best_epoch, log,
                            index)


def rank(candidates):
    """Ascending validation loss; ties by smaller size, then index."""
    return sorted(candidates, key=lambda c: (c.val_loss, c.size, c.index))


def write_training_log(candidate: TrainedCandidate, path):
    with open(path, "w") as f:
        for row in candidate.log:
            f.write(json.dumps(row, sort_keys=True) + "\n")
