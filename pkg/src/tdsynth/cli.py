"""Command line interface.

Exit codes: 0 success, 1 failure reported by the command, 2 bad usage.
All reports are JSON with sorted keys so identical runs are byte
identical.
"""
from __future__ import annotations

import argparse
import json
import sys



def _emit(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _check_class(args):
    if getattr(args, "cls", 0) not in range(10):
        sys.stderr.write(f"error: glyph class {args.cls} out of range 0..9\n")
        return False
    return True


def cmd_gen(args):
    args.seed = 0 if args.seed is None else args.seed
    from .tasks import (make_count_task, make_recognize_task,
                        make_shortest_path_task, make_sum_task, write_dataset)
    if not _check_class(args):
        return 2
    makers = {
        "recognize": lambda: make_recognize_task(args.cls, args.n,
                                                 args.fraction, args.seed),
        "count": lambda: make_count_task(args.cls, args.n, args.fraction,
                                         args.seed),
        "sum": lambda: make_sum_task(args.n, args.fraction, args.seed),
        "shortest_path": lambda: make_shortest_path_task(
            args.n, args.seed, color=args.color),
    }
    task = makers[args.task]()
    manifest = write_dataset(task, args.out)
    _emit({"schema": 1, "task": task.name, "out": args.out,
           "splits": {k: v["x_sha256"]
                      for k, v in manifest["splits"].items()}})
    return 0


def cmd_census(args):
    args.seed = 0 if args.seed is None else args.seed
    from .presets import counting_library, counting_universe_config
    from .topdown import census_report
    from .typecheck import enumerate_universe
    from .lang import parse_type
    library = counting_library(args.seed)
    universe = enumerate_universe(counting_universe_config())
    target = parse_type(args.target)
    lines, data = census_report(target, library, universe, args.max_size)
    _emit({"schema": 1, "max_size": args.max_size,
           "target": args.target, "sizes": data, "lines": lines}, args.out)
    return 0


def cmd_synth(args):
    args.seed = 0 if args.seed is None else args.seed
    from .presets import (counting_library, counting_universe_config,
                          graph_library, graph_universe_config,
                          graph_interp_config)
    from .tasks import (make_count_task, make_recognize_task,
                        make_shortest_path_task, make_sum_task)
    from .topdown import SearchConfig, SynthesisExhausted, synthesize
    from .evolve import EvolveConfig, NoSolution, evolve
    from .training import TrainConfig, train
    from .typecheck import enumerate_universe

    if not _check_class(args):
        return 2
    if args.task == "shortest_path":
        library = graph_library(args.seed)
        universe = enumerate_universe(graph_universe_config())
        task = make_shortest_path_task(args.n, args.seed)
        interp = graph_interp_config()
        epochs = 5
    else:
        library = counting_library(args.seed)
        universe = enumerate_universe(counting_universe_config())
        makers = {
            "recognize": lambda: make_recognize_task(args.cls, args.n,
                                                     args.fraction,
                                                     args.seed),
            "count": lambda: make_count_task(args.cls, args.n, args.fraction,
                                             args.seed),
            "sum": lambda: make_sum_task(args.n, args.fraction, args.seed),
        }
        task = makers[args.task]()
        interp = None
        epochs = args.epochs
    tconf = TrainConfig(seed=args.seed, epochs=epochs,
                        **({"interp": interp} if interp else {}))
    counter = [0]

    def namer():
        counter[0] += 1
        return f"nn_{args.seed}_{counter[0]}"

    def trainer(program, index):
        return train(program, task, library, tconf, namer, index)

    repeats = (1, 10) if args.task == "shortest_path" else (1,)
    sconf = SearchConfig(max_size=args.max_size,
                         max_candidates=args.budget,
                         conv_repeats=repeats)
    try:
        if args.strategy == "evolve":
            econf = EvolveConfig(max_size=args.max_size, seed=args.seed,
                                 conv_repeats=repeats)
            ranked = evolve(task, library, universe, econf, trainer)
        else:
            ranked = synthesize(task, library, universe, sconf, trainer)
    except (SynthesisExhausted, NoSolution) as exc:
        _emit({"schema": 1, "task": task.name, "error": str(exc)}, args.out)
        return 1
    best = ranked[0]
    _emit({"schema": 1, "task": task.name, "strategy": args.strategy,
           "seed": args.seed, "best_program": best.text,
           "val_loss": round(float(best.val_loss), 12),
           "metrics": {k: round(float(v), 12)
                       for k, v in best.metrics.items()},
           "candidates": [{"program": c.text,
                           "val_loss": round(float(c.val_loss), 12)}
                          for c in ranked[:5]]}, args.out)
    return 0


def cmd_runseq(args):
    from .lifelong import SequenceSpec, run_sequence
    from .topdown import SearchConfig
    spec = SequenceSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    repeats = (1, 10) if spec.family == "graph" else (1,)
    report = run_sequence(spec, strategy=args.strategy,
                          search_config=SearchConfig(
                              max_size=args.max_size,
                              max_candidates=args.budget,
                              conv_repeats=repeats),
                          jobs=args.jobs)
    _emit(report.to_json(), args.out)
    return 0 if all(not t.no_solution for t in report.tasks) else 1


def cmd_gradcheck(args):
    from .tests_support import gradcheck_suite
    failures, checked = gradcheck_suite(0 if args.seed is None else args.seed)
    _emit({"schema": 1, "checked": checked, "failures": failures})
    return 0 if not failures else 1


def build_parser():
    p = argparse.ArgumentParser(prog="tdsynth")
    p.add_argument("--seed", type=int, default=None)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("task", choices=["recognize", "count", "sum",
                                    "shortest_path"])
    g.add_argument("--cls", type=int, default=0)
    g.add_argument("--n", type=int, default=400)
    g.add_argument("--fraction", type=float, default=1.0)
    g.add_argument("--color", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    c = sub.add_parser("census", help="count well-typed programs by size")
    c.add_argument("--max-size", type=int, default=6)
    c.add_argument("--target", default="list<real[8][8]> -> real[1]")
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_census)

    s = sub.add_parser("synth", help="synthesize a program for a task")
    s.add_argument("task", choices=["recognize", "count", "sum",
                                    "shortest_path"])
    s.add_argument("--cls", type=int, default=0)
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--strategy", choices=["topdown", "evolve"],
                   default="topdown")
    s.add_argument("--budget", type=int, default=20)
    s.add_argument("--max-size", type=int, default=8)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_synth)

    r = sub.add_parser("runseq", help="run a lifelong task sequence")
    r.add_argument("spec")
    r.add_argument("--strategy", choices=["topdown", "evolve"],
                   default="topdown")
    r.add_argument("--budget", type=int, default=20)
    r.add_argument("--max-size", type=int, default=8)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_runseq)

    d = sub.add_parser("gradcheck", help="finite-difference gradient check")
    d.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
