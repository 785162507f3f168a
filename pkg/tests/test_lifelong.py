import json

import numpy as np
from tdsynth.lifelong import (SequenceSpec, reuse_flags, run_sequence,
                              standalone_baseline, transfer_report)
from tdsynth.tasks import make_count_task, make_shortest_path_task
from tdsynth.topdown import SearchConfig
from tdsynth.training import TrainConfig, evaluate_metric


def _spec(tasks, seed=1, family="counting", name="seq"):
    return SequenceSpec(name, family, tasks, seed)


def test_single_task_grows_library():
    spec = _spec([{"task": "recognize", "class": 0, "n": 200}])
    rep = run_sequence(spec, search_config=SearchConfig(max_size=6),
                       train_config=TrainConfig(epochs=4, seed=1))
    t = rep.tasks[0]
    assert t.library_after > t.library_before
    assert t.best_text


def test_sequence_reuses_lib_modules():
    spec = _spec([{"task": "recognize", "class": 0, "n": 250},
                  {"task": "count", "class": 0, "n": 250}])
    rep = run_sequence(spec, search_config=SearchConfig(max_size=8),
                       train_config=TrainConfig(epochs=8, seed=1))
    assert "lib." in rep.tasks[1].best_text
    assert rep.tasks[1].reused


def test_sequence_deterministic():
    spec = _spec([{"task": "recognize", "class": 1, "n": 200}], seed=3)
    a = run_sequence(spec, search_config=SearchConfig(max_size=6),
                     train_config=TrainConfig(epochs=3, seed=3)).to_json()
    b = run_sequence(spec, search_config=SearchConfig(max_size=6),
                     train_config=TrainConfig(epochs=3, seed=3)).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_no_forgetting_bit_exact():
    spec = _spec([{"task": "recognize", "class": 0, "n": 250},
                  {"task": "count", "class": 0, "n": 250}], seed=2)
    kept = []
    run_sequence(spec, search_config=SearchConfig(max_size=8),
                 train_config=TrainConfig(epochs=6, seed=2),
                 keep_results=kept)
    # later training must not have touched any module of earlier winners
    for task, best in kept:
        again = evaluate_metric(best.program, best.bindings, task, "test")
        assert again == best.metrics["test"]


def test_standalone_baseline_list_task():
    task = make_count_task(0, 150, 1.0, 4)
    res = standalone_baseline(task, TrainConfig(epochs=3, seed=4))
    assert np.isfinite(res.val_loss)
    assert "map_l(" in res.text


def test_standalone_baseline_graph_task():
    task = make_shortest_path_task(30, 4)
    res = standalone_baseline(task, TrainConfig(epochs=2, seed=4))
    assert np.isfinite(res["test_rmse"])


def test_reuse_flags_none_without_lib_refs():
    from tdsynth.modules import Library
    high, low = reuse_flags("compose(a, map_l(b))", Library())
    assert not high and not low
