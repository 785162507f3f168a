import numpy as np
import pytest

from tdsynth import tensor as T
from tdsynth.lang import FunType, GraphType, ListType, TensorType
from tdsynth.modules import (DuplicateName, Hyper, InadmissibleSignature,
                             Library, instantiate, instantiate_for,
                             select_kind)

IMG = TensorType("real", (8, 8))
FEAT = TensorType("real", (16,))
B1 = TensorType("bool", (1,))
R1 = TensorType("real", (1,))
R2 = TensorType("real", (2,))
R4 = TensorType("real", (4,))


def test_select_kind_cnn():
    assert select_kind(IMG, FEAT) == ("CNN", "linear")


def test_select_kind_mlp_sigmoid():
    assert select_kind(FEAT, B1) == ("MLP", "sigmoid")


def test_select_kind_rnn():
    assert select_kind(ListType(R2), R1) == ("RNN", "linear")


def test_select_kind_classify_softmax():
    assert select_kind(FEAT, TensorType("real", (10,)), classify=True) == \
        ("MLP", "softmax")


def test_select_kind_graph_rejected():
    with pytest.raises(InadmissibleSignature):
        select_kind(GraphType(R2), R2)


def test_mlp_param_count():
    m = instantiate("MLP", FunType(FEAT, R4), Hyper(mlp_hidden=32), seed=0)
    assert m.store.num_params() == 16 * 32 + 32 + 32 * 4 + 4  # 708


def test_cnn_output_shape():
    m = instantiate("CNN", FunType(IMG, FEAT),
                    Hyper(cnn_channels=(4, 8), cnn_kernel=3), seed=0)
    x = T.Tensor(np.random.default_rng(0).standard_normal((5, 8, 8)))
    assert m.apply(x).data.shape == (5, 16)


def test_rnn_output_shape():
    m = instantiate("RNN", FunType(ListType(B1), R1), Hyper(), seed=0)
    items = [T.Tensor(np.ones((3, 1))) for _ in range(4)]
    assert m.apply(items).data.shape == (3, 1)


def test_same_seed_identical_params():
    a = instantiate("MLP", FunType(FEAT, R4), Hyper(), seed=9)
    b = instantiate("MLP", FunType(FEAT, R4), Hyper(), seed=9)
    for n in a.store.names():
        assert np.array_equal(a.store[n].data, b.store[n].data)


def test_different_seed_different_params():
    a = instantiate("MLP", FunType(FEAT, R4), Hyper(), seed=1)
    b = instantiate("MLP", FunType(FEAT, R4), Hyper(), seed=2)
    assert not np.array_equal(a.store["w1"].data, b.store["w1"].data)


def test_sigmoid_output_bounded():
    m = instantiate_for(FunType(FEAT, B1), seed=3)
    out = m.apply(T.Tensor(np.random.default_rng(1).standard_normal((6, 16))))
    assert np.all(out.data > 0) and np.all(out.data < 1)


def test_curried_fold_body():
    m = instantiate_for(FunType(R1, FunType(B1, R1)), seed=4)
    acc = T.Tensor(np.zeros((3, 1)))
    x = T.Tensor(np.ones((3, 1)))
    assert m.apply_pair(acc, x).data.shape == (3, 1)


def test_conv_kernel_arity():
    m = instantiate("MLP", FunType(ListType(R2), R2), Hyper(), seed=5,
                    in_elems=3)
    window = [T.Tensor(np.ones((2, 2))) for _ in range(3)]
    assert m.apply(window).data.shape == (2, 2)
    with pytest.raises(T.ShapeMismatch):
        m.apply(window[:2])


def test_library_append_only():
    lib = Library()
    mods = [instantiate_for(FunType(FEAT, R4), seed=i, name=f"m{i}")
            for i in range(4)]
    for m in mods:
        lib.add(m)
    extra = [instantiate_for(FunType(FEAT, B1), seed=9, name="e1"),
             instantiate_for(FunType(FEAT, B1), seed=10, name="e2")]
    lib.add_frozen(extra)
    assert len(lib) == 6
    assert list(lib.names())[:4] == ["m0", "m1", "m2", "m3"]
    for m in mods:
        assert lib.get(m.name) is m


def test_library_duplicate_rejected():
    lib = Library()
    lib.add(instantiate_for(FunType(FEAT, R4), seed=0, name="m"))
    with pytest.raises(DuplicateName):
        lib.add(instantiate_for(FunType(FEAT, R4), seed=1, name="m"))


def test_frozen_module_params_locked():
    lib = Library()
    m = instantiate_for(FunType(FEAT, R4), seed=0, name="m")
    lib.add_frozen([m])
    with pytest.raises(T.FrozenStoreError):
        m.store.set_("w1", np.zeros_like(m.store["w1"].data))


def test_fresh_candidates():
    lib = Library()
    sig = FunType(FEAT, B1)
    cands = lib.fresh_candidates(sig, seed=0)
    assert len(cands) == 1 and not cands[0].frozen

    frozen = instantiate_for(sig, seed=1, name="rec")
    lib.add_frozen([frozen])
    cands = lib.fresh_candidates(sig, seed=0)
    assert cands[0] is frozen and len(cands) == 2 and not cands[1].frozen


def test_fresh_candidates_graph_input_empty():
    lib = Library()
    assert lib.fresh_candidates(FunType(GraphType(R2), R2), seed=0) == []


def test_library_save_load_round_trip(tmp_path):
    lib = Library()
    lib.add(instantiate_for(FunType(FEAT, B1), seed=0, name="a"))
    lib.add_frozen([instantiate_for(FunType(IMG, FEAT), seed=1, name="b")])
    lib.save(tmp_path / "lib")
    loaded = Library.load(tmp_path / "lib")
    assert list(loaded.names()) == ["a", "b"]
    assert loaded.get("b").frozen and not loaded.get("a").frozen
    for n in ("a", "b"):
        for p in lib.get(n).store.names():
            assert np.array_equal(loaded.get(n).store[p].data,
                                  lib.get(n).store[p].data)


def test_fresh_copy_distinct_params():
    m = instantiate_for(FunType(FEAT, B1), seed=0, name="m")
    c = m.fresh_copy("c", seed=99)
    assert c.name == "c"
    assert not np.array_equal(c.store["w1"].data, m.store["w1"].data)
