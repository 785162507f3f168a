"""Finite-difference gradient checking helpers shared by the CLI and the
test suite.  All checks run in float64.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T


def numeric_grad(fn, arrays, i, eps_scale=1e-4):
    """Central-difference gradient of scalar fn w.r.t. arrays[i]."""
    a = arrays[i]
    grad = np.zeros_like(a)
    it = np.nditer(a, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        eps = eps_scale * max(1.0, abs(a[idx]))
        old = a[idx]
        a[idx] = old + eps
        hi = fn(arrays)
        a[idx] = old - eps
        lo = fn(arrays)
        a[idx] = old
        grad[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return grad


def check_case(build, arrays, rtol=1e-3):
    """build(tensors) -> scalar Tensor.  Returns max relative error."""
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(tensors)
    out.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        def scalar(arrs):
            ts = [T.Tensor(x.copy()) for x in arrs]
            return build(ts).data.item()
        num = numeric_grad(scalar, [a.copy() for a in arrays], i)
        denom = max(np.max(np.abs(num)), np.max(np.abs(t.grad)), 1e-8)
        worst = max(worst, float(np.max(np.abs(t.grad - num)) / denom))
    return worst


def gradcheck_cases(seed=0):
    rng = np.random.default_rng([seed, 77])
    r = lambda *shape: rng.standard_normal(shape)
    cases = []
    cases.append(("matmul", lambda ts: T.rsum(ts[0] @ ts[1]),
                  [r(3, 4), r(4, 2)]))
    cases.append(("add_broadcast", lambda ts: T.rsum(ts[0] + ts[1]),
                  [r(3, 4), r(4)]))
    cases.append(("mul", lambda ts: T.rsum(ts[0] * ts[1] * ts[1]),
                  [r(2, 3), r(2, 3)]))
    cases.append(("relu", lambda ts: T.rsum(T.relu(ts[0]) * ts[0]),
                  [r(4, 4) + 0.05]))
    cases.append(("tanh", lambda ts: T.rsum(T.tanh(ts[0] @ ts[1])),
                  [r(2, 3), r(3, 3)]))
    cases.append(("sigmoid", lambda ts: T.rsum(T.sigmoid(ts[0])),
                  [r(3, 3)]))
    cases.append(("softmax_log",
                  lambda ts: T.rsum(
                      T.log(T.softmax(ts[0]) + 1e-9) * ts[1]),
                  [r(2, 5), np.abs(r(2, 5))]))
    cases.append(("conv2d",
                  lambda ts: T.rsum(
                      T.conv2d(ts[0], ts[1], padding=1) * ts[2]),
                  [r(2, 1, 6, 6), r(3, 1, 3, 3), r(2, 3, 6, 6)]))
    cases.append(("maxpool2",
                  lambda ts: T.rsum(T.maxpool2(ts[0]) * ts[1]),
                  [r(2, 2, 4, 4), r(2, 2, 2, 2)]))
    def concat_slice(ts):
        s = T.slice_(T.concat([ts[0], ts[1]], axis=1),
                     (slice(None), slice(1, 5)))
        return T.rsum(s * s)

    cases.append(("concat_slice", concat_slice, [r(2, 3), r(2, 3)]))
    cases.append(("reshape_mean",
                  lambda ts: T.rmean(T.reshape(ts[0], (6,)) * 2.0),
                  [r(2, 3)]))
    cases.append(("amin", lambda ts: T.rsum(T.amin(ts[0], axis=1)),
                  [r(3, 4)]))
    cases.append(("minimum",
                  lambda ts: T.rsum(T.minimum(ts[0], ts[1])),
                  [r(3, 4), r(3, 4)]))
    return cases


def gradcheck_suite(seed=0, rtol=1e-3):
    failures, checked = [], 0
    for name, build, arrays in gradcheck_cases(seed):
        err = check_case(build, arrays, rtol)
        checked += 1
        if err > rtol:
            failures.append({"case": name, "rel_error": float(err)})
    return failures, checked
