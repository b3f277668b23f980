from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rnrdp import numkit as nk
from rnrdp.numkit import ParamStore, ShapeError, Tape, Tensor


def _loop_matmul(x, W, b):
    out = np.zeros((x.shape[0], W.shape[1]))
    for i in range(x.shape[0]):
        for j in range(W.shape[1]):
            acc = 0.0
            for k in range(x.shape[1]):
                acc += x[i, k] * W[k, j]
            out[i, j] = acc + b[j]
    return out


def test_affine_identity_and_zero_input():
    out = nk.affine(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
    assert out.data.tolist() == [[1.0, 2.0]]
    b = np.array([0.5, -3.0])
    out = nk.affine(np.zeros((1, 2)), np.random.default_rng(0).normal(size=(2, 2)), b)
    assert out.data.tolist() == [b.tolist()]


def test_affine_matches_loop_oracle(rng):
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    assert np.max(np.abs(nk.affine(x, W, b).data - _loop_matmul(x, W, b))) < 1e-12


def test_affine_shape_error_reports_dims():
    with pytest.raises(ShapeError, match="4"):
        nk.affine(np.zeros((2, 3)), np.zeros((4, 5)))


def test_mish_values():
    assert nk.mish(np.array([0.0])).data[0] == 0.0
    assert abs(nk.mish(np.array([20.0])).data[0] - 20.0) < 1e-6
    x = 1.0
    ref = x * math.tanh(math.log(1.0 + math.exp(x)))
    assert abs(nk.mish(np.array([x])).data[0] - ref) < 1e-15


def test_mish_extreme_inputs_finite():
    out = nk.mish(np.array([-800.0, -40.0, 40.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert out[-1] == 800.0


def test_mse_loss_values(rng):
    assert nk.mse_loss(np.ones(3), np.ones(3)).data == 0.0
    assert float(nk.mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0])).data) == 1.0
    p, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    acc, n = 0.0, 0
    for a, b in zip(p.reshape(-1), t.reshape(-1)):
        acc += (a - b) ** 2
        n += 1
    assert abs(float(nk.mse_loss(p, t).data) - acc / n) < 1e-12
    with pytest.raises(ShapeError):
        nk.mse_loss(np.zeros(3), np.zeros(4))


def test_mse_gradient_is_two_diff_over_count(rng):
    p = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    t = rng.normal(size=(3, 2))
    with Tape() as tape:
        loss = nk.mse_loss(p, t)
    tape.backward(loss)
    assert np.allclose(p.grad, 2 * (p.data - t) / 6, atol=1e-15)


def _single_param(shape, rng):
    ps = ParamStore()
    ps.add("w", rng.uniform(-2, 2, size=shape))
    return ps


def test_grad_check_quadratic_and_constant(rng):
    ps = _single_param((5,), rng)
    assert nk.grad_check(lambda p: nk.mul(nk.sum_all(nk.mul(p["w"], p["w"])), Tensor(0.5)), ps) < 1e-9
    assert nk.grad_check(lambda p: nk.sum_all(Tensor(np.ones(3))), ps) == 0.0


def test_grad_check_rejects_bad_eps_and_nan(rng):
    ps = _single_param((2,), rng)
    with pytest.raises(ValueError):
        nk.grad_check(lambda p: nk.sum_all(p["w"]), ps, eps=1e-3)
    with pytest.raises(FloatingPointError):
        nk.grad_check(lambda p: nk.sum_all(nk.mul(p["w"], Tensor(np.full(2, np.nan)))), ps)


unit = arrays(np.float64, (3, 4), elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=25, deadline=None)
@given(x=unit, w=arrays(np.float64, (4, 2), elements=st.floats(-2, 2)), b=arrays(np.float64, (2,), elements=st.floats(-2, 2)))
def test_affine_gradients_match_fd(x, w, b):
    ps = ParamStore()
    ps.add("x", x)
    ps.add("w", w)
    ps.add("b", b)
    target = np.linspace(-1, 1, 6).reshape(3, 2)
    assert nk.grad_check(lambda p: nk.mse_loss(nk.affine(p["x"], p["w"], p["b"]), target), ps) < 1e-6


@settings(max_examples=25, deadline=None)
@given(x=unit)
def test_mish_gradient_matches_fd(x):
    ps = ParamStore()
    ps.add("x", x)
    assert nk.grad_check(lambda p: nk.sum_all(nk.mish(p["x"])), ps) < 1e-6


@settings(max_examples=20, deadline=None)
@given(u=unit, s=unit, h=unit)
def test_film_add_mul_gradients_match_fd(u, s, h):
    ps = ParamStore()
    ps.add("u", u)
    ps.add("s", s)
    ps.add("h", h)

    def f(p):
        y = nk.film(p["u"], p["s"], p["h"])
        return nk.mse_loss(nk.add(nk.mul(y, p["u"]), p["h"]), np.zeros((3, 4)))

    assert nk.grad_check(f, ps) < 1e-6


@settings(max_examples=20, deadline=None)
@given(table=arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
       idx=arrays(np.int64, (7,), elements=st.integers(0, 4)))
def test_take_rows_gradient_matches_fd(table, idx):
    ps = ParamStore()
    ps.add("t", table)
    target = np.arange(21, dtype=float).reshape(7, 3) / 21
    assert nk.grad_check(lambda p: nk.mse_loss(nk.take_rows(p["t"], idx), target), ps) < 1e-6


@settings(max_examples=20, deadline=None)
@given(h=arrays(np.float64, (2, 5, 3), elements=st.floats(-2, 2)),
       w=arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_temporal_mix_gradient_matches_fd(h, w):
    ps = ParamStore()
    ps.add("h", h)
    ps.add("w", w)
    assert nk.grad_check(lambda p: nk.mse_loss(nk.temporal_mix(p["h"], p["w"]), np.zeros((2, 5, 3))), ps) < 1e-6


def test_temporal_mix_matches_loop_oracle(rng):
    h, w = rng.normal(size=(2, 6, 3)), rng.normal(size=(3, 3))
    out = nk.temporal_mix(h, w).data
    ref = np.zeros_like(h)
    for b in range(2):
        for t in range(6):
            for c in range(3):
                for k in range(3):
                    s = t + k - 1
                    if 0 <= s < 6:
                        ref[b, t, c] += w[k, c] * h[b, s, c]
    assert np.max(np.abs(out - ref)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(a=arrays(np.float64, (2, 3), elements=st.floats(-2, 2)), b=arrays(np.float64, (2, 2), elements=st.floats(-2, 2)))
def test_concat_reshape_gradients_match_fd(a, b):
    ps = ParamStore()
    ps.add("a", a)
    ps.add("b", b)
    f = lambda p: nk.mse_loss(nk.reshape(nk.concat([p["a"], p["b"]], axis=1), (5, 2)), np.ones((5, 2)))
    assert nk.grad_check(f, ps) < 1e-6


def test_forward_and_backward_replay_bitwise(rng):
    ps = ParamStore()
    ps.add("w", rng.normal(size=(4, 3)))
    x = rng.normal(size=(5, 4))
    runs = []
    for _ in range(2):
        ps.zero_grad()
        with Tape() as tape:
            loss = nk.mse_loss(nk.mish(nk.affine(x, ps["w"])), np.zeros((5, 3)))
        tape.backward(loss)
        runs.append((loss.data.copy(), ps.grad("w").copy()))
    assert np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])


def test_gradient_accumulates_over_reuse():
    w = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        loss = nk.sum_all(nk.mul(w, w))
    tape.backward(loss)
    assert w.grad.tolist() == [6.0]


def test_backward_requires_scalar():
    w = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = nk.mul(w, w)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_no_recording_outside_tape():
    w = Tensor(np.ones(2), requires_grad=True)
    out = nk.mul(w, w)
    assert not out.requires_grad


def test_paramstore_rules(rng):
    ps = ParamStore()
    ps.add("a", np.zeros(2))
    ps.add("b", np.zeros((2, 3)))
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(1))
    assert ps.names() == ["a", "b"] and ps.count() == 8
    assert np.array_equal(ps.grad("a"), np.zeros(2))
    cp = ps.copy()
    cp["a"].data[:] = 1
    assert ps["a"].data.sum() == 0
    with pytest.raises(ShapeError):
        ps.load_state({"a": np.zeros(3), "b": np.zeros((2, 3))})
    with pytest.raises(KeyError):
        ps.load_state({"a": np.zeros(2)})
