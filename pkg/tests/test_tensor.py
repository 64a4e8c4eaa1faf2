import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringkit import checks
from ringkit.tensor import (
    DetachedTensor,
    NotScalar,
    OptimizerState,
    OutOfRange,
    ShapeMismatch,
    Tape,
    Tensor,
    absolute,
    adam_step,
    add,
    backward,
    concat,
    grad_check,
    load_checkpoint,
    mean,
    mul,
    onecycle_lr,
    reduce_sum,
    save_checkpoint,
    scalar_mul,
    segment_softmax,
    segment_sum,
    slice_lastdim,
    sub,
)


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(3.0), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(x)
    grads = backward(tape, loss)
    np.testing.assert_array_equal(grads[x], np.ones(3))


def test_quadratic_gradient_is_x():
    x = Tensor(np.array([1.5, -2.0, 0.25]), requires_grad=True)
    with Tape() as tape:
        loss = scalar_mul(reduce_sum(mul(x, x)), 0.5)
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads[x], x.data, rtol=1e-12)


def test_not_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(NotScalar):
        backward(tape, y)


def test_detached_tensor():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        reduce_sum(x)
    loose = Tensor(np.asarray(1.0), requires_grad=True)
    with pytest.raises(DetachedTensor):
        backward(tape, loose)


def test_backward_determinism():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(20, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
    seg = np.sort(rng.integers(0, 5, size=20))

    def run():
        with Tape() as tape:
            h = absolute(segment_sum(x @ w, seg, 5))
            loss = mean(h)
        g = backward(tape, loss)
        return g[x].copy(), g[w].copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_op_level_gradcheck_suite():
    results = checks.op_level_suite(seed=0)
    for name, res in results.items():
        assert res.passed(checks.OP_TOLERANCE), (name, res.max_rel_error)
    assert results["relu"].n_excluded == 1  # the exactly-zero input


def test_gradcheck_flags_broken_adjoint():
    from ringkit.tensor import _emit

    def bad_double(t):
        out = Tensor(t.data * 2.0)
        # wrong on purpose: claims d(2x)/dx = 1
        return _emit(out, (t,), lambda g: (g * 1.0,))

    x = Tensor(np.array([0.3, -0.7, 1.2]), requires_grad=True)
    report = grad_check(lambda p: reduce_sum(bad_double(p["x"])), {"x": x})
    assert not report["x"].passed(1e-4)
    assert report["x"].max_rel_error > 0.4


def test_gradcheck_retry_ladder_never_hurts():
    x = Tensor(np.array([0.3, -0.7, 1.2]), requires_grad=True)

    def f(p):
        return scalar_mul(reduce_sum(mul(p["x"], p["x"])), 0.5)

    base = grad_check(f, {"x": x})["x"].max_rel_error
    laddered = grad_check(f, {"x": x},
                          retry_eps=(1e-4, 1e-3))["x"].max_rel_error
    assert laddered <= base + 1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_segment_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    n_seg = int(rng.integers(1, 8))
    seg = np.sort(rng.integers(0, n_seg, size=n))
    x = rng.normal(scale=5.0, size=n)
    y = segment_softmax(Tensor(x), seg, n_seg).data
    for s in range(n_seg):
        mask = seg == s
        if mask.any():
            assert abs(y[mask].sum() - 1.0) < 1e-6


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_segment_sum_linearity_exact(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    seg = np.sort(rng.integers(0, 5, size=n))
    x = rng.integers(-50, 50, size=(n, 3)).astype(np.float64)
    y = rng.integers(-50, 50, size=(n, 3)).astype(np.float64)
    a, b = 3.0, -2.0
    lhs = segment_sum(Tensor(a * x + b * y), seg, 5).data
    rhs = a * segment_sum(Tensor(x), seg, 5).data \
        + b * segment_sum(Tensor(y), seg, 5).data
    assert np.array_equal(lhs, rhs)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_concat_slice_round_trip(seed):
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(1, 10))
    wa = int(rng.integers(1, 6))
    wb = int(rng.integers(1, 6))
    a = rng.normal(size=(rows, wa))
    b = rng.normal(size=(rows, wb))
    joined = concat([Tensor(a), Tensor(b)], axis=1)
    back_a = slice_lastdim(joined, 0, wa).data
    back_b = slice_lastdim(joined, wa, wa + wb).data
    assert np.array_equal(back_a, a) and np.array_equal(back_b, b)


def test_empty_segments_are_zero():
    x = Tensor(np.ones((3, 2)))
    out = segment_sum(x, np.array([0, 0, 3]), 5).data
    np.testing.assert_array_equal(out[1], 0.0)
    np.testing.assert_array_equal(out[2], 0.0)
    np.testing.assert_array_equal(out[4], 0.0)
    np.testing.assert_array_equal(out[0], [2.0, 2.0])


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = OptimizerState()
    before = p.data.copy()
    adam_step({"p": p}, {"p": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_closed_form():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState()
    adam_step({"p": p}, {"p": np.array([1.0])}, state, lr=0.001)
    expected = -0.001 / (1.0 + 1e-8)
    assert abs(float(p.data[0]) - expected) < 1e-12


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        adam_step({"p": p}, {"p": np.zeros(4)}, OptimizerState(), lr=0.1)


def test_adam_converges_on_absolute_value():
    target = 3.0
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState()
    for step in range(2000):
        g = np.sign(p.data - target)
        adam_step({"p": p}, {"p": g}, state, lr=onecycle_lr(step, 2000, 0.05))
    assert abs(float(p.data[0]) - target) < 0.01


def test_onecycle_schedule_shape():
    total = 400
    max_lr = 1e-3
    trace = [onecycle_lr(s, total, max_lr) for s in range(total)]
    peak = round(0.05 * total)
    assert trace[0] == pytest.approx(max_lr / 25)
    assert trace[peak] == pytest.approx(max_lr)
    assert int(np.argmax(trace)) == peak
    assert trace[-1] == pytest.approx(max_lr / 1e4, rel=1e-6)
    # strictly increasing to the peak, decreasing after
    assert all(trace[i] < trace[i + 1] for i in range(peak))
    assert all(trace[i] > trace[i + 1] for i in range(peak, total - 1))


def test_onecycle_out_of_range():
    with pytest.raises(OutOfRange):
        onecycle_lr(-1, 100, 1e-3)
    with pytest.raises(OutOfRange):
        onecycle_lr(100, 100, 1e-3)


def test_onecycle_tiny_totals():
    assert onecycle_lr(0, 1, 1e-3) == 1e-3
    for total in (2, 3, 5):
        for s in range(total):
            assert onecycle_lr(s, total, 1e-3) > 0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    params = {
        "a.w": Tensor(rng.normal(size=(3, 4)).astype(np.float32),
                      requires_grad=True),
        "b": Tensor(rng.normal(size=5).astype(np.float32),
                    requires_grad=True),
    }
    meta = {"config": {"d": 4}, "vocab": {"ring_types": []}}
    save_checkpoint(tmp_path / "ck", params, meta)
    loaded, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["precision"] == "f32"
    assert manifest["config"] == {"d": 4}
    assert [e["name"] for e in manifest["params"]] == ["a.w", "b"]
    for name in params:
        np.testing.assert_array_equal(loaded[name].data, params[name].data)


def test_checkpoint_truncated_bin_rejected(tmp_path):
    params = {"w": Tensor(np.zeros((2, 2), dtype=np.float32),
                          requires_grad=True)}
    save_checkpoint(tmp_path / "ck", params, {})
    bin_path = tmp_path / "ck" / "params.bin"
    bin_path.write_bytes(bin_path.read_bytes()[:-4])
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "ck")


def test_sub_and_broadcast_add():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    b = Tensor(np.array([10.0, 20.0]), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(sub(add(a, b), a))
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads[b], [2.0, 2.0])
    np.testing.assert_allclose(grads[a], np.zeros((2, 2)))
