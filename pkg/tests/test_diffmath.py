import numpy as np
import pytest

from dproxy import diffmath as dm
from dproxy.errors import NonFiniteDetected, ShapeMismatch


def finite_diff_check(build, params, h=1e-6, tol=1e-6):
    """Central finite differences against the analytic gradient of a scalar
    composed from the given leaf tensors."""
    loss = build()
    for p in params:
        p.grad = None
    dm.backward(loss)
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = build().item()
            flat[i] = orig - h
            fm = build().item()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            assert abs(fd - gf[i]) <= tol * max(1.0, abs(fd), abs(gf[i])), (
                f"entry {i}: fd {fd} vs analytic {gf[i]}"
            )


def rnd(rng, *shape):
    return dm.parameter(rng.standard_normal(shape), dtype=np.float64)


@pytest.mark.parametrize("ta,tb", [(False, False), (True, False), (False, True), (True, True)])
def test_matmul_backward(ta, tb):
    rng = np.random.default_rng(0)
    a = rnd(rng, 4, 5) if not ta else rnd(rng, 5, 4)
    b = rnd(rng, 5, 3) if not tb else rnd(rng, 3, 5)
    w = dm.constant(rng.standard_normal((4, 3)), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.mul(dm.matmul(a, b, ta=ta, tb=tb), w)), [a, b])


@pytest.mark.parametrize("shape_b", [(4, 5), (1, 5), (4, 1), (1, 1)])
def test_add_mul_broadcast_backward(shape_b):
    rng = np.random.default_rng(1)
    a = rnd(rng, 4, 5)
    b = rnd(rng, *shape_b)
    finite_diff_check(lambda: dm.sum_all(dm.add(a, b)), [a, b])
    finite_diff_check(lambda: dm.sum_all(dm.mul(a, b)), [a, b])
    finite_diff_check(lambda: dm.sum_all(dm.sub(a, b)), [a, b])


@pytest.mark.parametrize("op", [dm.exp, dm.sigmoid, dm.relu,
                                lambda x: dm.rowwise_softmax(x, 0.7),
                                lambda x: dm.layernorm(x, 1e-5),
                                dm.rowwise_l2_normalize,
                                dm.sum_all, dm.mean_all,
                                lambda x: dm.slice_cols(x, 1, 4),
                                lambda x: dm.smul(x, -2.5),
                                lambda x: dm.sadd(x, 1.5)])
def test_unary_backward(op):
    rng = np.random.default_rng(2)
    a = rnd(rng, 6, 5)
    w = dm.constant(rng.standard_normal(op(a).shape), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.mul(op(a), w)), [a])


def test_log_backward():
    rng = np.random.default_rng(3)
    a = dm.parameter(rng.uniform(0.5, 2.0, (4, 4)), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.log(a)), [a])


@pytest.mark.parametrize("op", [dm.rowwise_dot, dm.cosine_rows, dm.concat_cols])
def test_binary_backward(op):
    rng = np.random.default_rng(4)
    a = rnd(rng, 5, 4)
    b = rnd(rng, 5, 4)
    w = dm.constant(rng.standard_normal(op(a, b).shape), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.mul(op(a, b), w)), [a, b])


def test_take_rows_backward_with_repeats():
    rng = np.random.default_rng(5)
    a = rnd(rng, 6, 3)
    idx = np.array([0, 2, 2, 5])
    w = dm.constant(rng.standard_normal((4, 3)), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.mul(dm.take_rows(a, idx), w)), [a])


def test_masked_logsumexp_backward():
    rng = np.random.default_rng(6)
    a = rnd(rng, 5, 5)
    mask = ~np.eye(5, dtype=bool)
    finite_diff_check(lambda: dm.sum_all(dm.masked_logsumexp_rows(a, mask)), [a])


def test_scalar_mix_backward():
    rng = np.random.default_rng(7)
    lam = dm.parameter(rng.uniform(0.2, 0.8, (4, 1)), dtype=np.float64)
    a = rnd(rng, 4, 3)
    b = rnd(rng, 4, 3)
    w = dm.constant(rng.standard_normal((4, 3)), dtype=np.float64)
    finite_diff_check(lambda: dm.sum_all(dm.mul(dm.scalar_mix(lam, a, b), w)), [lam, a, b])


def test_softmax_uniform_on_equal_row():
    x = dm.constant(np.full((1, 5), 3.0), dtype=np.float64)
    out = dm.rowwise_softmax(x, 1.0)
    assert np.allclose(out.data, 0.2)


def test_sigmoid_at_zero():
    assert dm.sigmoid(dm.constant([[0.0]], dtype=np.float64)).item() == 0.5


def test_layernorm_closed_form():
    x = dm.constant([[1.0, 2.0, 3.0]], dtype=np.float64)
    out = dm.layernorm(x, 1e-5)
    assert np.allclose(out.data, [[-1.2247, 0.0, 1.2247]], atol=1e-3)


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(8)
    a = rnd(rng, 3, 3)
    loss = dm.sum_all(dm.sigmoid(a))
    dm.backward(loss)
    once = a.grad.copy()
    dm.backward(loss)
    assert np.allclose(a.grad, 2 * once)


def test_deterministic_bitwise():
    rng = np.random.default_rng(9)
    data = rng.standard_normal((8, 8))

    def compute():
        a = dm.constant(data, dtype=np.float64)
        out = dm.rowwise_softmax(dm.matmul(a, a, tb=True), 0.3)
        return dm.sum_all(dm.layernorm(out, 1e-5)).item()

    assert compute() == compute()


def test_shape_mismatch_raised():
    a = dm.constant(np.ones((2, 3)))
    b = dm.constant(np.ones((4, 5)))
    with pytest.raises(ShapeMismatch):
        dm.matmul(a, b)
    with pytest.raises(ShapeMismatch):
        dm.add(a, b)


def test_debug_nan_tripwire():
    dm.set_debug(True)
    try:
        a = dm.constant([[1000.0, -1000.0]], dtype=np.float64)
        with pytest.raises(NonFiniteDetected):
            dm.exp(a)
    finally:
        dm.set_debug(False)


def test_grad_check_sigmoid_analytic():
    store = dm.ParamStore()
    store.add("x", np.zeros((2, 2)), dtype=np.float64)

    report = dm.grad_check(lambda s: dm.sum_all(dm.sigmoid(s["x"])), store, step=1e-6)
    assert report.passed
    # analytic gradient of sigmoid at 0 is exactly 0.25 per entry
    store.zero_grad()
    dm.backward(dm.sum_all(dm.sigmoid(store["x"])))
    assert np.allclose(store["x"].grad, 0.25, atol=1e-12)
    assert report.max_rel_error <= 1e-8


def test_grad_check_flags_corrupt_backward():
    store = dm.ParamStore()
    store.add("good", np.array([[0.3, -0.2]]), dtype=np.float64)
    store.add("bad", np.array([[0.1, 0.7]]), dtype=np.float64)

    def f(s):
        fine = dm.sigmoid(s["good"])
        wrong = dm.custom_op(
            np.tanh(s["bad"].data),
            (s["bad"],),
            # deliberately wrong rule: claims d tanh = 1
            lambda g: dm.accumulate(s["bad"], g),
        )
        return dm.sum_all(dm.add(fine, wrong))

    report = dm.grad_check(f, store, step=1e-6, tolerance=1e-4)
    assert not report.passed
    assert report.worst_param == "bad"


def test_param_store_order_and_uniqueness():
    store = dm.ParamStore()
    store.add("b", np.ones((1, 1)))
    store.add("a", np.ones((1, 1)))
    assert store.names() == ["b", "a"]
    with pytest.raises(ShapeMismatch):
        store.add("a", np.ones((1, 1)))
