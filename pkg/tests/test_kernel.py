"""Numeric kernel: forward values, sentinel masking, and gradients vs the
finite-difference oracle."""

import concurrent.futures

import numpy as np
import pytest

from treemem import NumericalError
from treemem import kernel as K
from helpers import check_gradients, rel_error


def test_affine_known_value():
    w = K.Var(np.array([[1.0, 1.0], [0.0, 2.0]]))
    x = K.Var(np.array([1.0, 2.0]))
    assert np.array_equal(K.matmul(w, x).data, np.array([3.0, 4.0]))


def test_identity_affine_is_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal(5)
        y = K.matmul(K.Var(np.eye(5)), K.Var(x))
        assert np.array_equal(y.data, x)


def test_softmax_known_value():
    y = K.softmax(K.Var(np.array([np.log(2.0), 0.0])))
    assert np.allclose(y.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_softmax_invariants_seeded():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        x = rng.standard_normal(n) * 3.0
        y = K.softmax(K.Var(x)).data
        assert abs(y.sum() - 1.0) <= 1e-12
        assert (y >= 0.0).all()
        # shift invariance
        y2 = K.softmax(K.Var(x + 17.5)).data
        assert np.allclose(y, y2, atol=1e-12)
        # permutation equivariance
        perm = rng.permutation(n)
        y3 = K.softmax(K.Var(x[perm])).data
        assert np.allclose(y[perm], y3, atol=1e-12)


def test_softmax_sentinel_exact_zero():
    x = np.array([1.0, K.MASK_SENTINEL, -2.0, K.MASK_SENTINEL])
    y = K.softmax(K.Var(x)).data
    assert y[1] == 0.0 and y[3] == 0.0
    assert abs(y.sum() - 1.0) <= 1e-12
    # the surviving entries match a softmax over just them
    y_ref = K.softmax(K.Var(x[[0, 2]])).data
    assert np.allclose(y[[0, 2]], y_ref, atol=1e-15)


def test_softmax_all_masked_raises():
    with pytest.raises(NumericalError):
        K.softmax(K.Var(np.full(4, K.MASK_SENTINEL)))


def test_softmax_empty_raises():
    with pytest.raises(ValueError):
        K.softmax(K.Var(np.zeros(0)))


def test_nonlinearity_known_values():
    assert K.sigmoid(K.Var(np.zeros(3))).data == pytest.approx([0.5] * 3)
    assert K.tanh(K.Var(np.zeros(2))).data == pytest.approx([0.0, 0.0])
    assert np.array_equal(K.relu(K.Var(np.array([-1.0, 2.0]))).data, [0.0, 2.0])


def test_nonfinite_input_raises():
    with pytest.raises(NumericalError):
        K.sigmoid(K.Var(np.array([np.nan, 0.0])))
    with pytest.raises(NumericalError):
        K.tanh(K.Var(np.array([np.inf])))


def test_matmul_shape_mismatch_message():
    with pytest.raises(ValueError, match=r"\(2, 3\)"):
        K.matmul(K.Var(np.zeros((2, 3))), K.Var(np.zeros((4,))))


def test_affine_linearity():
    rng = np.random.default_rng(3)
    for _ in range(25):
        w = rng.standard_normal((4, 6))
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        a, b = rng.standard_normal(2)
        lhs = K.matmul(K.Var(w), K.Var(a * x + b * y)).data
        rhs = a * K.matmul(K.Var(w), K.Var(x)).data + b * K.matmul(K.Var(w), K.Var(y)).data
        assert rel_error(lhs, rhs) <= 1e-10


def test_finite_difference_known_gradient():
    grad = K.finite_difference_gradient(
        lambda t: float(3.0 * t[0] ** 2 + t[1]), np.array([1.0, 5.0])
    )
    assert grad == pytest.approx([6.0, 1.0], abs=1e-6)


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        K.finite_difference_gradient(lambda t: 0.0, np.zeros(2), h=0.0)


def test_finite_difference_rejects_nonfinite():
    with pytest.raises(NumericalError, match="coordinate 1"):
        K.finite_difference_gradient(
            lambda t: float("nan") if t[1] != 5.0 else 0.0, np.array([0.0, 5.0])
        )


def test_backward_through_affine():
    with K.recording() as tape:
        w = K.Var(np.array([[1.0, 1.0], [0.0, 2.0]]))
        x = K.Var(np.array([1.0, 2.0]))
        y = K.matmul(w, x)
        loss = K.total(K.mul(y, y))
        tape.backward(loss)
    # d/dx sum((Wx)^2) = 2 W^T W x
    assert x.grad == pytest.approx([6.0, 22.0])


def _elementwise_cases():
    return [
        ("sigmoid", lambda p: K.total(K.sigmoid(p["x"]))),
        ("tanh", lambda p: K.total(K.tanh(p["x"]))),
        ("mul_self", lambda p: K.total(K.mul(p["x"], p["x"]))),
        ("softmax_pick", lambda p: K.total(K.mul(K.softmax(p["x"]), p["x"]))),
        ("neg_sub", lambda p: K.total(K.sub(-p["x"], K.mul(p["x"], 3.0)))),
    ]


@pytest.mark.parametrize("name,loss_fn", _elementwise_cases())
def test_elementwise_gradients(name, loss_fn):
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(20):
        check_gradients(loss_fn, {"x": rng.standard_normal(6)})


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(19)
    for _ in range(20):
        x = rng.standard_normal(6)
        x[np.abs(x) < 1e-2] = 0.5  # keep the oracle off the kink
        check_gradients(lambda p: K.total(K.relu(p["x"])), {"x": x})


def test_matmul_gradients_all_rank_cases():
    rng = np.random.default_rng(23)
    for _ in range(20):
        w = rng.standard_normal((3, 4))
        m = rng.standard_normal((4, 2))
        x = rng.standard_normal(4)
        r = rng.standard_normal(3)
        check_gradients(lambda p: K.total(K.matmul(p["w"], p["m"])), {"w": w, "m": m})
        check_gradients(lambda p: K.total(K.matmul(p["w"], p["x"])), {"w": w, "x": x})
        check_gradients(lambda p: K.total(K.matmul(p["r"], p["w"])), {"r": r, "w": w})


def test_outer_gradient():
    rng = np.random.default_rng(29)
    for _ in range(20):
        params = {"u": rng.standard_normal(3), "v": rng.standard_normal(5)}
        check_gradients(
            lambda p: K.total(K.mul(K.outer(p["u"], p["v"]), K.outer(p["u"], p["v"]))), params
        )


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(31)
    for _ in range(20):
        params = {
            "m": rng.standard_normal((3, 4)),
            "col": rng.standard_normal((3, 1)),
            "row": rng.standard_normal((1, 4)),
        }
        check_gradients(
            lambda p: K.total(K.mul(K.add(p["m"], p["col"]), p["row"])), params
        )


def test_shape_plumbing_gradients():
    rng = np.random.default_rng(37)
    for _ in range(15):
        params = {
            "a": rng.standard_normal(4),
            "b": rng.standard_normal(4),
            "m": rng.standard_normal((3, 4)),
            "v": rng.standard_normal(3),
        }

        def loss(p):
            packed = K.concat([p["a"], p["b"]])
            lo, hi = K.split(packed, 2)
            cols = K.stack_cols([p["v"], K.matmul(p["m"], K.mul(lo, hi))])
            wide = K.concat([cols, K.tile_cols(p["v"], 2)], axis=1)
            written = K.set_col(wide, 1, K.mul(p["v"], 2.0))
            return K.total(K.mul(written, written))

        check_gradients(loss, params)


def test_fill_and_total_gradients():
    rng = np.random.default_rng(41)
    for _ in range(15):
        params = {"x": rng.standard_normal(5), "y": rng.standard_normal(4)}

        def loss(p):
            s = K.total(p["x"])
            v = K.fill(s, 4)
            return K.total(K.mul(v, p["y"]))

        check_gradients(loss, params)


def test_mask_fill_gradient_and_value():
    keep = np.array([True, False, True, False])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    out = K.mask_fill(K.Var(x), keep, -7.0)
    assert np.array_equal(out.data, [1.0, -7.0, 3.0, -7.0])
    rng = np.random.default_rng(43)
    for _ in range(10):
        check_gradients(
            lambda p: K.total(K.mul(K.mask_fill(p["x"], keep, 0.0), p["x"])),
            {"x": rng.standard_normal(4)},
        )


def test_reshape_gradient():
    rng = np.random.default_rng(47)
    check_gradients(
        lambda p: K.total(K.mul(K.reshape(p["x"], (2, 3)), K.reshape(p["x"], (2, 3)))),
        {"x": rng.standard_normal(6)},
    )


def test_masked_softmax_gradient_skips_masked_entries():
    rng = np.random.default_rng(53)
    keep = np.array([True, True, False, True])
    for _ in range(10):
        x = rng.standard_normal(4)

        def loss(p):
            masked = K.mask_fill(p["x"], keep, K.MASK_SENTINEL)
            return K.total(K.mul(K.softmax(masked), p["w"]))

        check_gradients(loss, {"x": x, "w": rng.standard_normal(4)})


def test_grad_accumulates_over_reuse():
    with K.recording() as tape:
        x = K.Var(np.array([2.0]))
        y = K.add(K.mul(x, x), K.mul(x, 3.0))  # x^2 + 3x
        tape.backward(K.total(y))
    assert x.grad == pytest.approx([7.0])


def test_no_tape_records_nothing():
    x = K.mul(K.Var(np.ones(3)), 2.0)
    assert isinstance(x, K.Var) and x.vjp is None
    with K.recording() as tape:
        K.mul(K.Var(np.ones(3)), 2.0)
        n_inside = len(tape.nodes)
    assert n_inside == 1
    K.mul(K.Var(np.ones(3)), 2.0)  # after exit: nothing appended
    assert len(tape.nodes) == n_inside


def test_constants_do_not_get_gradients():
    const = np.ones(3)
    with K.recording() as tape:
        x = K.Var(np.arange(3.0))
        y = K.mul(x, const)
        tape.backward(K.total(y))
    assert x.grad is not None


def test_tapes_are_thread_local():
    def job(seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((4, 4))
        x = rng.standard_normal(4)
        with K.recording() as tape:
            xv = K.Var(x)
            loss = K.total(K.tanh(K.matmul(K.Var(w), xv)))
            tape.backward(loss)
        expected = w.T @ (1.0 - np.tanh(w @ x) ** 2)
        return rel_error(xv.grad, expected)

    with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
        errors = list(pool.map(job, range(8)))
    assert max(errors) <= 1e-10
