import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import check_op, numeric_grad, rel_error
from shmgan.autodiff import (AdamWState, AutodiffError, GeometryError, NonFiniteError, ShapeError,
                             Tensor, adamw_step, backward, debug_checks, grad, no_grad, ops)


# -- forward examples -------------------------------------------------------

@pytest.mark.parametrize("length,k,s,p,expected", [(1024, 4, 2, 1, 512), (64, 64, 2, 0, 1)])
def test_conv1d_output_length(length, k, s, p, expected):
    y = ops.conv1d(np.zeros((1, 1, length)), np.zeros((1, 1, k)), None, s, p)
    assert y.shape == (1, 1, expected)


@pytest.mark.parametrize("length,k,s,p,expected", [(1, 64, 2, 0, 64), (512, 4, 2, 1, 1024)])
def test_conv_transpose1d_output_length(length, k, s, p, expected):
    y = ops.conv_transpose1d(np.zeros((1, 1, length)), np.zeros((1, 1, k)), None, s, p)
    assert y.shape == (1, 1, expected)


def test_conv1d_zero_input_gives_bias():
    rng = np.random.default_rng(0)
    b = rng.normal(size=3)
    y = ops.conv1d(np.zeros((2, 4, 16)), rng.normal(size=(3, 4, 4)), b, 2, 1).data
    assert np.array_equal(y, np.broadcast_to(b[None, :, None], y.shape))


def test_conv_errors():
    with pytest.raises(ShapeError):
        ops.conv1d(np.zeros((1, 2, 8)), np.zeros((1, 3, 4)))
    with pytest.raises(GeometryError):
        ops.conv1d(np.zeros((1, 1, 3)), np.zeros((1, 1, 4)))
    with pytest.raises(ShapeError):
        ops.conv_transpose1d(np.zeros((1, 2, 8)), np.zeros((3, 1, 4)))
    with pytest.raises(ValueError):
        ops.conv1d(np.zeros((1, 1, 8)), np.zeros((1, 1, 4)), stride=0)


def test_batch_norm_train_mode_standardises():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=(8, 3, 32))
    y = ops.batch_norm1d(x, np.ones(3), np.zeros(3), training=True).data
    assert np.allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2)), 1.0, atol=1e-4)


def test_batch_norm_gamma_zero_gives_beta():
    x = np.random.default_rng(2).normal(size=(4, 2, 8))
    y = ops.batch_norm1d(x, np.zeros(2), np.array([0.5, -1.0])).data
    assert np.array_equal(y, np.broadcast_to(np.array([0.5, -1.0])[None, :, None], y.shape))


def test_batch_norm_constant_input_is_zero():
    y = ops.batch_norm1d(np.full((2, 1, 5), 7.0), np.ones(1), np.zeros(1)).data
    assert np.allclose(y, 0.0)


def test_batch_norm_running_stats_and_eval():
    rm, rv = np.zeros(2), np.ones(2)
    x = np.random.default_rng(3).normal(1.0, 2.0, size=(4, 2, 10))
    ops.batch_norm1d(x, np.ones(2), np.zeros(2), rm, rv, training=True, momentum=0.1)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))
    y = ops.batch_norm1d(x, np.ones(2), np.zeros(2), rm, rv, training=False).data
    assert np.allclose(y, (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))
    with pytest.raises(ShapeError):
        ops.batch_norm1d(x, np.ones(3), np.zeros(3))


def test_instance_norm_examples():
    rng = np.random.default_rng(4)
    row = rng.normal(size=16)
    x = np.stack([row, row + 5.0])[None]          # [1, 2, 16]: shifted copies
    y = ops.instance_norm1d(x, np.ones(2), np.zeros(2)).data
    assert np.allclose(y.mean(axis=2), 0.0, atol=1e-12)
    assert np.allclose(y[0, 0], y[0, 1])
    y2 = ops.instance_norm1d(x, np.full(2, 2.0), np.full(2, 3.0)).data
    assert np.allclose(y2.mean(axis=2), 3.0)


def test_activation_examples():
    assert ops.relu(Tensor([-2.0, 3.0])).data.tolist() == [0.0, 3.0]
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert ops.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4)
    with pytest.raises(ValueError):
        ops.leaky_relu(Tensor(1.0), 1.5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_activation_ranges(values):
    x = Tensor(values)
    s = ops.sigmoid(x).data
    t = ops.tanh(x).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))
    assert np.all(ops.relu(x).data >= 0)
    # strict bounds hold away from float saturation
    small = np.abs(np.asarray(values)) < 30
    assert np.all((s[small] > 0) & (s[small] < 1))
    small = np.abs(np.asarray(values)) < 15
    assert np.all(np.abs(t[small]) < 1)


def test_dropout_semantics():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=100))
    assert ops.dropout(x, 0.0, True, rng) is x
    assert np.array_equal(ops.dropout(x, 0.7, False, rng).data, x.data)
    ones = Tensor(np.ones(100_000))
    out = ops.dropout(ones, 0.7, True, np.random.default_rng(6)).data
    assert 0.98 <= out.mean() <= 1.02
    kept = out[out != 0.0]
    assert np.allclose(kept, 1.0 / 0.3, rtol=1e-14)
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, True, rng)


def test_dropout_mask_is_deterministic():
    x = Tensor(np.ones(50))
    a = ops.dropout(x, 0.5, True, np.random.default_rng(9)).data
    b = ops.dropout(x, 0.5, True, np.random.default_rng(9)).data
    assert np.array_equal(a, b)


def test_reductions():
    assert ops.mean(Tensor([1.0, 2.0, 3.0])).item() == 2.0
    assert ops.sq_l2_norm(Tensor([3.0, 4.0])).item() == 25.0
    assert ops.reduce(Tensor(np.ones((2, 3))), "sum", axis=1).data.tolist() == [3.0, 3.0]
    with pytest.raises(ValueError):
        ops.sum(Tensor(np.ones((0, 3))), axis=0)


def test_debug_checks_catch_non_finite():
    with debug_checks(True):
        with pytest.raises(NonFiniteError):
            ops.log(Tensor([0.0]))
    ops.log(Tensor([1.0]))


def test_tensor_csv_dump(tmp_path):
    t = Tensor(np.arange(6.0).reshape(2, 3))
    t.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "2,3"
    assert [float(v) for v in lines[1].split(",")] == list(range(6))


# -- backward ---------------------------------------------------------------

def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    assert backward(x * x)[x].item() == 6.0


def test_double_backward_cubic():
    # g(x) = x^3: g' = 3x^2 = 12 at x=2; f = (g')^2 = 144; df/dx = 2*12*6x = 288
    x = Tensor(2.0, requires_grad=True)
    gx = grad(x * x * x, [x], create_graph=True)[x]
    f = ops.sq_l2_norm(gx)
    assert gx.item() == 12.0
    assert f.item() == 144.0
    analytic = grad(f, [x])[x].item()
    assert analytic == pytest.approx(288.0, rel=1e-12)

    def fd(v):
        h = 1e-5
        return ((3 * (v + h) ** 2) ** 2 - (3 * (v - h) ** 2) ** 2) / (2 * h)

    assert analytic == pytest.approx(fd(2.0), rel=1e-8)


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(AutodiffError):
        backward(x * 2.0)
    with pytest.raises(AutodiffError):
        backward(Tensor(1.0))
    with no_grad():
        y = ops.sum(x * 2.0)
    with pytest.raises(AutodiffError):
        backward(y)


def test_backward_replay_is_deterministic():
    rng = np.random.default_rng(7)
    w = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 2, 16)))
    loss = ops.sum(ops.tanh(ops.conv1d(x, w, None, 2, 1)))
    g1 = backward(loss)[w].data
    g2 = backward(loss)[w].data
    assert np.array_equal(g1, g2)


def test_unused_input_gets_zero_grad():
    a = Tensor(1.0, requires_grad=True)
    b = Tensor(2.0, requires_grad=True)
    g = grad(a * 3.0, [a, b])
    assert g[b].item() == 0.0


# -- finite-difference gradient suite ---------------------------------------

def _conv_case(rng):
    b, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k, s, p = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(0, 3))
    length = int(rng.integers(k, 12))
    return b, cin, cout, k, s, p, length


def _op_cases():
    """(name, builder) pairs; builder(rng) -> (op, arrays)."""
    def conv(rng):
        b, cin, cout, k, s, p, length = _conv_case(rng)
        return (lambda x, w, bias: ops.conv1d(x, w, bias, s, p),
                [rng.normal(size=(b, cin, length)), rng.normal(size=(cout, cin, k)), rng.normal(size=cout)])

    def convt(rng):
        b, cin, cout, k, s, p, length = _conv_case(rng)
        p = min(p, (k - 1) // 2 + (length - 1) * s // 2)
        return (lambda x, w, bias: ops.conv_transpose1d(x, w, bias, s, p),
                [rng.normal(size=(b, cin, length)), rng.normal(size=(cin, cout, k)), rng.normal(size=cout)])

    def bn(rng):
        c = int(rng.integers(1, 4))
        return (lambda x, g, b: ops.batch_norm1d(x, g, b, training=True),
                [rng.normal(size=(3, c, 5)), rng.normal(size=c), rng.normal(size=c)])

    def inorm(rng):
        c = int(rng.integers(1, 4))
        return (lambda x, g, b: ops.instance_norm1d(x, g, b),
                [rng.normal(size=(2, c, 6)), rng.normal(size=c), rng.normal(size=c)])

    def away_from_kink(rng, shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 1e-3, 0.5, x)

    def elementwise(fn):
        return lambda rng: (fn, [away_from_kink(rng, (3, 4))])

    def dropout(rng):
        seed = int(rng.integers(1 << 30))
        return (lambda x: ops.dropout(x, 0.5, True, np.random.default_rng(seed)), [rng.normal(size=(4, 5))])

    def reductions(rng):
        return (lambda x: ops.add(ops.mean(x, axis=1), ops.sum(x, axis=1)), [rng.normal(size=(3, 4))])

    def sqnorm(rng):
        return (ops.sq_l2_norm, [rng.normal(size=(3, 4))])

    def l2(rng):
        return (lambda x: ops.l2_norm(x, axis=(1, 2)), [rng.normal(size=(2, 3, 4))])

    def arith(rng):
        return (lambda a, b: ops.div(ops.mul(a, ops.exp(b)), ops.add(ops.mul(b, b), 1.0)),
                [rng.normal(size=(3, 1)), rng.normal(size=(1, 4))])

    def logsqrt(rng):
        return (lambda a: ops.add(ops.log(a), ops.sqrt(a)), [rng.uniform(0.5, 2.0, size=(5,))])

    return [
        ("conv1d", conv), ("conv_transpose1d", convt), ("batch_norm1d", bn),
        ("instance_norm1d", inorm), ("relu", elementwise(ops.relu)),
        ("leaky_relu", elementwise(lambda x: ops.leaky_relu(x, 0.2))),
        ("tanh", elementwise(ops.tanh)), ("sigmoid", elementwise(ops.sigmoid)),
        ("dropout", dropout), ("mean_sum", reductions), ("sq_l2_norm", sqnorm),
        ("l2_norm", l2), ("arithmetic", arith), ("log_sqrt", logsqrt),
    ]


GRAD_CASES = _op_cases()


@pytest.mark.parametrize("name,builder", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
def test_gradient_matches_finite_differences(name, builder):
    rng = np.random.default_rng(abs(hash(name)) % (1 << 31))
    worst = 0.0
    for _ in range(20):
        op, arrays = builder(rng)
        worst = max(worst, check_op(op, arrays, rng))
    assert worst < 1e-4, f"{name}: worst relative error {worst:.2e}"


def test_second_order_through_conv_stack():
    # d/dtheta of ||d f(x; theta)/dx||^2 for f = sum(conv(leaky(conv(x))))
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(2, 1, 8))
    w1, w2 = rng.normal(size=(3, 1, 4)), rng.normal(size=(1, 3, 4))

    def penalty(w1a, w2a, create=False):
        x = Tensor(x0, requires_grad=True)
        w1t, w2t = Tensor(w1a, requires_grad=True), Tensor(w2a, requires_grad=True)
        h = ops.instance_norm1d(ops.conv1d(x, w1t, None, 2, 1), np.ones(3), np.zeros(3))
        out = ops.sum(ops.conv1d(ops.leaky_relu(h), w2t, None, 2, 1))
        gx = grad(out, [x], create_graph=True)[x]
        pen = ops.sq_l2_norm(gx)
        return pen, (w1t, w2t)

    pen, (w1t, w2t) = penalty(w1, w2)
    g = grad(pen, [w1t, w2t])
    num1 = numeric_grad(lambda a, b: penalty(a, b)[0].item(), [w1.copy(), w2.copy()], 0)
    num2 = numeric_grad(lambda a, b: penalty(a, b)[0].item(), [w1.copy(), w2.copy()], 1)
    assert rel_error(g[w1t].data, num1) < 1e-3
    assert rel_error(g[w2t].data, num2) < 1e-3


# -- adjointness ------------------------------------------------------------

def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(12)
    for _ in range(60):
        b, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
        k, s, p = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
        lout = int(rng.integers(1, 10))
        # choose L so the transpose length equals L exactly
        length = (lout - 1) * s - 2 * p + k
        if length < 1 or length + 2 * p < k:
            continue
        w = rng.normal(size=(cout, cin, k))
        x = rng.normal(size=(b, cin, length))
        y = rng.normal(size=(b, cout, lout))
        lhs = np.sum(ops.conv1d(x, w, None, s, p).data * y)
        rhs = np.sum(x * ops.conv_transpose1d(y, w, None, s, p).data)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


# -- AdamW ------------------------------------------------------------------

def test_adamw_fixed_point():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    st_ = AdamWState(lr=0.1, weight_decay=0.0)
    adamw_step([p], [np.zeros(2)], st_)
    assert p.data.tolist() == [1.5, -2.0]
    assert st_.step_count == 1


def test_adamw_single_step_closed_form():
    lr, b1, b2, eps, wd = 0.01, 0.9, 0.999, 1e-8, 0.1
    theta, g = 0.7, -0.3
    p = Tensor(theta, requires_grad=True)
    adamw_step([p], [np.array(g)], AdamWState(lr, b1, b2, eps, wd))
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    mhat, vhat = m / (1 - b1), v / (1 - b2)
    expected = theta * (1 - lr * wd) - lr * mhat / (np.sqrt(vhat) + eps)
    assert p.item() == pytest.approx(expected, abs=1e-12)


def test_adamw_decoupled_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    adamw_step([p], [np.zeros(1)], AdamWState(lr=0.1, weight_decay=0.5))
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), abs=1e-15)


def test_adamw_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        adamw_step([p], [np.zeros(2)], AdamWState())


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10))
def test_adamw_step_count_increases(n):
    p = Tensor(np.ones(2), requires_grad=True)
    state = AdamWState(lr=1e-3)
    for i in range(n):
        adamw_step([p], [np.ones(2)], state)
        assert state.step_count == i + 1
    assert state.first_moment[0].shape == p.data.shape
