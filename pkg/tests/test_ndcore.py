import numpy as np
import pytest

from mopn.errors import EmptySupportError, ShapeError, TapeError
from mopn.ndcore import (
    ParamStore,
    Tape,
    adam_step,
    backward,
    categorical_sample,
    masked_softmax,
    xavier_init,
)


def store_with(rng, **shapes):
    s = ParamStore()
    for name, shape in shapes.items():
        s.add(name, rng.uniform(-1, 1, shape))
    return s


def test_conv_identity_and_hand_product():
    t = Tape(record=False)
    x = np.array([[0.5, -1.0, 2.0], [3.0, 0.0, 1.0]])
    out = t.conv1d_k1(t.constant(x), t.constant(np.eye(3)), t.constant(np.zeros(3)))
    np.testing.assert_array_equal(out.value, x)

    w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = t.conv1d_k1(t.constant([[1.0, -1.0]]), t.constant(w), t.constant([0.5, 0.0, -0.5]))
    np.testing.assert_array_equal(out.value, [[-2.5, -3.0, -3.5]])


def test_conv_shape_errors():
    t = Tape()
    with pytest.raises(ShapeError):
        t.conv1d_k1(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 4))))
    with pytest.raises(ShapeError):
        t.conv1d_k1(t.constant(np.ones((2, 3))), t.constant(np.ones((3, 4))), t.constant(np.ones(3)))


def test_conv_weight_gradient_is_column_sums(rng, fd_check):
    x = rng.uniform(-1, 1, (5, 3))
    s = store_with(rng, W=(3, 4), b=(4,))

    def loss(tape):
        return tape.sum(tape.conv1d_k1(tape.constant(x), tape.param(s, "W"), tape.param(s, "b")))

    t = Tape()
    backward(t, loss(t))
    np.testing.assert_allclose(s.grads["W"], np.repeat(x.sum(axis=0)[:, None], 4, axis=1), rtol=1e-14)
    np.testing.assert_array_equal(s.grads["b"], np.full(4, 5.0))
    assert fd_check(s, lambda: float(loss(Tape(False)).value), rel=1e-6) == []


def test_gru_closed_forms():
    t = Tape(record=False)
    h = 3
    z = lambda *shape: t.constant(np.zeros(shape))
    prev = t.constant(np.array([0.4, -2.0, 1.0]))
    out = t.gru_cell(z(2), prev, z(2, 3 * h), z(h, 3 * h), z(3 * h))
    np.testing.assert_array_equal(out.value, 0.5 * prev.value)
    out = t.gru_cell(z(2), z(h), z(2, 3 * h), z(h, 3 * h), z(3 * h))
    np.testing.assert_array_equal(out.value, np.zeros(h))


def test_gru_matches_reference_equations(rng):
    x, h = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 3)
    w, u, b = rng.uniform(-1, 1, (2, 9)), rng.uniform(-1, 1, (3, 9)), rng.uniform(-1, 1, 9)
    sig = lambda v: 1 / (1 + np.exp(-v))
    zg = sig(x @ w[:, :3] + h @ u[:, :3] + b[:3])
    rg = sig(x @ w[:, 3:6] + h @ u[:, 3:6] + b[3:6])
    cand = np.tanh(x @ w[:, 6:] + (rg * h) @ u[:, 6:] + b[6:])
    expect = (1 - zg) * h + zg * cand
    t = Tape(False)
    out = t.gru_cell(*(t.constant(a) for a in (x, h, w, u, b)))
    np.testing.assert_allclose(out.value, expect, rtol=1e-14)


def test_gru_gradients(rng, fd_check):
    s = store_with(rng, x=(2,), h=(3,), W=(2, 9), U=(3, 9), b=(9,))
    c = rng.uniform(-1, 1, 3)

    def loss(tape):
        out = tape.gru_cell(*tape.params(s, "x", "h", "W", "U", "b"))
        return tape.dot_const(out, c)

    t = Tape()
    backward(t, loss(t))
    assert fd_check(s, lambda: float(loss(Tape(False)).value), rel=1e-6) == []


def test_masked_softmax_examples():
    np.testing.assert_allclose(masked_softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_array_equal(masked_softmax([5.0, 1.0], [False, True]), [1.0, 0.0])
    np.testing.assert_array_equal(masked_softmax([1000.0, 1000.0]), [0.5, 0.5])
    with pytest.raises(EmptySupportError):
        masked_softmax([1.0, 2.0], [True, True])


def test_masked_softmax_support(rng):
    for _ in range(100):
        n = rng.integers(2, 12)
        logits = rng.normal(0, 30, n)
        mask = rng.random(n) < 0.5
        mask[rng.integers(n)] = False
        p = masked_softmax(logits, mask)
        assert np.all(p[mask] == 0.0)
        assert np.all(p[~mask] > 0.0) or np.any(np.abs(logits[~mask] - logits[~mask].max()) > 700)
        assert abs(p.sum() - 1) <= 1e-12


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "relu", "square", "one_minus", "softmax"])
def test_elementwise_gradients(op, rng, fd_check):
    s = store_with(rng, x=(3, 4))
    c = rng.uniform(-1, 1, (3, 4))

    def loss(tape):
        return tape.dot_const(getattr(tape, op)(tape.param(s, "x")), c)

    t = Tape()
    backward(t, loss(t))
    assert fd_check(s, lambda: float(loss(Tape(False)).value)) == []


def test_structural_gradients(rng, fd_check):
    s = store_with(rng, e=(2, 4, 3), a=(2, 4), w=(3, 5), v=(5,), m=(5, 3), q=(2, 3))
    mask = np.array([[False, True, False, False], [True, False, False, True]])
    c = rng.uniform(-1, 1, (2, 4))

    def loss(tape):
        e, a, w, v, m, q = tape.params(s, "e", "a", "w", "v", "m", "q")
        keys = tape.matmul(e, w)                                   # (2,4,5)
        qry = tape.unsqueeze(tape.matmul_t(q, m), -2)              # (2,1,5)
        score = tape.inner(tape.tanh(tape.add(keys, qry)), v)      # (2,4)
        ctx = tape.weighted_rows(tape.softmax(tape.mul(a, score)), e)  # (2,3)
        logp = tape.masked_log_softmax(score, mask)
        picked = tape.pick(logp, np.array([0, 2]))
        rows = tape.take_rows(e, np.array([3, 1]))
        both = tape.concat([tape.cols(rows, 0, 2), ctx], axis=-1)
        return tape.add(tape.add(tape.sum(picked), tape.mean(tape.square(both))),
                        tape.dot_const(tape.sub(a, tape.scale(score, 0.3)), c))

    t = Tape()
    backward(t, loss(t))
    assert fd_check(s, lambda: float(loss(Tape(False)).value)) == []


def test_backward_param_sum_gives_ones(rng):
    s = store_with(rng, p=(3, 2))
    t = Tape()
    backward(t, t.sum(t.param(s, "p")))
    np.testing.assert_array_equal(s.grads["p"], np.ones((3, 2)))


def test_conv_tanh_sum_hand_derivative():
    s = ParamStore()
    s.add("W", [[0.5, -0.25], [0.1, 0.2]])
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    t = Tape()
    backward(t, t.sum(t.tanh(t.conv1d_k1(t.constant(x), t.param(s, "W")))))
    pre = x @ s["W"]
    np.testing.assert_allclose(s.grads["W"], x.T @ (1 - np.tanh(pre) ** 2), rtol=1e-14)


def test_backward_errors(rng):
    s = store_with(rng, p=(2,))
    t1, t2 = Tape(), Tape()
    loss = t1.sum(t1.param(s, "p"))
    with pytest.raises(TapeError):
        backward(t2, loss)
    with pytest.raises(TapeError):
        backward(t1, t1.param(s, "p"))


def test_reverse_sweep_order():
    s = ParamStore()
    s.add("p", [2.0])
    t = Tape()
    seen = []
    x = t.param(s, "p")
    a = t.square(x)
    b = t.tanh(a)
    loss = t.sum(b)
    for i, back in enumerate(t._backs):
        if back is not None:
            t._backs[i] = (lambda f, k: (lambda g: (seen.append(k), f(g))[1]))(back, i)
    backward(t, loss)
    assert seen == sorted(seen, reverse=True) and len(seen) == 3


def test_adam_zero_gradient_keeps_params(rng):
    s = store_with(rng, p=(4,))
    before = s["p"].copy()
    adam_step(s, lr=1e-3)
    np.testing.assert_array_equal(s["p"], before)


def test_adam_first_step_moves_by_lr():
    s = ParamStore()
    s.add("p", [1.0, -1.0])
    s.grads["p"][:] = [3.0, -0.2]
    adam_step(s, lr=1e-3)
    np.testing.assert_allclose(s["p"], [1.0 - 1e-3, -1.0 + 1e-3], rtol=0, atol=1e-10)
    assert np.all(s.grads["p"] == 0)


def test_adam_two_steps_hand_recursion():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.5
    s = ParamStore()
    s.add("p", [0.0])
    m = v = p = 0.0
    for t in (1, 2):
        s.grads["p"][:] = g
        adam_step(s, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert s["p"][0] == pytest.approx(p, rel=1e-14)
    assert p == pytest.approx(-0.02, rel=1e-6)


def test_xavier_bounds_determinism_and_variance():
    w = xavier_init((4, 2), seed=1)
    assert np.all(np.abs(w) <= 1.0)
    np.testing.assert_array_equal(w, xavier_init((4, 2), seed=1))
    big = xavier_init((400, 250), seed=2)  # 10^5 draws
    assert big.var() == pytest.approx(2 / 650, rel=0.05)


def test_categorical_sample_respects_support(rng):
    probs = np.array([[0.0, 0.5, 0.0, 0.5], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    for _ in range(200):
        idx = categorical_sample(probs, rng)
        assert np.all(probs[np.arange(3), idx] > 0)
    counts = np.bincount([categorical_sample(probs[:1], rng)[0] for _ in range(4000)], minlength=4)
    assert abs(counts[1] / 4000 - 0.5) < 0.03
