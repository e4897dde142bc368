import math

import numpy as np
import pytest

from mopn.actor import ActorModel, attend, decode_step, encode, greedy_tours, rollout, rollout_batch
from mopn.errors import EmptySupportError, ShapeError
from mopn.instances import build_leaf, generate_random_rins
from mopn.ndcore import ParamStore, Tape, backward


def random_model(kind="T2O2", l=8, seed=0, scale=1.0):
    model = ActorModel.for_kind(kind, l, seed=seed)
    for name in model.store.names():
        model.store.set(name, model.store[name] * scale)
    return model


def test_param_shapes_for_default_embedding():
    m = ActorModel.for_kind("T1O2", seed=0)
    e = encode(Tape(False), m, build_leaf(generate_random_rins("T1O2", 40, 0), [0.5, 0.5]).matrix)
    assert e.value.shape == (40, 128)
    assert m.param_shapes()["att.W_b"] == (128, 256)
    assert np.all(m.store["enc.b"] == 0) and np.all(m.store["dec.b"] == 0)


def test_encode_width_mismatch():
    m = ActorModel.for_kind("T2O3", 4, seed=0)
    with pytest.raises(ShapeError):
        encode(Tape(False), m, np.zeros((5, 6)))


def test_encode_is_row_equivariant_and_zero_for_zero_params(rng):
    m = random_model()
    x = rng.random((7, 6))
    perm = rng.permutation(7)
    e = encode(Tape(False), m, x).value
    np.testing.assert_array_equal(encode(Tape(False), m, x[perm]).value, e[perm])
    zero = ActorModel(6, 8)
    assert np.all(encode(Tape(False), zero, x).value == 0)


def test_decode_step_zero_and_determinism(rng):
    zero = ActorModel(6, 4)
    assert np.all(decode_step(Tape(False), zero, np.zeros(4), np.zeros(4)).value == 0)
    m = random_model(l=4)
    inputs = rng.random((3, 4))
    runs = []
    for _ in range(2):
        h = np.zeros(4)
        traj = []
        for x in inputs:
            h = decode_step(Tape(False), m, x, h).value
            traj.append(h)
        runs.append(np.array(traj))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_zero_params_give_uniform_over_unvisited():
    m = ActorModel(6, 4)
    t = Tape(False)
    e = t.constant(np.zeros((5, 4)))
    p = attend(t, m, e, t.constant(np.zeros(4)), np.array([False, True, False, True, False])).value
    np.testing.assert_allclose(p, [1 / 3, 0, 1 / 3, 0, 1 / 3], rtol=1e-15)


def test_two_cities_one_visited():
    m = random_model()
    t = Tape(False)
    e = encode(t, m, np.random.default_rng(1).random((2, 6)))
    p = attend(t, m, e, t.constant(np.ones(8) * 0.1), np.array([True, False])).value
    np.testing.assert_array_equal(p, [0.0, 1.0])


def test_attend_empty_support():
    m = random_model()
    t = Tape(False)
    with pytest.raises(EmptySupportError):
        attend(t, m, t.constant(np.zeros((3, 8))), t.constant(np.zeros(8)), np.ones(3, bool))


def test_hand_sized_attention_matches_loop_evaluation():
    # n=3, l=2, explicit parameters; oracle evaluates every equation with scalar loops
    store = ParamStore()
    store.add("enc.W", np.zeros((6, 2)))
    store.add("enc.b", np.zeros(2))
    store.add("dec.W", np.zeros((2, 6)))
    store.add("dec.U", np.zeros((2, 6)))
    store.add("dec.b", np.zeros(6))
    W_a = np.array([[0.5, -0.3, 0.2, 0.7], [0.1, 0.4, -0.6, 0.3]])
    v_a = np.array([1.5, -0.8])
    W_b = np.array([[-0.2, 0.9, 0.4, -0.5], [0.6, 0.2, 0.3, 0.8]])
    v_b = np.array([0.7, 1.1])
    store.add("att.W_a", W_a)
    store.add("att.v_a", v_a)
    store.add("att.W_b", W_b)
    store.add("att.v_b", v_b)
    m = ActorModel(6, 2, store)
    e = np.array([[0.3, -0.4], [1.0, 0.2], [-0.5, 0.8]])
    d = np.array([0.25, -0.6])
    visited = np.array([False, True, False])

    def score(W, v, a, b):
        cat = [a[0], a[1], b[0], b[1]]
        z = [math.tanh(sum(W[r][c] * cat[c] for c in range(4))) for r in range(2)]
        return sum(v[r] * z[r] for r in range(2))

    u = [score(W_a, v_a, e[i], d) for i in range(3)]
    den = sum(math.exp(x) for x in u)
    a = [math.exp(x) / den for x in u]
    ctx = [sum(a[i] * e[i][k] for i in range(3)) for k in range(2)]
    ut = [score(W_b, v_b, e[i], ctx) for i in range(3)]
    den = sum(math.exp(ut[i]) for i in range(3) if not visited[i])
    expect = [0.0 if visited[i] else math.exp(ut[i]) / den for i in range(3)]

    t = Tape(False)
    got = attend(t, m, t.constant(e), t.constant(d), visited).value
    np.testing.assert_allclose(got, expect, rtol=1e-13, atol=0)
    assert got[1] == 0.0


def test_greedy_zero_params_is_identity_order():
    m = ActorModel(6, 8)
    leaf = build_leaf(generate_random_rins("T2O2", 7, 3), [0.3, 0.7])
    r = rollout(leaf, m, "greedy")
    np.testing.assert_array_equal(r.tour, np.arange(7))
    assert r.log_prob == pytest.approx(-math.log(math.factorial(7)), rel=1e-13)


def test_greedy_is_pure_and_ignores_rng():
    m = random_model(scale=3.0)
    leaf = build_leaf(generate_random_rins("T2O2", 9, 4), [0.5, 0.5])
    a = rollout(leaf, m, "greedy", rng=np.random.default_rng(1))
    b = rollout(leaf, m, "greedy", rng=np.random.default_rng(2))
    np.testing.assert_array_equal(a.tour, b.tour)
    assert a.log_prob == b.log_prob


@pytest.mark.parametrize("kind", ["T1O2", "T2O2", "T2O3"])
def test_sampled_tours_valid_and_log_prob_is_step_product(kind):
    m = random_model(kind, scale=2.0)
    rng = np.random.default_rng(5)
    r = generate_random_rins(kind, 6, 8)
    w = np.full(r.n_objectives, 1 / r.n_objectives)
    for _ in range(50):
        res = rollout(build_leaf(r, w), m, "sample", rng, keep_probs=True)
        assert sorted(res.tour.tolist()) == list(range(6))
        assert res.log_prob <= 0
        chosen = res.step_probs[np.arange(6), res.tour]
        assert math.exp(res.log_prob) == pytest.approx(float(np.prod(chosen)), rel=1e-12)


def test_relabeling_permutes_greedy_tour():
    m = random_model(scale=4.0, seed=3)
    r = generate_random_rins("T2O2", 8, 11)
    perm = np.random.default_rng(0).permutation(8)
    w = [0.4, 0.6]
    base = rollout(build_leaf(r, w), m).tour
    moved = rollout(build_leaf(r.relabel(perm), w), m).tour
    # new city j is old city perm[j]
    np.testing.assert_array_equal(perm[moved], base)


def test_batched_greedy_matches_single():
    m = random_model(scale=2.0)
    r = [generate_random_rins("T2O2", 6, s) for s in range(5)]
    x = np.stack([build_leaf(q, [0.2, 0.8]).matrix for q in r])
    batch = greedy_tours(m, x, chunk=2)
    for q, t in zip(r, batch):
        np.testing.assert_array_equal(rollout(build_leaf(q, [0.2, 0.8]), m).tour, t)


def test_forced_rollout_gradient_matches_finite_differences(fd_check):
    m = random_model("T2O2", l=4, scale=2.0, seed=9)
    x = build_leaf(generate_random_rins("T2O2", 5, 2), [0.7, 0.3]).matrix[None]
    tour, _, _ = rollout_batch(Tape(False), m, x, "sample", np.random.default_rng(0))

    def loss(tape):
        _, logp, _ = rollout_batch(tape, m, x, "forced", forced=tour)
        return tape.scale(tape.sum(logp), -1.0)

    t = Tape()
    backward(t, loss(t))
    assert fd_check(m.store, lambda: float(loss(Tape(False)).value)) == []
