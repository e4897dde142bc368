"""The multi-objective pointer network: conv encoder, GRU decoder, two-stage attention.

Parameter names and shapes (``D`` = encoder input width, ``l`` = embedding size):

==========  ============  ==============================================
enc.W       (D, l)        kernel-size-1 conv over cities
enc.b       (l,)
dec.W       (l, 3l)       GRU input weights, blocks [update|reset|cand]
dec.U       (l, 3l)       GRU recurrent weights, same blocks
dec.b       (3l,)
att.W_a     (l, 2l)       glimpse projection of [e_i; d_t], no bias
att.v_a     (l,)
att.W_b     (l, 2l)       pointer projection of [e_i; b_t], no bias
att.v_b     (l,)
==========  ============  ==============================================

``W[e_i; d]`` is evaluated as ``W[:, :l] e_i + W[:, l:] d`` so the city half
is projected once per rollout instead of once per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .instances import LeafInstance, ProblemKind
from .ndcore import ParamStore, Tape, Var, categorical_sample, xavier_init

EMBED = 128


class ActorModel:
    def __init__(self, d_problem: int, l: int = EMBED, store: ParamStore | None = None,
                 kind: ProblemKind | None = None):
        self.d_problem = int(d_problem)
        self.l = int(l)
        self.kind = kind
        if store is None:
            store = ParamStore()
            for name, shape in self.param_shapes().items():
                store.add(name, np.zeros(shape))
        for name, shape in self.param_shapes().items():
            if store[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {store[name].shape}")
        self.store = store

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, l = self.d_problem, self.l
        return {
            "enc.W": (d, l),
            "enc.b": (l,),
            "dec.W": (l, 3 * l),
            "dec.U": (l, 3 * l),
            "dec.b": (3 * l,),
            "att.W_a": (l, 2 * l),
            "att.v_a": (l,),
            "att.W_b": (l, 2 * l),
            "att.v_b": (l,),
        }

    @classmethod
    def for_kind(cls, kind, l: int = EMBED, seed=None) -> "ActorModel":
        kind = ProblemKind.parse(kind)
        model = cls(kind.d_problem, l, kind=kind)
        if seed is not None:
            model.xavier(seed)
        return model

    def xavier(self, seed) -> None:
        """Xavier-uniform for every weight matrix and vector; biases start at 0."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        l = self.l
        p = self.store
        p.set("enc.W", xavier_init((self.d_problem, l), rng))
        for name in ("dec.W", "dec.U"):
            # one draw per gate block, each an l x l map
            p.set(name, np.hstack([xavier_init((l, l), rng) for _ in range(3)]))
        p.set("att.W_a", xavier_init((l, 2 * l), rng))
        p.set("att.v_a", xavier_init((l,), rng))
        p.set("att.W_b", xavier_init((l, 2 * l), rng))
        p.set("att.v_b", xavier_init((l,), rng))
        for name in ("enc.b", "dec.b"):
            p.set(name, np.zeros_like(p[name]))


@dataclass
class RolloutResult:
    tour: np.ndarray
    log_prob: float
    step_probs: np.ndarray | None = None


def _as_input(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def encode(tape: Tape, model: ActorModel, x) -> Var:
    """Context embedding ``(..., n, l)`` of encoder input rows ``(..., n, D)``."""
    x = _as_input(tape, x)
    if x.value.shape[-1] != model.d_problem:
        raise ShapeError(f"input rows have width {x.value.shape[-1]}, model expects {model.d_problem}")
    w, b = tape.params(model.store, "enc.W", "enc.b")
    return tape.conv1d_k1(x, w, b)


def decode_step(tape: Tape, model: ActorModel, inp, hidden) -> Var:
    """GRU step; the returned hidden state is also the decoding vector d_t."""
    w, u, b = tape.params(model.store, "dec.W", "dec.U", "dec.b")
    return tape.gru_cell(_as_input(tape, inp), _as_input(tape, hidden), w, u, b)


def attention_keys(tape: Tape, model: ActorModel, e: Var) -> tuple[Var, Var]:
    """City halves of both attention projections, reused at every step."""
    l = model.l
    w_a, w_b = tape.params(model.store, "att.W_a", "att.W_b")
    return (tape.matmul_t(e, tape.cols(w_a, 0, l)),
            tape.matmul_t(e, tape.cols(w_b, 0, l)))


def attention_logits(tape: Tape, model: ActorModel, e: Var, d: Var, keys=None) -> Var:
    """Pointer scores over all cities, before the visited-city mask.

    Glimpse scores ``v_a . tanh(W_a[e_i; d])`` are softmaxed over all cities
    into weights ``a``; their context ``b = sum_i a_i e_i`` feeds the pointer
    scores ``v_b . tanh(W_b[e_i; b])``.
    """
    l = model.l
    w_a, v_a, w_b, v_b = tape.params(model.store, "att.W_a", "att.v_a", "att.W_b", "att.v_b")
    key_a, key_b = keys if keys is not None else attention_keys(tape, model, e)
    qa = tape.unsqueeze(tape.matmul_t(d, tape.cols(w_a, l, 2 * l)), -2)
    u = tape.inner(tape.tanh(tape.add(key_a, qa)), v_a)
    a = tape.softmax(u)
    ctx = tape.weighted_rows(a, e)
    qb = tape.unsqueeze(tape.matmul_t(ctx, tape.cols(w_b, l, 2 * l)), -2)
    return tape.inner(tape.tanh(tape.add(key_b, qb)), v_b)


def attend(tape: Tape, model: ActorModel, e: Var, d: Var, visited, keys=None) -> Var:
    """Next-city distribution; visited cities get probability exactly 0."""
    return tape.masked_softmax(attention_logits(tape, model, e, d, keys), visited)


def rollout_batch(tape: Tape, model: ActorModel, x: np.ndarray, mode: str = "greedy",
                  rng: np.random.Generator | None = None, forced: np.ndarray | None = None,
                  keep_probs: bool = False):
    """Decode ``B`` leaf matrices ``(B, n, D)`` in lockstep.

    ``mode`` is ``"greedy"`` (argmax, lowest index on ties), ``"sample"`` or
    ``"forced"`` (replay the tours in ``forced``). Returns ``(tours, log_prob,
    step_probs)`` where ``log_prob`` is a ``(B,)`` tape variable.
    """
    if mode not in ("greedy", "sample", "forced"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (B, n, D) input, got {x.shape}")
    bsz, n, _ = x.shape
    if n < 2:
        raise ShapeError("need at least 2 cities")
    if mode == "forced":
        forced = np.asarray(forced).reshape(bsz, n)

    e = encode(tape, model, x)
    keys = attention_keys(tape, model, e)
    inp = tape.constant(np.zeros((bsz, model.l)))
    hidden = tape.constant(np.zeros((bsz, model.l)))
    visited = np.zeros((bsz, n), dtype=bool)
    tours = np.empty((bsz, n), dtype=np.int64)
    rows = np.arange(bsz)
    probs_log = np.empty((bsz, n, n)) if keep_probs else None
    total = None
    for t in range(n):
        hidden = decode_step(tape, model, inp, hidden)
        logp = tape.masked_log_softmax(attention_logits(tape, model, e, hidden, keys), visited)
        probs = np.exp(logp.value)
        if keep_probs:
            probs_log[:, t] = probs
        if mode == "greedy":
            choice = np.argmax(probs, axis=-1)
        elif mode == "sample":
            choice = categorical_sample(probs, rng)
        else:
            choice = forced[:, t]
            if np.any(visited[rows, choice]):
                raise ValueError("forced tour revisits a city")
        step = tape.pick(logp, choice)
        total = step if total is None else tape.add(total, step)
        tours[:, t] = choice
        visited[rows, choice] = True
        inp = tape.take_rows(e, choice)
    return tours, total, probs_log


def rollout(leaf: LeafInstance, model: ActorModel, mode: str = "greedy",
            rng: np.random.Generator | None = None, keep_probs: bool = False) -> RolloutResult:
    tape = Tape(record=False)
    tours, logp, probs = rollout_batch(tape, model, leaf.matrix[None], mode, rng, keep_probs=keep_probs)
    return RolloutResult(tours[0], float(logp.value[0]), None if probs is None else probs[0])


def greedy_tours(model: ActorModel, x: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Greedy tours for a stack of leaf matrices, evaluated without recording."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for start in range(0, x.shape[0], chunk):
        tours, _, _ = rollout_batch(Tape(record=False), model, x[start:start + chunk], "greedy")
        out.append(tours)
    return np.concatenate(out, axis=0)
