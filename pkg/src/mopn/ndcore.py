"""Small dense kernel with tape-based reverse-mode differentiation.

Only what the pointer network and its critic need is here. Every array is
float64. A :class:`Tape` records one forward pass; :func:`backward` sweeps it
in exact reverse order and accumulates parameter gradients into the owning
:class:`ParamStore`. Tapes are built fresh for every forward pass.

Leading dimensions act as batch dimensions: a ``(B, n, d)`` input to
:meth:`Tape.conv1d_k1` is ``B`` independent ``n x d`` instances.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptySupportError, ShapeError, TapeError


class Var:
    __slots__ = ("value", "idx", "tape")

    def __init__(self, value, idx=None, tape=None):
        self.value = value
        self.idx = idx
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, idx={self.idx})"


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class ParamStore:
    """Named parameters with gradient accumulators and Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def set(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.params[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self.params[name].shape}")
        self.params[name][...] = value

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.params.items():
            out.add(k, v.copy())
        return out

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def equal(self, other: "ParamStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.params[k], other.params[k]) for k in self.params
        )


class Tape:
    """Records operations of one forward pass.

    With ``record=False`` the same methods compute values only, which is what
    inference uses.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._backs: list = []
        self._parents: list = []
        self._params: dict[tuple[int, str], Var] = {}
        self._param_src: dict[int, tuple[ParamStore, str]] = {}

    def __len__(self):
        return len(self._backs)

    def _out(self, value, parents, back):
        if not self.record:
            return Var(value)
        idx = len(self._backs)
        self._backs.append(back)
        self._parents.append(parents)
        return Var(value, idx, self)

    # -- leaves

    def constant(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64))

    def param(self, store: ParamStore, name: str) -> Var:
        key = (id(store), name)
        var = self._params.get(key)
        if var is None:
            var = self._out(store.params[name], (), None)
            self._params[key] = var
            if self.record:
                self._param_src[var.idx] = (store, name)
        return var

    def params(self, store: ParamStore, *names):
        return [self.param(store, n) for n in names]

    # -- affine maps

    def matmul(self, x: Var, w: Var) -> Var:
        """``x @ w`` with ``w`` of shape ``(k, m)`` and any leading dims on ``x``."""
        xv, wv = x.value, w.value
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
            raise ShapeError(f"matmul: {xv.shape} @ {wv.shape}")
        out = xv @ wv

        def back(g):
            gx = g @ wv.T
            gw = xv.reshape(-1, wv.shape[0]).T @ g.reshape(-1, wv.shape[1])
            return gx, gw

        return self._out(out, (x, w), back)

    def matmul_t(self, x: Var, w: Var) -> Var:
        """``x @ w.T`` with ``w`` of shape ``(m, k)``."""
        xv, wv = x.value, w.value
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
            raise ShapeError(f"matmul_t: {xv.shape} @ {wv.shape}.T")
        out = xv @ wv.T

        def back(g):
            gx = g @ wv
            gw = g.reshape(-1, wv.shape[0]).T @ xv.reshape(-1, wv.shape[1])
            return gx, gw

        return self._out(out, (x, w), back)

    def inner(self, x: Var, v: Var) -> Var:
        """Contract the last axis of ``x`` with the vector ``v``."""
        xv, vv = x.value, v.value
        if vv.ndim != 1 or xv.shape[-1] != vv.shape[0]:
            raise ShapeError(f"inner: {xv.shape} . {vv.shape}")
        out = xv @ vv

        def back(g):
            gx = g[..., None] * vv
            gv = g.reshape(-1) @ xv.reshape(-1, vv.shape[0])
            return gx, gv

        return self._out(out, (x, v), back)

    def conv1d_k1(self, x: Var, w: Var, b: Var | None = None) -> Var:
        """Kernel-size-1 convolution over cities: the same affine map on every row."""
        if b is not None and b.value.shape != (w.value.shape[1],):
            raise ShapeError(f"conv1d_k1: bias {b.value.shape} for weight {w.value.shape}")
        out = self.matmul(x, w)
        return out if b is None else self.add(out, b)

    # -- elementwise

    def add(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        try:
            out = av + bv
        except ValueError:
            raise ShapeError(f"add: {av.shape} + {bv.shape}") from None
        return self._out(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))

    def sub(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        try:
            out = av - bv
        except ValueError:
            raise ShapeError(f"sub: {av.shape} - {bv.shape}") from None
        return self._out(out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))

    def mul(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        try:
            out = av * bv
        except ValueError:
            raise ShapeError(f"mul: {av.shape} * {bv.shape}") from None
        return self._out(out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scale(self, x: Var, c: float) -> Var:
        return self._out(x.value * c, (x,), lambda g: (g * c,))

    def one_minus(self, x: Var) -> Var:
        return self._out(1.0 - x.value, (x,), lambda g: (-g,))

    def square(self, x: Var) -> Var:
        xv = x.value
        return self._out(xv * xv, (x,), lambda g: (2.0 * xv * g,))

    def tanh(self, x: Var) -> Var:
        y = np.tanh(x.value)
        return self._out(y, (x,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self, x: Var) -> Var:
        xv = x.value
        # split by sign so exp never overflows
        e = np.exp(-np.abs(xv))
        y = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._out(y, (x,), lambda g: (g * y * (1.0 - y),))

    def relu(self, x: Var) -> Var:
        xv = x.value
        pos = xv > 0
        return self._out(np.where(pos, xv, 0.0), (x,), lambda g: (g * pos,))

    # -- shape

    def cols(self, x: Var, start: int, stop: int) -> Var:
        """Slice of the last axis."""
        xv = x.value
        if not 0 <= start < stop <= xv.shape[-1]:
            raise ShapeError(f"cols [{start}:{stop}] of {xv.shape}")

        def back(g):
            gx = np.zeros_like(xv)
            gx[..., start:stop] = g
            return (gx,)

        return self._out(xv[..., start:stop], (x,), back)

    def unsqueeze(self, x: Var, axis: int) -> Var:
        return self._out(np.expand_dims(x.value, axis), (x,), lambda g: (np.squeeze(g, axis),))

    def concat(self, xs: list[Var], axis: int = -1) -> Var:
        vals = [x.value for x in xs]
        try:
            out = np.concatenate(vals, axis=axis)
        except ValueError:
            raise ShapeError(f"concat: {[v.shape for v in vals]}") from None
        bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
        return self._out(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))

    def pick(self, x: Var, idx) -> Var:
        """``x[..., idx]`` per leading position: ``(B, n)`` with ``(B,)`` indices gives ``(B,)``."""
        xv = x.value
        idx = np.asarray(idx)
        out = np.take_along_axis(xv, idx[..., None], axis=-1)[..., 0]

        def back(g):
            gx = np.zeros_like(xv)
            np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
            return (gx,)

        return self._out(out, (x,), back)

    def take_rows(self, x: Var, idx) -> Var:
        """Row ``idx[b]`` of every ``x[b]``: ``(B, n, l)`` to ``(B, l)``."""
        xv = x.value
        idx = np.asarray(idx)
        out = np.take_along_axis(xv, idx[..., None, None], axis=-2)[..., 0, :]

        def back(g):
            gx = np.zeros_like(xv)
            np.put_along_axis(gx, idx[..., None, None], g[..., None, :], axis=-2)
            return (gx,)

        return self._out(out, (x,), back)

    # -- reductions

    def sum(self, x: Var, axis=None) -> Var:
        xv = x.value
        out = np.sum(xv, axis=axis)

        def back(g):
            if axis is None:
                return (np.full_like(xv, g),)
            return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

        return self._out(np.asarray(out), (x,), back)

    def mean(self, x: Var, axis=None) -> Var:
        count = x.value.size if axis is None else x.value.shape[axis]
        return self.scale(self.sum(x, axis), 1.0 / count)

    def dot_const(self, x: Var, c) -> Var:
        """``sum(x * c)`` for a constant array ``c``; gradient flows to ``x`` only."""
        c = np.asarray(c, dtype=np.float64)
        return self._out(np.asarray(np.sum(x.value * c)), (x,), lambda g: (g * c,))

    def weighted_rows(self, a: Var, e: Var) -> Var:
        """``sum_i a[..., i] * e[..., i, :]``: attention-weighted context vector."""
        av, ev = a.value, e.value
        if av.shape != ev.shape[:-1]:
            raise ShapeError(f"weighted_rows: {av.shape} vs {ev.shape}")
        out = np.einsum("...n,...nl->...l", av, ev)

        def back(g):
            ga = np.einsum("...l,...nl->...n", g, ev)
            ge = av[..., None] * g[..., None, :]
            return ga, ge

        return self._out(out, (a, e), back)

    # -- softmax family

    def softmax(self, x: Var) -> Var:
        return self.masked_softmax(x, None)

    def masked_softmax(self, x: Var, mask) -> Var:
        """Softmax over the last axis; ``mask`` True marks excluded entries (probability 0)."""
        y = masked_softmax(x.value, mask)

        def back(g):
            return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

        return self._out(y, (x,), back)

    def masked_log_softmax(self, x: Var, mask) -> Var:
        """Log-probabilities; excluded entries are -inf and receive zero gradient."""
        xv = x.value
        keep = _keep(xv, mask)
        z = np.where(keep, xv, -np.inf)
        top = np.max(z, axis=-1, keepdims=True)
        shifted = z - top
        lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        out = shifted - lse
        p = np.exp(out)

        def back(g):
            g = np.where(keep, g, 0.0)
            return (np.where(keep, g - p * np.sum(g, axis=-1, keepdims=True), 0.0),)

        return self._out(out, (x,), back)

    # -- composite layers

    def gru_cell(self, x: Var, h: Var, w: Var, u: Var, b: Var) -> Var:
        """One GRU step.

        ``w`` is ``(d_in, 3H)``, ``u`` is ``(H, 3H)``, ``b`` is ``(3H,)``; column
        blocks are the update gate, reset gate and candidate, in that order::

            z  = sigmoid(x W_z + h U_z + b_z)
            r  = sigmoid(x W_r + h U_r + b_r)
            hc = tanh(x W_h + (r * h) U_h + b_h)
            h' = (1 - z) * h + z * hc
        """
        hid = h.value.shape[-1]
        if u.value.shape != (hid, 3 * hid) or w.value.shape[1] != 3 * hid or b.value.shape != (3 * hid,):
            raise ShapeError(
                f"gru_cell: hidden {hid}, W {w.value.shape}, U {u.value.shape}, b {b.value.shape}"
            )
        xw = self.matmul(x, w)
        gates = self.sigmoid(
            self.add(self.add(self.cols(xw, 0, 2 * hid), self.matmul(h, self.cols(u, 0, 2 * hid))),
                     self.cols(b, 0, 2 * hid))
        )
        z = self.cols(gates, 0, hid)
        r = self.cols(gates, hid, 2 * hid)
        cand = self.tanh(
            self.add(self.add(self.cols(xw, 2 * hid, 3 * hid),
                              self.matmul(self.mul(r, h), self.cols(u, 2 * hid, 3 * hid))),
                     self.cols(b, 2 * hid, 3 * hid))
        )
        return self.add(self.mul(self.one_minus(z), h), self.mul(z, cand))


def _keep(x, mask):
    if mask is None:
        return np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        mask = np.broadcast_to(mask, x.shape)
    keep = ~mask
    if not np.all(np.any(keep, axis=-1)):
        raise EmptySupportError("every entry is masked")
    return keep


def masked_softmax(logits, mask=None) -> np.ndarray:
    """Stable softmax over the last axis with masked entries set to exactly 0."""
    x = np.asarray(logits, dtype=np.float64)
    keep = _keep(x, mask)
    z = np.where(keep, x, -np.inf)
    top = np.max(z, axis=-1, keepdims=True)
    ex = np.where(keep, np.exp(z - top), 0.0)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def backward(tape: Tape, loss: Var) -> None:
    """Reverse sweep from a scalar ``loss``; adds d(loss)/d(param) into each store's grads."""
    if not tape.record or loss.tape is not tape or loss.idx is None:
        raise TapeError("loss was not recorded on this tape")
    if np.ndim(loss.value) != 0:
        raise TapeError(f"loss must be a scalar, got shape {np.shape(loss.value)}")
    grads: list = [None] * len(tape._backs)
    grads[loss.idx] = np.ones(())
    for i in range(loss.idx, -1, -1):
        g = grads[i]
        if g is None:
            continue
        back = tape._backs[i]
        if back is None:
            src = tape._param_src.get(i)
            if src is not None:
                store, name = src
                store.grads[name] += g
            continue
        grads[i] = None
        for parent, pg in zip(tape._parents[i], back(g)):
            if parent.idx is None or parent.tape is not tape or pg is None:
                continue
            cur = grads[parent.idx]
            grads[parent.idx] = pg if cur is None else cur + pg


def adam_step(store: ParamStore, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter; gradients are zeroed afterwards."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)


def xavier_bound(shape) -> float:
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[0], shape[1]
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, seed=None) -> np.ndarray:
    """Glorot-uniform draw on +-sqrt(6 / (fan_in + fan_out)); vectors count as ``(n, 1)``."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape) or len(shape) > 2:
        raise ShapeError(f"xavier_init needs 1 or 2 positive dims, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = xavier_bound(shape)
    return rng.uniform(-bound, bound, size=shape)


def categorical_sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``probs`` by inverse CDF; zero-probability entries are never chosen."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = np.sum(cdf <= u[:, None], axis=-1)
    rows = np.arange(probs.shape[0])
    # u can round up onto the total; fall back to the last supported entry
    bad = (idx >= probs.shape[-1]) | (probs[rows, np.minimum(idx, probs.shape[-1] - 1)] <= 0)
    if np.any(bad):
        last = probs.shape[-1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=-1)
        idx = np.where(bad, last, idx)
    return idx
