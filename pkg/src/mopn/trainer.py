"""Actor-critic training and the three training strategies.

GTS trains directly at the target scale. TS-RM trains a representative model
at one scale (40 cities in the original experiments) and reuses it at every
scale. TS-TL loads a representative model and fine-tunes it briefly at the
target scale.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .actor import ActorModel, EMBED, rollout_batch
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    MissingPrerequisiteError,
    ShapeError,
    TrainingDivergedError,
)
from .instances import LeafInstance, ProblemKind, leaf_matrix, tour_objectives_batch
from .ndcore import ParamStore, Tape, adam_step, backward, xavier_init
from .weights import random_simplex_weights

log = logging.getLogger(__name__)

STRATEGIES = ("GTS", "TS-RM", "TS-TL")
RM_SCALE = 40


class CriticModel:
    """Four kernel-size-1 conv layers, D -> h1 -> h2 -> h3 -> 1, then a sum over cities.

    ReLU follows layers 2 and 3; layers 1 and 4 are affine. Summing lets the
    baseline grow with the tour length; ``reduction="mean"`` is kept for comparison.
    """

    def __init__(self, d_problem: int, hidden=(128, 20, 20), store: ParamStore | None = None,
                 reduction: str = "sum"):
        self.d_problem = int(d_problem)
        self.hidden = tuple(int(h) for h in hidden)
        if reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
        self.reduction = reduction
        if len(self.hidden) != 3:
            raise ShapeError(f"critic needs 3 hidden widths, got {self.hidden}")
        if store is None:
            store = ParamStore()
            for name, shape in self.param_shapes().items():
                store.add(name, np.zeros(shape))
        for name, shape in self.param_shapes().items():
            if store[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {store[name].shape}")
        self.store = store

    def param_shapes(self):
        dims = (self.d_problem,) + self.hidden + (1,)
        shapes = {}
        for i in range(4):
            shapes[f"crit.W{i + 1}"] = (dims[i], dims[i + 1])
            shapes[f"crit.b{i + 1}"] = (dims[i + 1],)
        return shapes

    @classmethod
    def for_kind(cls, kind, hidden=(128, 20, 20), seed=None, reduction: str = "sum") -> "CriticModel":
        model = cls(ProblemKind.parse(kind).d_problem, hidden, reduction=reduction)
        if seed is not None:
            model.xavier(seed)
        return model

    def xavier(self, seed) -> None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for name, shape in self.param_shapes().items():
            if name.startswith("crit.W"):
                self.store.set(name, xavier_init(shape, rng))
            else:
                self.store.set(name, np.zeros(shape))


def critic_forward(tape: Tape, critic: CriticModel, x):
    """Baseline per leaf matrix: ``(..., n, D)`` in, ``(...)`` out."""
    x = x if hasattr(x, "idx") else tape.constant(x)
    if x.value.shape[-1] != critic.d_problem:
        raise ShapeError(f"input rows have width {x.value.shape[-1]}, critic expects {critic.d_problem}")
    p = critic.store
    h = tape.conv1d_k1(x, tape.param(p, "crit.W1"), tape.param(p, "crit.b1"))
    h = tape.relu(tape.conv1d_k1(h, tape.param(p, "crit.W2"), tape.param(p, "crit.b2")))
    h = tape.relu(tape.conv1d_k1(h, tape.param(p, "crit.W3"), tape.param(p, "crit.b3")))
    out = tape.conv1d_k1(h, tape.param(p, "crit.W4"), tape.param(p, "crit.b4"))
    per_city = tape.sum(out, axis=-1)
    if critic.reduction == "mean":
        return tape.mean(per_city, axis=-1)
    return tape.sum(per_city, axis=-1)


def critic_value(leaf: LeafInstance, critic: CriticModel) -> float:
    return float(critic_forward(Tape(record=False), critic, leaf.matrix).value)


@dataclass
class TrainConfig:
    kind: str = "T1O2"
    n: int = RM_SCALE
    epochs: int = 1
    dataset_size: int = 20000
    batch_size: int = 200
    lr: float = 1e-4
    strategy: str = "TS-RM"
    seed: int = 0
    l: int = EMBED
    critic_hidden: tuple = (128, 20, 20)
    from_checkpoint: str | None = None

    def __post_init__(self):
        self.kind = ProblemKind.parse(self.kind).tag
        self.critic_hidden = tuple(self.critic_hidden)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("n", "epochs", "dataset_size", "batch_size", "l"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    @property
    def problem_kind(self) -> ProblemKind:
        return ProblemKind.parse(self.kind)


@dataclass
class LeafDataset:
    """Seeded stream of random leaf instances; batch ``j`` depends only on (seed, j)."""

    kind: ProblemKind
    n: int
    seed: int
    count: int
    batch_size: int = 200

    def __post_init__(self):
        self.kind = ProblemKind.parse(self.kind)

    def __len__(self):
        return -(-self.count // self.batch_size)

    def batch(self, j: int):
        """``(matrix (B, n, D), features (B, n, F), weights (B, M))`` for batch ``j``."""
        size = min(self.batch_size, self.count - j * self.batch_size)
        if size <= 0:
            raise IndexError(j)
        rng = np.random.default_rng([self.seed, 0x1EAF, j])
        feats = rng.random((size, self.n, self.kind.n_raw_features))
        w = random_simplex_weights(rng, size, self.kind.n_objectives)
        return leaf_matrix(self.kind, feats, w), feats, w

    def __iter__(self):
        for j in range(len(self)):
            yield self.batch(j)


@dataclass
class BatchStats:
    mean_cost: float
    mean_advantage: float
    mean_abs_advantage: float
    actor_loss: float
    critic_loss: float


def compute_batch_gradients(actor: ActorModel, critic: CriticModel, kind: ProblemKind,
                            x: np.ndarray, feats: np.ndarray, w: np.ndarray,
                            rng: np.random.Generator | None, forced: np.ndarray | None = None):
    """Fill actor and critic grads for one batch; returns stats and the sampled tours.

    Actor loss ``mean((C - Z) * log P)`` holds ``Z`` constant; critic loss is
    ``mean((C - Z)^2)``.
    """
    bsz = x.shape[0]
    tape = Tape()
    mode = "sample" if forced is None else "forced"
    tours, logp, _ = rollout_batch(tape, actor, x, mode, rng, forced)
    cost = np.einsum("bm,bm->b", tour_objectives_batch(kind, feats, tours), w)

    ctape = Tape()
    z = critic_forward(ctape, critic, x)
    adv = cost - z.value
    actor_loss = tape.scale(tape.dot_const(logp, adv), 1.0 / bsz)
    critic_loss = ctape.mean(ctape.square(ctape.sub(ctape.constant(cost), z)))
    if not (np.isfinite(actor_loss.value) and np.isfinite(critic_loss.value)):
        raise TrainingDivergedError(
            f"non-finite loss (actor {actor_loss.value}, critic {critic_loss.value}); "
            f"mean cost {cost.mean()}, baseline range [{z.value.min()}, {z.value.max()}]"
        )
    backward(tape, actor_loss)
    backward(ctape, critic_loss)
    stats = BatchStats(float(cost.mean()), float(adv.mean()), float(np.abs(adv).mean()),
                       float(actor_loss.value), float(critic_loss.value))
    return stats, tours


def train_batch(actor: ActorModel, critic: CriticModel, kind: ProblemKind, x, feats, w,
                rng: np.random.Generator, lr: float = 1e-4) -> BatchStats:
    """One actor-critic step: sample, score, then one Adam step for each network."""
    actor.store.zero_grad()
    critic.store.zero_grad()
    stats, _ = compute_batch_gradients(actor, critic, kind, x, feats, w, rng)
    adam_step(actor.store, lr)
    adam_step(critic.store, lr)
    return stats


@dataclass
class TrainResult:
    actor: ActorModel
    critic: CriticModel
    meta: dict
    log: list = field(default_factory=list)


def train(config: TrainConfig, actor: ActorModel | None = None, critic: CriticModel | None = None,
          checkpoint_path=None, log_path=None, on_epoch=None) -> TrainResult:
    """Run ``config.epochs`` epochs over a seeded leaf dataset at scale ``config.n``."""
    kind = config.problem_kind
    if actor is None:
        actor = ActorModel.for_kind(kind, config.l, seed=np.random.default_rng([config.seed, 0xAC7]))
    if critic is None:
        critic = CriticModel.for_kind(kind, config.critic_hidden, seed=np.random.default_rng([config.seed, 0xC21]))
    if actor.d_problem != kind.d_problem or critic.d_problem != kind.d_problem:
        raise ShapeError(f"model input width {actor.d_problem} does not fit {kind.tag} ({kind.d_problem})")
    data = LeafDataset(kind, config.n, config.seed, config.dataset_size, config.batch_size)
    records = []
    meta = {"kind": kind.tag, "l": actor.l, "scale": config.n, "strategy": config.strategy,
            "seed": config.seed, "epoch": 0, "config": _config_record(config)}
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, 0x5A3, epoch])
        t0 = time.perf_counter()
        costs, advs, sizes = [], [], []
        for x, feats, w in data:
            s = train_batch(actor, critic, kind, x, feats, w, rng, config.lr)
            costs.append(s.mean_cost)
            advs.append(s.mean_abs_advantage)
            sizes.append(x.shape[0])
        rec = {
            "epoch": epoch,
            "mean_cost": float(np.average(costs, weights=sizes)),
            "mean_abs_advantage": float(np.average(advs, weights=sizes)),
            "wall_time": time.perf_counter() - t0,
        }
        records.append(rec)
        meta["epoch"] = epoch
        log.info("epoch %d: mean cost %.4f, |adv| %.4f, %.1fs", epoch, rec["mean_cost"],
                 rec["mean_abs_advantage"], rec["wall_time"])
        if on_epoch is not None:
            on_epoch(rec)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, actor, critic, meta)
    if log_path is not None:
        write_training_log(log_path, records)
    return TrainResult(actor, critic, meta, records)


def _config_record(config: TrainConfig) -> dict:
    rec = asdict(config)
    rec["critic_hidden"] = list(config.critic_hidden)
    return rec


def write_training_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "mean_cost", "mean_abs_advantage", "wall_time"],
                                lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec)


def train_strategy(config: TrainConfig, checkpoint_path=None, log_path=None) -> TrainResult:
    if config.strategy == "TS-RM" and config.n != RM_SCALE:
        log.warning("TS-RM representative models are normally trained at %d cities, got %d",
                    RM_SCALE, config.n)
    if config.strategy != "TS-TL":
        return train(config, checkpoint_path=checkpoint_path, log_path=log_path)
    if not config.from_checkpoint:
        raise MissingPrerequisiteError("TS-TL needs a representative-model checkpoint (from_checkpoint)")
    if not Path(config.from_checkpoint).exists():
        raise MissingPrerequisiteError(f"checkpoint {config.from_checkpoint} does not exist")
    actor, critic, rm_meta = load_checkpoint(config.from_checkpoint)
    kind = config.problem_kind
    if actor.kind is not kind or actor.d_problem != kind.d_problem:
        got = actor.kind.tag if actor.kind else f"D={actor.d_problem}"
        raise ShapeError(f"checkpoint is for {got}, transfer target is {kind.tag}")
    if critic is None:
        critic = CriticModel.for_kind(kind, config.critic_hidden, seed=np.random.default_rng([config.seed, 0xC21]))
    result = train(config, actor, critic)
    result.meta["transferred_from"] = {"scale": rm_meta.get("scale"), "strategy": rm_meta.get("strategy"),
                                       "epoch": rm_meta.get("epoch")}
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result.actor, result.critic, result.meta)
    if log_path is not None:
        write_training_log(log_path, result.log)
    return result
