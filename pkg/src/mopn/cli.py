"""Command-line entry point: ``mopn {gen-data,train,infer,eval,oracle}``.

Every command takes an optional ``--config FILE.json`` whose keys are the
command's option names (underscored). Flags given on the command line win
over the file; unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .errors import ConfigError, MOPNError
from .instances import (
    ProblemKind,
    generate_random_rins,
    load_instance,
    load_tsplib_pair,
    save_instance,
)
from .pareto import (
    BRUTE_FORCE_LIMIT,
    brute_force_front,
    extreme_points,
    heuristic_baseline,
    hv,
    reference_point,
    solve_front,
    spc,
)
from .trainer import STRATEGIES, TrainConfig, train_strategy
from .weights import default_weight_set, simplex_lattice

log = logging.getLogger("mopn")


@dataclass
class GenDataOptions:
    kind: str = "T1O2"
    scale: int = 100
    count: int = 20
    seed: int = 0
    out_dir: str = "data"

    def validate(self):
        ProblemKind.parse(self.kind)
        if self.scale < 2:
            raise ConfigError("scale must be at least 2")
        if self.count < 1:
            raise ConfigError("count must be at least 1")


@dataclass
class TrainOptions:
    kind: str = "T1O2"
    n: int = 40
    epochs: int = 1
    dataset_size: int = 20000
    batch_size: int = 200
    lr: float = 1e-4
    strategy: str = "TS-RM"
    seed: int = 0
    l: int = 128
    critic_hidden: list = field(default_factory=lambda: [128, 20, 20])
    from_checkpoint: str | None = None
    out: str = "model.json"
    log: str | None = None
    dry_run: bool = False

    def validate(self):
        self.train_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(kind=self.kind, n=self.n, epochs=self.epochs, dataset_size=self.dataset_size,
                           batch_size=self.batch_size, lr=self.lr, strategy=self.strategy, seed=self.seed,
                           l=self.l, critic_hidden=tuple(self.critic_hidden),
                           from_checkpoint=self.from_checkpoint)


@dataclass
class InferOptions:
    checkpoint: str = ""
    instance: str | None = None
    tsplib: list | None = None
    lattice_h: int | None = None
    out: str | None = None

    def validate(self):
        if not self.checkpoint:
            raise ConfigError("checkpoint is required")
        if (self.instance is None) == (self.tsplib is None):
            raise ConfigError("give exactly one of instance or tsplib (two files)")
        if self.tsplib is not None and len(self.tsplib) != 2:
            raise ConfigError("tsplib needs exactly two files")


@dataclass
class EvalOptions:
    checkpoints: list = field(default_factory=list)
    labels: list | None = None
    data_dir: str = ""
    baseline: bool = True
    oracle: bool = True
    lattice_h: int | None = None
    out: str | None = None
    fronts_dir: str | None = None

    def validate(self):
        if not self.data_dir:
            raise ConfigError("data_dir is required")
        if self.labels is not None and len(self.labels) != len(self.checkpoints):
            raise ConfigError("labels must match checkpoints one to one")
        if not self.checkpoints and not self.baseline:
            raise ConfigError("nothing to evaluate: no checkpoints and baseline disabled")


@dataclass
class OracleOptions:
    instance: str = ""
    out: str | None = None

    def validate(self):
        if not self.instance:
            raise ConfigError("instance is required")


def build_options(cls, file_values: dict, flag_values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None and k in known})
    for f in dataclasses.fields(cls):
        if f.name in merged and merged[f.name] is not None:
            merged[f.name] = _coerce(f, merged[f.name])
    opts = cls(**merged)
    opts.validate()
    return opts


def _coerce(f, value):
    kind = str(f.type)
    try:
        if kind.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind.startswith("list"):
            if not isinstance(value, (list, tuple)):
                raise ValueError
            return list(value)
        if kind.startswith("str"):
            if not isinstance(value, str):
                raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{f.name}: bad value {value!r} for type {kind}") from None
    return value


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def weight_set_for(m: int, lattice_h: int | None):
    return default_weight_set(m) if lattice_h is None else simplex_lattice(m, lattice_h)


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# ---------------------------------------------------------------- commands

def cmd_gen_data(opts: GenDataOptions) -> list[Path]:
    kind = ProblemKind.parse(opts.kind)
    out = Path(opts.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from None
    paths = []
    for k in range(1, opts.count + 1):
        name = f"{kind.tag}S{opts.scale}-{k}"
        rins = generate_random_rins(kind, opts.scale, [opts.seed, opts.scale, k], name=name)
        path = out / f"{name}.json"
        save_instance(rins, path)
        paths.append(path)
    log.info("wrote %d instances to %s", len(paths), out)
    return paths


def cmd_train(opts: TrainOptions):
    config = opts.train_config()
    if opts.dry_run:
        sys.stdout.write(json.dumps(dataclasses.asdict(opts), indent=2, sort_keys=True) + "\n")
        return None
    Path(opts.out).parent.mkdir(parents=True, exist_ok=True)
    return train_strategy(config, checkpoint_path=opts.out, log_path=opts.log)


def _load_rins(opts):
    if opts.tsplib is not None:
        return load_tsplib_pair(*opts.tsplib)
    return load_instance(opts.instance)


def cmd_infer(opts: InferOptions):
    actor, _, _ = load_checkpoint(opts.checkpoint)
    rins = _load_rins(opts)
    front = solve_front(actor, rins, weight_set_for(rins.n_objectives, opts.lattice_h))
    _write(opts.out, front.to_csv())
    log.info("%s: %d front points in %.3fs", rins.name or "instance", len(front), front.elapsed)
    return front


def cmd_oracle(opts: OracleOptions):
    rins = load_instance(opts.instance)
    front = brute_force_front(rins)
    _write(opts.out, front.to_csv())
    return front


def evaluate(methods: dict, instances, weight_set_m=None, lattice_h=None, baseline=True, oracle=True,
             fronts_dir=None) -> dict:
    """Indicator report over a dataset; ``methods`` maps label to actor model."""
    rows = []
    for rins in instances:
        weights = weight_set_for(rins.n_objectives, lattice_h)
        fronts = {label: solve_front(actor, rins, weights) for label, actor in methods.items()}
        if baseline:
            fronts["baseline"] = heuristic_baseline(rins, weights)
        truth = brute_force_front(rins) if oracle and rins.n <= BRUTE_FORCE_LIMIT else None
        compared = list(fronts.values()) + ([truth] if truth is not None else [])
        ref = reference_point(compared)
        ext = extreme_points(compared)
        row = {"instance": rins.name, "n": rins.n, "reference_point": ref.tolist(), "methods": {}}
        truth_hv = hv(truth, ref) if truth is not None else None
        for label, front in fronts.items():
            rec = {"HV": hv(front, ref), "SPC": spc(front, ext), "Time": front.elapsed, "points": len(front)}
            if truth_hv is not None:
                rec["HV_ratio"] = rec["HV"] / truth_hv if truth_hv > 0 else float("nan")
            row["methods"][label] = rec
            if fronts_dir is not None:
                _write(Path(fronts_dir) / f"{rins.name}.{label}.csv", front.to_csv())
        if truth is not None:
            row["oracle"] = {"HV": truth_hv, "SPC": spc(truth, ext), "points": len(truth)}
        rows.append(row)
    labels = list(rows[0]["methods"]) if rows else []
    summary = {}
    for label in labels:
        cols = ["HV", "SPC", "Time"] + (["HV_ratio"] if "HV_ratio" in rows[0]["methods"][label] else [])
        summary[label] = {c: float(np.mean([r["methods"][label][c] for r in rows])) for c in cols}
    return {"instances": rows, "summary": summary}


def cmd_eval(opts: EvalOptions):
    files = sorted(Path(opts.data_dir).glob("*.json")) if Path(opts.data_dir).is_dir() else []
    if not files:
        raise ConfigError(f"no instance files in {opts.data_dir!r}")
    instances = [load_instance(p) for p in files]
    instances.sort(key=lambda r: _natural_key(r.name))
    kinds = {r.kind for r in instances}
    if len(kinds) != 1 or len({r.n for r in instances}) != 1:
        raise ConfigError("dataset mixes problem kinds or scales")
    labels = opts.labels or [Path(c).stem for c in opts.checkpoints]
    methods = {}
    for label, path in zip(labels, opts.checkpoints):
        actor, _, _ = load_checkpoint(path)
        if actor.kind is not None and actor.kind not in kinds:
            raise ConfigError(f"{path} is a {actor.kind.tag} model, dataset is {instances[0].kind.tag}")
        methods[label] = actor
    report = evaluate(methods, instances, lattice_h=opts.lattice_h, baseline=opts.baseline,
                      oracle=opts.oracle, fronts_dir=opts.fronts_dir)
    _write(opts.out, json.dumps(report, indent=2) + "\n")
    return report


def _natural_key(name):
    head, _, tail = name.rpartition("-")
    return (head, int(tail)) if tail.isdigit() else (name, 0)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mopn", description="Multi-objective pointer network for MOTSP")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap; all computation here is already single-process")
    p.add_argument("--deterministic", action="store_true",
                   help="serialized reductions (always the case in this implementation)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a seeded testing dataset of root instances")
    g.add_argument("--config")
    g.add_argument("--kind", choices=[k.tag for k in ProblemKind])
    g.add_argument("--scale", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", dest="out_dir")

    t = sub.add_parser("train", help="train with GTS, TS-RM or TS-TL")
    t.add_argument("--config")
    t.add_argument("--kind", choices=[k.tag for k in ProblemKind])
    t.add_argument("--n", type=int, help="training scale (cities per instance)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--dataset-size", dest="dataset_size", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--seed", type=int)
    t.add_argument("--embed", dest="l", type=int)
    t.add_argument("--from-checkpoint", dest="from_checkpoint")
    t.add_argument("--out")
    t.add_argument("--log", help="per-epoch CSV log")
    t.add_argument("--dry-run", dest="dry_run", action="store_true", default=None)

    i = sub.add_parser("infer", help="Pareto front of one instance from a checkpoint")
    i.add_argument("--config")
    i.add_argument("--checkpoint")
    i.add_argument("--instance")
    i.add_argument("--tsplib", nargs=2, metavar=("FILE_A", "FILE_B"))
    i.add_argument("--lattice-h", dest="lattice_h", type=int)
    i.add_argument("--out")

    e = sub.add_parser("eval", help="HV / SPC / time report over a dataset")
    e.add_argument("--config")
    e.add_argument("--checkpoint", dest="checkpoints", action="append")
    e.add_argument("--label", dest="labels", action="append")
    e.add_argument("--data-dir", dest="data_dir")
    e.add_argument("--no-baseline", dest="baseline", action="store_false", default=None)
    e.add_argument("--no-oracle", dest="oracle", action="store_false", default=None)
    e.add_argument("--lattice-h", dest="lattice_h", type=int)
    e.add_argument("--fronts-dir", dest="fronts_dir")
    e.add_argument("--out")

    o = sub.add_parser("oracle", help="exact Pareto front by enumeration (n <= 10)")
    o.add_argument("--config")
    o.add_argument("--instance")
    o.add_argument("--out")
    return p


COMMANDS = {
    "gen-data": (GenDataOptions, cmd_gen_data),
    "train": (TrainOptions, cmd_train),
    "infer": (InferOptions, cmd_infer),
    "eval": (EvalOptions, cmd_eval),
    "oracle": (OracleOptions, cmd_oracle),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cls, run = COMMANDS[args.command]
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose", "threads",
                                                            "deterministic")}
    try:
        opts = build_options(cls, read_config(args.config), flags)
        run(opts)
    except (MOPNError, OSError) as exc:
        print(f"mopn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
