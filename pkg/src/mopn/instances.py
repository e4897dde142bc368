"""MOTSP instances: problem kinds, root/leaf instances, TSPLIB ingestion, tour costs.

A root instance stores raw city features column-wise in objective order. For
each objective the block is either a coordinate pair (tour-length objective)
or a single altitude (altitude-difference objective).

Native instance files are JSON documents::

    {
      "format": "mopn-instance",
      "version": 1,
      "name": "T1O2S100-1",
      "kind": "T1O2",
      "n": 100,
      "features": [[x1, y1, x2, y2], ...]
    }

``features`` holds one row per city with ``sum(kind.feature_dims)`` columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    InvalidInstanceError,
    InvalidTourError,
    InvalidWeightError,
    TsplibParseError,
)

INSTANCE_FORMAT = "mopn-instance"
INSTANCE_VERSION = 1

LENGTH = "length"
ALTITUDE = "altitude"


class ProblemKind(Enum):
    T1O2 = ("T1O2", (LENGTH, LENGTH))
    T2O2 = ("T2O2", (LENGTH, ALTITUDE))
    T2O3 = ("T2O3", (LENGTH, LENGTH, ALTITUDE))

    def __init__(self, tag, objectives):
        self.tag = tag
        self.objectives = objectives

    @property
    def n_objectives(self) -> int:
        return len(self.objectives)

    @property
    def feature_dims(self) -> tuple[int, ...]:
        return tuple(2 if o == LENGTH else 1 for o in self.objectives)

    @property
    def d_max(self) -> int:
        return max(self.feature_dims)

    @property
    def d_problem(self) -> int:
        """Width of an encoder input row: padded feature blocks plus weights."""
        m = self.n_objectives
        return m * self.d_max + m

    @property
    def n_raw_features(self) -> int:
        return sum(self.feature_dims)

    def column_slices(self) -> list[slice]:
        out, start = [], 0
        for d in self.feature_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    @classmethod
    def parse(cls, value) -> "ProblemKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise InvalidInstanceError(f"unknown problem kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class RootInstance:
    kind: ProblemKind
    features: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind.parse(self.kind))
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.kind.n_raw_features:
            raise InvalidInstanceError(
                f"{self.kind.tag} expects rows of {self.kind.n_raw_features} features, "
                f"got array of shape {feats.shape}"
            )
        if feats.shape[0] < 2:
            raise InvalidInstanceError(f"need at least 2 cities, got {feats.shape[0]}")
        if not np.all(np.isfinite(feats)) or feats.min() < 0.0 or feats.max() > 1.0:
            raise InvalidInstanceError("features must be finite and lie in [0, 1]")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_objectives(self) -> int:
        return self.kind.n_objectives

    def __eq__(self, other):
        if not isinstance(other, RootInstance):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self.features, other.features)

    def relabel(self, perm) -> "RootInstance":
        """Instance whose city ``i`` is this instance's city ``perm[i]``."""
        return RootInstance(self.kind, self.features[np.asarray(perm)], self.name)


@dataclass(frozen=True, eq=False)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size < 2 or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidWeightError(f"weights must be >= 2 nonnegative reals, got {w}")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise InvalidWeightError(f"weights must sum to 1, got sum {math.fsum(w)!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def __iter__(self):
        return iter(self.w.tolist())

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return np.array_equal(self.w, other.w)


def as_weights(w) -> np.ndarray:
    return w.w if isinstance(w, WeightVector) else WeightVector(w).w


@dataclass(frozen=True, eq=False)
class LeafInstance:
    matrix: np.ndarray
    source: RootInstance = field(repr=False)
    weight: WeightVector

    @property
    def kind(self) -> ProblemKind:
        return self.source.kind

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def generate_random_rins(kind, n: int, seed=None, name: str = "") -> RootInstance:
    kind = ProblemKind.parse(kind)
    if n < 2:
        raise InvalidInstanceError(f"need at least 2 cities, got {n}")
    rng = np.random.default_rng(seed)
    return RootInstance(kind, rng.random((n, kind.n_raw_features)), name)


def leaf_matrix(kind: ProblemKind, features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Encoder input rows for raw features.

    Works on a single instance ``(n, F)`` with weights ``(M,)`` or a batch
    ``(B, n, F)`` with weights ``(B, M)``.
    """
    m, dmax = kind.n_objectives, kind.d_max
    lead = features.shape[:-1]
    out = np.ones(lead + (kind.d_problem,), dtype=np.float64)
    for j, sl in enumerate(kind.column_slices()):
        width = sl.stop - sl.start
        out[..., j * dmax: j * dmax + width] = features[..., sl]
    out[..., m * dmax:] = np.expand_dims(weights, -2)
    return out


def build_leaf(rins: RootInstance, w) -> LeafInstance:
    wv = w if isinstance(w, WeightVector) else WeightVector(w)
    if len(wv) != rins.n_objectives:
        raise InvalidWeightError(
            f"{rins.kind.tag} has {rins.n_objectives} objectives, got {len(wv)} weights"
        )
    mat = leaf_matrix(rins.kind, rins.features, wv.w)
    mat.setflags(write=False)
    return LeafInstance(mat, rins, wv)


def strip_leaf(kind: ProblemKind, matrix: np.ndarray) -> np.ndarray:
    """Raw features back out of an encoder input matrix (padding and weights removed)."""
    dmax = kind.d_max
    cols = []
    for j, d in enumerate(kind.feature_dims):
        cols.append(matrix[..., j * dmax: j * dmax + d])
    return np.concatenate(cols, axis=-1)


def check_tour(tour, n: int) -> np.ndarray:
    t = np.asarray(tour)
    if t.ndim != 1 or t.size != n or not np.issubdtype(t.dtype, np.integer):
        raise InvalidTourError(f"tour must be {n} integer city indices")
    if not np.array_equal(np.sort(t), np.arange(n)):
        raise InvalidTourError("tour is not a permutation of the cities")
    return t


def edge_costs(kind: ProblemKind, features: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Per-edge costs ``(..., n, M)`` for closed tours; edge ``i`` joins step i to step i+1."""
    if features.ndim == 2:
        here = features[tours]
    else:
        here = np.take_along_axis(features, tours[..., None], axis=-2)
    there = np.roll(here, -1, axis=-2)
    out = np.empty(tours.shape + (kind.n_objectives,), dtype=np.float64)
    for m, (obj, sl) in enumerate(zip(kind.objectives, kind.column_slices())):
        diff = here[..., sl] - there[..., sl]
        if obj == LENGTH:
            out[..., m] = np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])
        else:
            out[..., m] = np.abs(diff[..., 0])
    return out


def tour_objective(rins: RootInstance, tour) -> np.ndarray:
    """Objective vector of a closed tour; sums are correctly rounded (fsum)."""
    t = check_tour(tour, rins.n)
    costs = edge_costs(rins.kind, rins.features, t)
    return np.array([math.fsum(costs[:, m]) for m in range(rins.n_objectives)])


def tour_objectives_batch(kind: ProblemKind, features: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Objective vectors ``(B, M)`` for ``(B, n, F)`` features and ``(B, n)`` tours.

    Fast path for training; no permutation checks.
    """
    return edge_costs(kind, features, tours).sum(axis=-2)


def scalarized_cost(c, w) -> float:
    c = np.asarray(c, dtype=np.float64)
    w = np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=np.float64)
    if c.shape != w.shape:
        raise InvalidWeightError(f"objective vector has {c.size} entries, weights {w.size}")
    return math.fsum(c * w)


# ---------------------------------------------------------------- TSPLIB

def parse_tsplib(path) -> tuple[dict, np.ndarray]:
    """Parse an EUC_2D TSPLIB file into (header, coords) with 0-based city order."""
    path = Path(path)
    header: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    in_coords = False
    saw_section = False
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.upper() == "EOF":
                break
            if in_coords:
                parts = line.split()
                if len(parts) != 3:
                    if ":" in line or parts[0].isalpha():
                        in_coords = False
                    else:
                        raise TsplibParseError(path, lineno, f"expected 'id x y', got {line!r}")
                else:
                    try:
                        idx = int(parts[0])
                        x, y = float(parts[1]), float(parts[2])
                    except ValueError:
                        raise TsplibParseError(path, lineno, f"non-numeric coordinate line {line!r}") from None
                    if not (math.isfinite(x) and math.isfinite(y)):
                        raise TsplibParseError(path, lineno, "non-finite coordinate")
                    if idx in coords:
                        raise TsplibParseError(path, lineno, f"duplicate node {idx}")
                    coords[idx] = (x, y)
                    continue
            if line.upper().startswith("NODE_COORD_SECTION"):
                in_coords = saw_section = True
                continue
            if ":" in line:
                key, _, value = line.partition(":")
                header[key.strip().upper()] = value.strip()
            elif line.split()[0].upper().endswith("_SECTION"):
                raise TsplibParseError(path, lineno, f"unsupported section {line.split()[0]}")
    if not saw_section:
        raise TsplibParseError(path, None, "missing NODE_COORD_SECTION")
    ewt = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if ewt != "EUC_2D":
        raise TsplibParseError(path, None, f"unsupported EDGE_WEIGHT_TYPE {ewt}")
    if "DIMENSION" in header:
        try:
            dim = int(header["DIMENSION"])
        except ValueError:
            raise TsplibParseError(path, None, f"bad DIMENSION {header['DIMENSION']!r}") from None
        if dim != len(coords):
            raise TsplibParseError(path, None, f"DIMENSION {dim} but {len(coords)} nodes listed")
    labels = sorted(coords)
    if labels != list(range(1, len(labels) + 1)):
        raise TsplibParseError(path, None, "node labels must be 1..DIMENSION")
    return header, np.array([coords[i] for i in labels], dtype=np.float64)


def minmax_columns(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(axis=0), a.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (a - lo) / span


def load_tsplib_pair(path_a, path_b, name: str | None = None) -> RootInstance:
    """Two EUC_2D files of equal dimension as one T1O2 instance, columns min-max normalized."""
    head_a, xy_a = parse_tsplib(path_a)
    head_b, xy_b = parse_tsplib(path_b)
    if len(xy_a) != len(xy_b):
        raise TsplibParseError(
            path_b, None, f"dimension {len(xy_b)} does not match {Path(path_a).name} ({len(xy_a)})"
        )
    feats = minmax_columns(np.hstack([xy_a, xy_b]))
    if name is None:
        name = head_a.get("NAME", Path(path_a).stem) + "+" + head_b.get("NAME", Path(path_b).stem)
    return RootInstance(ProblemKind.T1O2, feats, name)


# ---------------------------------------------------------------- native files

def instance_to_dict(rins: RootInstance) -> dict:
    return {
        "format": INSTANCE_FORMAT,
        "version": INSTANCE_VERSION,
        "name": rins.name,
        "kind": rins.kind.tag,
        "n": rins.n,
        "features": rins.features.tolist(),
    }


def instance_from_dict(doc: dict) -> RootInstance:
    if doc.get("format") != INSTANCE_FORMAT:
        raise InvalidInstanceError(f"not an instance document (format={doc.get('format')!r})")
    if doc.get("version") != INSTANCE_VERSION:
        raise InvalidInstanceError(f"unsupported instance version {doc.get('version')!r}")
    rins = RootInstance(ProblemKind.parse(doc["kind"]), np.array(doc["features"], dtype=np.float64),
                        doc.get("name", ""))
    if rins.n != doc.get("n"):
        raise InvalidInstanceError(f"n={doc.get('n')} but {rins.n} feature rows")
    return rins


def save_instance(rins: RootInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(rins)) + "\n")


def load_instance(path) -> RootInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError(f"{path}: {exc}") from None
    return instance_from_dict(doc)
