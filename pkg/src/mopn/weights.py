"""Weight vectors for decomposition: simplex lattices and random simplex draws."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .errors import InvalidWeightError


def _compositions(total: int, parts: int):
    # lexicographically descending
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class WeightSet:
    vectors: np.ndarray  # (count, M)
    M: int
    H: int

    def __len__(self):
        return self.vectors.shape[0]

    def __iter__(self):
        return iter(self.vectors)

    def exact(self) -> list[tuple[Fraction, ...]]:
        """The lattice points as exact fractions."""
        return [tuple(Fraction(k, self.H) for k in c) for c in _compositions(self.H, self.M)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"w{m + 1}" for m in range(self.M)])
        for row in self.vectors:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def simplex_lattice(M: int, H: int) -> WeightSet:
    """All weight vectors with components in {0, 1/H, ..., 1}, lexicographically descending."""
    if M < 2:
        raise InvalidWeightError(f"need at least 2 objectives, got M={M}")
    if H < 1:
        raise InvalidWeightError(f"lattice parameter H must be >= 1, got {H}")
    counts = np.array(list(_compositions(H, M)), dtype=np.float64)
    vectors = counts / H
    assert vectors.shape[0] == comb(H + M - 1, M - 1)
    vectors.setflags(write=False)
    return WeightSet(vectors, M, H)


DEFAULT_LATTICE_H = {2: 99, 3: 13}


def default_weight_set(M: int) -> WeightSet:
    """100 vectors for two objectives, 105 for three."""
    if M not in DEFAULT_LATTICE_H:
        raise InvalidWeightError(f"no default lattice for M={M}")
    return simplex_lattice(M, DEFAULT_LATTICE_H[M])


def random_simplex_weights(rng: np.random.Generator, count: int, M: int) -> np.ndarray:
    """Uniform draws on the simplex: gaps between M-1 sorted uniforms on [0, 1]."""
    cuts = np.sort(rng.random((count, M - 1)), axis=1)
    edges = np.concatenate([np.zeros((count, 1)), cuts, np.ones((count, 1))], axis=1)
    w = np.diff(edges, axis=1)
    return w / w.sum(axis=1, keepdims=True)
