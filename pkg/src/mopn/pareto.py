"""Pareto fronts, quality indicators and reference solvers.

All objectives are minimized. Hypervolume is exact for two and three
objectives; spacing follows the extreme-point form used for bi-objective
fronts and averages over the three pairwise projections for three
objectives.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .actor import ActorModel, greedy_tours
from .errors import InvalidInstanceError, ShapeError
from .instances import RootInstance, edge_costs, leaf_matrix, tour_objective

BRUTE_FORCE_LIMIT = 10


@dataclass
class ParetoFront:
    objectives: np.ndarray                   # (K, M), sorted lexicographically
    tours: list | None = None
    weights: np.ndarray | None = None        # (K, M) source weight per point
    elapsed: float = field(default=0.0, compare=False)

    @property
    def M(self) -> int:
        return self.objectives.shape[1]

    def __len__(self):
        return self.objectives.shape[0]

    def to_csv(self) -> str:
        m = self.M
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        head = [f"f{i + 1}" for i in range(m)]
        if self.weights is not None:
            head += [f"w{i + 1}" for i in range(m)]
        if self.tours is not None:
            head.append("tour")
        writer.writerow(head)
        for k, obj in enumerate(self.objectives):
            row = [repr(float(v)) for v in obj]
            if self.weights is not None:
                row += [repr(float(v)) for v in self.weights[k]]
            if self.tours is not None:
                row.append("-".join(str(int(c)) for c in self.tours[k]))
            writer.writerow(row)
        return buf.getvalue()


def front_from_csv(text: str) -> ParetoFront:
    rows = list(csv.reader(io.StringIO(text)))
    head, body = rows[0], rows[1:]
    fcols = [i for i, h in enumerate(head) if h.startswith("f")]
    wcols = [i for i, h in enumerate(head) if h.startswith("w")]
    objs = np.array([[float(r[i]) for i in fcols] for r in body]).reshape(len(body), len(fcols))
    weights = np.array([[float(r[i]) for i in wcols] for r in body]) if wcols else None
    tours = None
    if "tour" in head:
        t = head.index("tour")
        tours = [np.array([int(c) for c in r[t].split("-")]) for r in body]
    return ParetoFront(objs, tours, weights)


# ---------------------------------------------------------------- dominance

def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def nondominated_indices(points) -> np.ndarray:
    """Indices of the minimization-Pareto-optimal points, duplicates collapsed to their first copy.

    Returned in lexicographic order of the objective vectors.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeError(f"points must be (K, M), got {pts.shape}")
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    _, first = np.unique(pts, axis=0, return_index=True)  # lexicographic order
    first = first[np.lexsort(pts[first].T[::-1])]
    cand = pts[first]
    if pts.shape[1] == 2:
        keep = []
        best = np.inf
        for k, (_, f2) in enumerate(cand):
            if f2 < best:
                keep.append(k)
                best = f2
        return first[np.array(keep, dtype=np.int64)]
    # a dominator precedes its victim lexicographically, so one forward pass suffices
    kept = np.empty_like(cand)
    keep = []
    for k, p in enumerate(cand):
        front = kept[:len(keep)]
        if len(keep) and np.any(np.all(front <= p, axis=1)):
            continue  # duplicates are gone, so <= everywhere means strict somewhere
        kept[len(keep)] = p
        keep.append(k)
    return first[np.array(keep, dtype=np.int64)]


def nondominated_filter(points, tours=None, weights=None) -> ParetoFront:
    pts = np.asarray(points, dtype=np.float64)
    idx = nondominated_indices(pts)
    return ParetoFront(
        pts[idx],
        None if tours is None else [np.asarray(tours[i]) for i in idx],
        None if weights is None else np.asarray(weights, dtype=np.float64)[idx],
    )


def weakly_dominated_by(front, point, tol: float = 0.0) -> bool:
    """True if some member of ``front`` is <= ``point`` in every objective."""
    f = np.asarray(front, dtype=np.float64)
    return bool(np.any(np.all(f <= np.asarray(point) + tol, axis=1)))


# ---------------------------------------------------------------- indicators

def reference_point(fronts) -> np.ndarray:
    """Per-objective maximum over every point of every front."""
    arrays = [_objs(f) for f in fronts]
    arrays = [a for a in arrays if a.size]
    if not arrays:
        raise ValueError("no points to build a reference point from")
    return np.vstack(arrays).max(axis=0)


def extreme_points(fronts) -> np.ndarray:
    """Row ``m`` is the point with the smallest objective ``m`` over the union.

    Ties go to the point that is smallest in the remaining objectives, in order.
    """
    union = np.vstack([_objs(f) for f in fronts if _objs(f).size])
    m = union.shape[1]
    out = np.empty((m, m))
    for j in range(m):
        order = [j] + [i for i in range(m) if i != j]
        keys = tuple(union[:, i] for i in reversed(order))
        out[j] = union[np.lexsort(keys)[0]]
    return out


def _objs(front) -> np.ndarray:
    if isinstance(front, ParetoFront):
        return front.objectives
    arr = np.asarray(front, dtype=np.float64)
    return arr if arr.ndim == 2 else arr.reshape(-1, arr.shape[-1] if arr.ndim else 0)


def _hv2(pts, ref) -> float:
    # pts nondominated, sorted by f1 ascending (so f2 descending)
    total = 0.0
    for k in range(len(pts)):
        right = pts[k + 1, 0] if k + 1 < len(pts) else ref[0]
        total += (right - pts[k, 0]) * (ref[1] - pts[k, 1])
    return total


def hv(front, ref) -> float:
    """Exact hypervolume dominated by ``front`` and bounded by ``ref`` (M = 2 or 3)."""
    pts = _objs(front)
    ref = np.asarray(ref, dtype=np.float64)
    if pts.size == 0:
        warnings.warn("hypervolume of an empty front is 0", stacklevel=2)
        return 0.0
    m = pts.shape[1]
    if ref.shape != (m,):
        raise ShapeError(f"reference point {ref.shape} for {m} objectives")
    inside = np.all(pts <= ref, axis=1)
    if not np.all(inside):
        warnings.warn(f"{int((~inside).sum())} point(s) beyond the reference point ignored", stacklevel=2)
        pts = pts[inside]
        if pts.size == 0:
            return 0.0
    pts = pts[nondominated_indices(pts)]
    if m == 2:
        return _hv2(pts, ref)
    if m == 3:
        order = np.argsort(pts[:, 2], kind="stable")
        pts = pts[order]
        total = 0.0
        for k in range(len(pts)):
            top = pts[k + 1, 2] if k + 1 < len(pts) else ref[2]
            depth = top - pts[k, 2]
            if depth <= 0:
                continue
            layer = pts[:k + 1, :2]
            layer = layer[nondominated_indices(layer)]
            total += depth * _hv2(layer, ref[:2])
        return total
    raise NotImplementedError("hypervolume is implemented for 2 and 3 objectives only")


def _spc2(pts, first_extreme, last_extreme) -> float:
    pts = pts[nondominated_indices(pts)]  # sorted by f1
    d_f = float(np.min(np.linalg.norm(pts - first_extreme, axis=1)))
    d_l = float(np.min(np.linalg.norm(pts - last_extreme, axis=1)))
    if len(pts) == 1:
        return 0.0 if d_f == 0.0 and d_l == 0.0 else 1.0
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    mean_gap = gaps.mean()
    return float((d_f + d_l + np.abs(gaps - mean_gap).sum()) / (d_f + d_l + len(gaps) * mean_gap))


def spc(front, extremes=None) -> float:
    """Spacing of a front; 0 is perfectly even.

    ``extremes`` holds one extreme point per objective (see :func:`extreme_points`);
    by default the front's own extremes are used. Three-objective fronts are
    scored as the mean over the projections onto objective pairs (0,1), (0,2), (1,2).
    """
    pts = _objs(front)
    if pts.size == 0:
        raise ValueError("spacing of an empty front is undefined")
    m = pts.shape[1]
    ext = extreme_points([pts]) if extremes is None else np.asarray(extremes, dtype=np.float64)
    if ext.shape != (m, m):
        raise ShapeError(f"need {m} extreme points of dimension {m}, got {ext.shape}")
    if m == 2:
        return _spc2(pts, ext[0], ext[1])
    if m == 3:
        vals = []
        for i, j in ((0, 1), (0, 2), (1, 2)):
            vals.append(_spc2(pts[:, [i, j]], ext[i, [i, j]], ext[j, [i, j]]))
        return float(np.mean(vals))
    raise NotImplementedError("spacing is implemented for 2 and 3 objectives only")


# ---------------------------------------------------------------- solvers

def solve_front(actor: ActorModel, rins: RootInstance, weights) -> ParetoFront:
    """One greedy rollout per weight vector, nondominated-filtered.

    ``elapsed`` on the result covers the forward passes only.
    """
    if actor.kind is not None and actor.kind is not rins.kind:
        raise InvalidInstanceError(f"model is for {actor.kind.tag}, instance is {rins.kind.tag}")
    if actor.d_problem != rins.kind.d_problem:
        raise InvalidInstanceError(f"model input width {actor.d_problem} does not fit {rins.kind.tag}")
    w = np.asarray(weights.vectors if hasattr(weights, "vectors") else weights, dtype=np.float64)
    x = leaf_matrix(rins.kind, np.broadcast_to(rins.features, (len(w),) + rins.features.shape), w)
    t0 = time.perf_counter()
    tours = greedy_tours(actor, x)
    elapsed = time.perf_counter() - t0
    objs = np.array([tour_objective(rins, t) for t in tours])
    front = nondominated_filter(objs, tours, w)
    front.elapsed = elapsed
    return front


def enumerate_cycles(n: int) -> np.ndarray:
    """Each undirected Hamiltonian cycle once: start at city 0, second city below the last."""
    if n < 3:
        return np.arange(n)[None].copy()
    rows = [(0,) + p for p in itertools.permutations(range(1, n)) if p[0] < p[-1]]
    out = np.array(rows, dtype=np.int64)
    assert len(out) == factorial(n - 1) // 2
    return out


def brute_force_front(rins: RootInstance, limit: int = BRUTE_FORCE_LIMIT) -> ParetoFront:
    """Exact Pareto front by enumerating all (n-1)!/2 cycles."""
    if rins.n > limit:
        raise InvalidInstanceError(
            f"brute force enumerates (n-1)!/2 tours; n={rins.n} exceeds the limit of {limit}"
        )
    t0 = time.perf_counter()
    tours = enumerate_cycles(rins.n)
    costs = edge_costs(rins.kind, rins.features, tours)
    # correctly rounded sums so values match tour_objective bit for bit
    objs = np.array([[math.fsum(row) for row in costs[:, :, m]] for m in range(rins.n_objectives)]).T
    front = nondominated_filter(objs, tours)
    front.elapsed = time.perf_counter() - t0
    return front


def scalarized_matrix(rins: RootInstance, w) -> np.ndarray:
    """Pairwise weighted edge costs ``sum_m w_m c^m_ij``."""
    n = rins.n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pair = np.stack([i.ravel(), j.ravel()], axis=1)
    # a 2-city "tour" i -> j -> i has edge 0 equal to c_ij
    c = edge_costs(rins.kind, rins.features, pair)[:, 0, :]
    return (c @ np.asarray(w, dtype=np.float64)).reshape(n, n)


def nearest_neighbor_tour(cost: np.ndarray, start: int = 0) -> np.ndarray:
    n = cost.shape[0]
    tour = [start]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    for _ in range(n - 1):
        row = np.where(seen, np.inf, cost[tour[-1]])
        nxt = int(np.argmin(row))
        tour.append(nxt)
        seen[nxt] = True
    return np.array(tour, dtype=np.int64)


def two_opt(tour: np.ndarray, cost: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Best-improvement 2-opt on a symmetric cost matrix until no move gains more than ``tol``."""
    t = np.array(tour, dtype=np.int64)
    n = len(t)
    if n < 4:
        return t
    ii, jj = np.triu_indices(n, k=2)
    ok = ~((ii == 0) & (jj == n - 1))  # that pair shares an edge
    ii, jj = ii[ok], jj[ok]
    while True:
        nxt = np.roll(t, -1)
        a, b, c, d = t[ii], nxt[ii], t[jj], nxt[jj]
        delta = cost[a, c] + cost[b, d] - cost[a, b] - cost[c, d]
        k = int(np.argmin(delta))
        if delta[k] >= -tol:
            return t
        i, j = ii[k], jj[k]
        t[i + 1:j + 1] = t[i + 1:j + 1][::-1]


def heuristic_baseline(rins: RootInstance, weights, local_search: bool = True) -> ParetoFront:
    """Nearest neighbour on the weighted edge costs, then 2-opt, once per weight vector."""
    w = np.asarray(weights.vectors if hasattr(weights, "vectors") else weights, dtype=np.float64)
    t0 = time.perf_counter()
    tours = []
    for wk in w:
        cost = scalarized_matrix(rins, wk)
        tour = nearest_neighbor_tour(cost)
        if local_search:
            tour = two_opt(tour, cost)
        tours.append(tour)
    elapsed = time.perf_counter() - t0
    objs = np.array([tour_objective(rins, t) for t in tours])
    front = nondominated_filter(objs, tours, w)
    front.elapsed = elapsed
    return front


def random_tour_objectives(rins: RootInstance, count: int, rng: np.random.Generator) -> np.ndarray:
    tours = np.argsort(rng.random((count, rins.n)), axis=1)
    return edge_costs(rins.kind, rins.features, tours).sum(axis=1)
