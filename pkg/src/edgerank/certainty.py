"""Per-pixel annotator certainty from distance-tolerant pixel correspondence.

A pixel of the OR map counts as matched in an annotator's map when that map
has an edge pixel within the Manhattan radius.

``correspond_pixels`` is the one-to-one matcher used by the evaluation
benchmark. Two modes:

* ``greedy``: candidate pairs within the radius are visited in ascending
  Manhattan distance, ties broken by row-major query index then target
  index; a pair is kept when both pixels are still free.
* ``exact``: maximum-cardinality matching of minimum total distance. Among
  the optimal matchings the one whose matched query set is lexicographically
  earliest (row-major) is returned, so the result is unique.
"""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidAnnotationSet, ShapeError
from .gridcore import AnnotationLike, CertaintyMap, as_annotation_set, or_combine

__all__ = [
    "MatchMode",
    "MatchTolerance",
    "MatchResult",
    "candidate_pairs",
    "correspond_pixels",
    "certainty_map",
    "certainty_from_average",
    "agreement_histogram",
]


class MatchMode(str, enum.Enum):
    GREEDY = "greedy"
    EXACT = "exact"


@dataclass(frozen=True)
class MatchTolerance:
    """Matching radius given as a fraction of the image diagonal.

    ``radius_px`` overrides the diagonal rule with a fixed pixel radius.
    """

    d_fraction: float = 0.0075
    radius_px: Optional[int] = None

    def __post_init__(self):
        if self.radius_px is None and not self.d_fraction > 0:
            raise ValueError("d_fraction must be > 0")
        if self.radius_px is not None and self.radius_px < 1:
            raise ValueError("radius_px must be >= 1")

    @classmethod
    def pixels(cls, radius: int) -> "MatchTolerance":
        return cls(d_fraction=0.0, radius_px=int(radius))

    def resolve(self, shape) -> int:
        if self.radius_px is not None:
            return self.radius_px
        h, w = shape[:2]
        # round before ceil so 0.0075 * 577.0... does not land on 4.0000000001
        return max(1, math.ceil(round(self.d_fraction * math.hypot(h, w), 9)))


@dataclass(frozen=True)
class MatchResult:
    matched: np.ndarray  # query-side bool grid
    target_matched: np.ndarray
    radius: int

    @property
    def count(self) -> int:
        return int(self.matched.sum())


def _ball_offsets(r: int):
    offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if abs(dy) + abs(dx) <= r]
    return np.array(offs, dtype=np.int64).reshape(-1, 2)


def candidate_pairs(query: np.ndarray, target: np.ndarray, radius: int):
    """All (query pixel, target pixel) pairs within Manhattan ``radius``.

    Returns flat row-major indices ``qi``, ``ti`` and distances ``dist``.
    """
    h, w = query.shape
    qy, qx = np.nonzero(query)
    lookup = np.full(h * w, -1, dtype=np.int64)
    t_flat = np.flatnonzero(target)
    lookup[t_flat] = t_flat
    qi_all, ti_all, d_all = [], [], []
    q_flat = qy * w + qx
    for dy, dx in _ball_offsets(radius):
        ty, tx = qy + dy, qx + dx
        ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        hit = np.full(len(qy), -1, dtype=np.int64)
        hit[ok] = lookup[ty[ok] * w + tx[ok]]
        sel = hit >= 0
        qi_all.append(q_flat[sel])
        ti_all.append(hit[sel])
        d_all.append(np.full(int(sel.sum()), abs(dy) + abs(dx), dtype=np.int64))
    if not qi_all:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(qi_all), np.concatenate(ti_all), np.concatenate(d_all)


def _greedy(qi, ti, dist):
    order = np.lexsort((ti, qi, dist))
    used_q, used_t = set(), set()
    mq, mt = [], []
    for k in order.tolist():
        q, t = int(qi[k]), int(ti[k])
        if q in used_q or t in used_t:
            continue
        used_q.add(q)
        used_t.add(t)
        mq.append(q)
        mt.append(t)
    return mq, mt


def _solve_component(cost: np.ndarray, penalty: float, must: np.ndarray):
    """Assignment with one private 'unmatched' column per row.

    Rows flagged in ``must`` have no unmatched option. Returns
    (objective, row -> column or -1) or None when infeasible.
    """
    nq, nt = cost.shape
    dummy = np.full((nq, nq), np.inf)
    diag = np.where(must, np.inf, penalty)
    dummy[np.arange(nq), np.arange(nq)] = diag
    full = np.hstack([cost, dummy])
    try:
        rows, cols = linear_sum_assignment(full)
    except ValueError:
        return None
    objective = full[rows, cols].sum()
    assign = np.where(cols < nt, cols, -1)
    out = np.full(nq, -1)
    out[rows] = assign
    return objective, out


def _exact(qi, ti, dist, radius):
    if len(qi) == 0:
        return [], []
    uq, q_local = np.unique(qi, return_inverse=True)
    ut, t_local = np.unique(ti, return_inverse=True)
    nq, nt = len(uq), len(ut)
    graph = coo_matrix((np.ones(len(qi)), (q_local, nq + t_local)), shape=(nq + nt, nq + nt))
    _, labels = connected_components(graph, directed=False)
    mq, mt = [], []
    for comp in np.unique(labels):
        rows = np.flatnonzero(labels[:nq] == comp)
        cols = np.flatnonzero(labels[nq:] == comp)
        r_pos = {r: k for k, r in enumerate(rows)}
        c_pos = {c: k for k, c in enumerate(cols)}
        cost = np.full((len(rows), len(cols)), np.inf)
        sel = np.flatnonzero(labels[q_local] == comp)
        for e in sel:
            cost[r_pos[q_local[e]], c_pos[t_local[e]]] = dist[e]
        # leaving a row unmatched must cost more than any matching's distance
        penalty = float(radius * min(len(rows), len(cols)) + 1)
        must = np.zeros(len(rows), dtype=bool)
        base = _solve_component(cost, penalty, must)
        best, assign = base
        # rows are already in row-major order (np.unique sorted them)
        forbid = np.zeros(len(rows), dtype=bool)
        for k in range(len(rows)):
            if assign[k] >= 0:
                must[k] = True
                continue
            trial_must = must.copy()
            trial_must[k] = True
            c = cost.copy()
            c[forbid] = np.inf
            res = _solve_component(c, penalty, trial_must)
            if res is not None and res[0] <= best + 1e-9:
                must[k] = True
                assign = res[1]
            else:
                forbid[k] = True
        for k in range(len(rows)):
            if assign[k] >= 0:
                mq.append(int(uq[rows[k]]))
                mt.append(int(ut[cols[assign[k]]]))
    return mq, mt


def correspond_pixels(query, target, tol: MatchTolerance | int = MatchTolerance(), mode="greedy") -> MatchResult:
    """One-to-one matching of query edge pixels to target edge pixels.

    ``tol`` may be a :class:`MatchTolerance` or a plain pixel radius.
    """
    q = np.asarray(query) > 0
    t = np.asarray(target) > 0
    if q.shape != t.shape:
        raise ShapeError(f"query shape {q.shape} != target shape {t.shape}")
    radius = tol if isinstance(tol, (int, np.integer)) else tol.resolve(q.shape)
    qi, ti, dist = candidate_pairs(q, t, int(radius))
    mode = MatchMode(mode)
    if mode is MatchMode.GREEDY:
        mq, mt = _greedy(qi, ti, dist)
    else:
        mq, mt = _exact(qi, ti, dist, int(radius))
    qm = np.zeros(q.size, dtype=bool)
    tm = np.zeros(t.size, dtype=bool)
    qm[np.asarray(mq, dtype=np.int64)] = True
    tm[np.asarray(mt, dtype=np.int64)] = True
    return MatchResult(qm.reshape(q.shape), tm.reshape(t.shape), int(radius))


def certainty_map(annotations: AnnotationLike, tol: MatchTolerance | int = MatchTolerance(), mode="greedy") -> CertaintyMap:
    """Fraction of annotators whose map matches each edge pixel of the OR map.

    Each OR-edge pixel is its own single-pixel query against every
    annotator map, so it counts as matched in map ``a`` when ``a`` has an
    edge pixel within the Manhattan radius. Running one joint one-to-one
    matching of the whole OR map instead would pair each annotator pixel
    with itself at distance 0 and reduce the result to plain averaging.
    For a single-pixel query both matching modes give the same answer;
    ``mode`` is validated and kept for symmetry with ``correspond_pixels``.
    """
    s = as_annotation_set(annotations)
    if s.n < 1:
        raise InvalidAnnotationSet("empty annotation set")
    MatchMode(mode)
    radius = int(tol if isinstance(tol, (int, np.integer)) else tol.resolve(s.shape))
    merged = np.asarray(or_combine(s)) > 0
    hits = np.zeros(merged.shape, dtype=np.int32)
    for m in s:
        edges = m.values > 0
        if not edges.any():
            continue
        dist = ndimage.distance_transform_cdt(~edges, metric="taxicab")
        hits += merged & (dist <= radius)
    return CertaintyMap(hits.astype(np.float32) / np.float32(s.n))


def certainty_from_average(annotations: AnnotationLike) -> CertaintyMap:
    """Plain pixel-wise mean of the annotations, with no spatial tolerance."""
    s = as_annotation_set(annotations)
    counts = s.stack().sum(axis=0, dtype=np.int32)
    return CertaintyMap(counts.astype(np.float32) / np.float32(s.n))


def agreement_histogram(c, n: int) -> dict:
    """Fraction of nonzero pixels at each agreement level k/n.

    Keys are the integers k = 1..n present in the map; values are
    ``(count, fraction)``.
    """
    v = np.asarray(c, dtype=np.float64)
    nz = v[v > 0]
    if nz.size == 0:
        return {}
    k = np.rint(nz * n).astype(int)
    counts = Counter(k.tolist())
    total = nz.size
    return {level: (counts[level], counts[level] / total) for level in sorted(counts)}


def format_histogram(hist: dict, n: int) -> str:
    lines = [f"{k / n:.4f}\t{cnt}\t{frac:.6f}" for k, (cnt, frac) in hist.items()]
    return "\n".join(lines) + ("\n" if lines else "")
