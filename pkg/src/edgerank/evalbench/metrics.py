"""Tolerance-matched precision/recall, ODS/OIS/AP and certainty-level (UaR) scores.

Multi-annotator accounting: a predicted pixel counts as correct when it is
matched in at least one ground-truth map; recall pools matched ground-truth
pixels over all maps. Zero predicted pixels give precision 1.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..certainty import MatchTolerance, correspond_pixels
from ..errors import DatasetError, ShapeError
from ..gridcore import AnnotationLike, AnnotationSet, as_annotation_set

log = logging.getLogger(__name__)

__all__ = [
    "PRPoint",
    "ImageRecord",
    "EvalScores",
    "CertaintyLevel",
    "default_thresholds",
    "pr_point",
    "evaluate",
    "evaluate_uar",
    "filter_ground_truth",
    "interpolated_ap",
]


def default_thresholds(k: int = 99) -> np.ndarray:
    return np.arange(1, k + 1) / (k + 1)


def _prf(cnt_p, sum_p, cnt_r, sum_r):
    precision = cnt_p / sum_p if sum_p > 0 else 1.0
    recall = cnt_r / sum_r if sum_r > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    cnt_p: int  # predicted pixels matched in some ground-truth map
    sum_p: int  # predicted pixels
    cnt_r: int  # ground-truth pixels matched, pooled over maps
    sum_r: int  # ground-truth pixels, pooled over maps

    @property
    def tp(self) -> int:
        return self.cnt_p

    @property
    def fp(self) -> int:
        return self.sum_p - self.cnt_p

    @property
    def fn(self) -> int:
        return self.sum_r - self.cnt_r

    @property
    def precision(self) -> float:
        return _prf(self.cnt_p, self.sum_p, self.cnt_r, self.sum_r)[0]

    @property
    def recall(self) -> float:
        return _prf(self.cnt_p, self.sum_p, self.cnt_r, self.sum_r)[1]

    @property
    def f1(self) -> float:
        return _prf(self.cnt_p, self.sum_p, self.cnt_r, self.sum_r)[2]


@dataclass(frozen=True)
class ImageRecord:
    index: int
    best_threshold: float
    best_f1: float
    precision: float
    recall: float


@dataclass
class EvalScores:
    ods: float
    ois: float
    ap: float
    ods_threshold: float
    per_image: list = field(default_factory=list)
    # (threshold, precision, recall, f1) at dataset level
    pr_table: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def summary(self) -> str:
        return f"ODS={self.ods:.3f} OIS={self.ois:.3f} AP={self.ap:.3f}"


class CertaintyLevel(enum.Enum):
    """Ground-truth filters, from all annotated edges to unanimous ones."""

    ANY = ("c>0.0", 0.0, True)
    GE_02 = ("c>=0.2", 0.2, False)
    GE_04 = ("c>=0.4", 0.4, False)
    GE_06 = ("c>=0.6", 0.6, False)
    GE_08 = ("c>=0.8", 0.8, False)
    ALL = ("c=1.0", 1.0, False)

    def __init__(self, label, bound, strict):
        self.label = label
        self.bound = bound
        self.strict = strict

    def mask(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if self.strict:
            return c > self.bound
        # float32 multiples of 1/n may sit a hair below the decimal bound
        return c >= self.bound - 1e-6

    @classmethod
    def parse(cls, text: str) -> "CertaintyLevel":
        key = text.replace(" ", "").replace("≥", ">=")
        for lv in cls:
            if lv.label == key or lv.name == text:
                return lv
        raise ValueError(f"unknown certainty level {text!r}")


def pr_point(pred_binary, gts: AnnotationLike, tol=MatchTolerance(), mode="greedy", threshold: float = float("nan")) -> PRPoint:
    pred = np.asarray(pred_binary) > 0
    s = as_annotation_set(gts)
    if pred.shape != s.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground-truth shape {s.shape}")
    matched_any = np.zeros(pred.shape, dtype=bool)
    cnt_r = sum_r = 0
    for g in s:
        res = correspond_pixels(pred, g.values, tol, mode)
        matched_any |= res.matched
        cnt_r += res.count
        sum_r += g.count
    return PRPoint(threshold, int(matched_any.sum()), int(pred.sum()), cnt_r, sum_r)


def _image_counts(pred, gts: AnnotationSet, tol, thresholds, mode) -> np.ndarray:
    """(T, 4) integer table of cnt_p, sum_p, cnt_r, sum_r per threshold."""
    p = np.asarray(pred, dtype=np.float64)
    out = np.zeros((len(thresholds), 4), dtype=np.int64)
    prev_key, prev_row = None, None
    for k, t in enumerate(thresholds):
        binary = p >= t
        key = binary.tobytes()
        if key != prev_key:
            pt = pr_point(binary, gts, tol, mode, t)
            prev_key, prev_row = key, (pt.cnt_p, pt.sum_p, pt.cnt_r, pt.sum_r)
        out[k] = prev_row
    return out


def interpolated_ap(recall, precision) -> float:
    """Area under precision(recall) after making precision non-increasing.

    Equal recalls keep their best precision; the curve is extended flat to
    recall 0 and integrated with the trapezoid rule over the achieved recalls.
    """
    r = np.asarray(recall, dtype=np.float64)
    pr = np.asarray(precision, dtype=np.float64)
    if r.size == 0:
        return 0.0
    ur = np.unique(r)
    up = np.array([pr[r == v].max() for v in ur])
    up = np.maximum.accumulate(up[::-1])[::-1]
    xs = np.concatenate(([0.0], ur)) if ur[0] > 0 else ur
    ys = np.concatenate(([up[0]], up)) if ur[0] > 0 else up
    return float(np.clip(np.trapezoid(ys, xs), 0.0, 1.0))


def _check_inputs(preds, gts, thresholds):
    if len(preds) != len(gts):
        raise DatasetError(f"{len(preds)} predictions but {len(gts)} ground-truth sets")
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= 1:
        raise ValueError("thresholds must be strictly increasing inside (0, 1)")
    return t


def _score(tables, thresholds, skipped) -> EvalScores:
    kept = [(k, tab) for k, tab in enumerate(tables) if k not in skipped]
    if not kept:
        return EvalScores(0.0, 0.0, 0.0, float(thresholds[0]), skipped=sorted(skipped))
    total = np.sum([tab for _, tab in kept], axis=0)
    rows = [(float(t),) + _prf(*total[k]) for k, t in enumerate(thresholds)]
    f = np.array([r[3] for r in rows])
    best = int(np.argmax(f))
    per_image = []
    for idx, tab in kept:
        prf = [_prf(*row) for row in tab]
        b = int(np.argmax([x[2] for x in prf]))
        per_image.append(ImageRecord(idx, float(thresholds[b]), prf[b][2], prf[b][0], prf[b][1]))
    ois = float(np.mean([rec.best_f1 for rec in per_image]))
    ap = interpolated_ap([r[2] for r in rows], [r[1] for r in rows])
    return EvalScores(float(f[best]), ois, ap, float(thresholds[best]), per_image, rows, sorted(skipped))


def _run(preds, gts, tol, thresholds, mode, threads):
    sets = [as_annotation_set(g) for g in gts]
    skipped = set()
    for k, s in enumerate(sets):
        if np.asarray(preds[k]).shape != s.shape:
            raise ShapeError(f"image {k}: prediction shape {np.asarray(preds[k]).shape} != {s.shape}")
        if sum(m.count for m in s) == 0:
            skipped.add(k)
    if skipped:
        log.warning("skipping %d image(s) with empty ground truth: %s", len(skipped), sorted(skipped))
    work = lambda k: _image_counts(preds[k], sets[k], tol, thresholds, mode)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            tables = list(ex.map(work, range(len(sets))))
    else:
        tables = [work(k) for k in range(len(sets))]
    return _score(tables, thresholds, skipped)


def evaluate(preds: Sequence, gts: Sequence, tol=MatchTolerance(), thresholds=None, mode="greedy", threads: int = 1) -> EvalScores:
    """ODS, OIS and AP of (already thinned) probability maps.

    Images whose ground truth has no edge pixel have undefined recall; they
    are skipped with a warning.
    """
    t = _check_inputs(preds, gts, thresholds)
    return _run(preds, gts, tol, t, mode, threads)


def filter_ground_truth(gts: AnnotationLike, cert, level: CertaintyLevel) -> AnnotationSet:
    """Keep only ground-truth edge pixels whose certainty passes ``level``."""
    s = as_annotation_set(gts)
    c = np.asarray(cert)
    if c.shape != s.shape:
        raise ShapeError(f"certainty shape {c.shape} != ground-truth shape {s.shape}")
    keep = level.mask(c)
    return AnnotationSet(tuple((m.values > 0) & keep for m in s))


def evaluate_uar(preds, gts, cert_maps, level: CertaintyLevel, tol=MatchTolerance(), thresholds=None, mode="greedy", threads: int = 1) -> EvalScores:
    """Scores against ground truth restricted to one certainty level.

    Predictions are left untouched; only the ground-truth maps are filtered.
    """
    t = _check_inputs(preds, gts, thresholds)
    if len(cert_maps) != len(gts):
        raise DatasetError(f"{len(cert_maps)} certainty maps but {len(gts)} ground-truth sets")
    filtered = [filter_ground_truth(g, c, level) for g, c in zip(gts, cert_maps)]
    return _run(preds, filtered, tol, t, mode, threads)


def format_pr_table(scores: EvalScores) -> str:
    lines = ["# threshold\tprecision\trecall\tf1  (AP uses interpolated precision)"]
    lines += [f"{t:.4f}\t{p:.6f}\t{r:.6f}\t{f:.6f}" for t, p, r, f in scores.pr_table]
    return "\n".join(lines) + "\n"
