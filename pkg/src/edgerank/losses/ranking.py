"""Ranking (1 - AP) and certainty-sorting losses with error-driven gradients.

Every public entry point dispatches to one of three kernels that compute the
same quantities:

* reference  -- one Python iteration per positive pixel, numpy inside.
* semi       -- positive/positive pairs as tiled dense blocks, positive/
                negative pairs through sorted prefix sums.
* vectorized -- everything through sorted prefix sums (per certainty level
                for the sorting loss), falling back to tiled blocks when the
                certainty map has too many distinct levels.

The gradient of a counting loss does not exist, so each kernel returns the
error-driven surrogate: for a pair (i, j) with primary term L_ij, pixel i
receives -L_ij and pixel j receives +L_ij, and the result is divided by |P|
like the loss itself.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import CertaintyCoverageError, ConfigError, NoPositivesError, ShapeError
from ._sweep import StepSweep, step_h
from .config import SELF_WEIGHT, LossConfig, LossResult, PrimaryTerms, Strategy

__all__ = ["rank_loss", "sort_loss", "overall_loss", "primary_terms", "step_h"]

# below this missorted mass a positive is treated as correctly sorted
_SORT_EPS = 1e-12


def _flatten(p, y, c=None):
    p_arr = np.asarray(p, dtype=np.float64)
    y_arr = np.asarray(y)
    if p_arr.shape != y_arr.shape:
        raise ShapeError(f"prediction shape {p_arr.shape} != label shape {y_arr.shape}")
    pos = y_arr.reshape(-1) > 0
    if not pos.any():
        raise NoPositivesError("label map has no positive pixel")
    c_flat = None
    if c is not None:
        c_arr = np.asarray(c, dtype=np.float64)
        if c_arr.shape != p_arr.shape:
            raise ShapeError(f"certainty shape {c_arr.shape} != prediction shape {p_arr.shape}")
        c_flat = c_arr.reshape(-1)
        cp = c_flat[pos]
        bad = ~np.isfinite(cp) | (cp < 0) | (cp > 1)
        if bad.any():
            raise CertaintyCoverageError(
                f"{int(bad.sum())} positive pixel(s) lack a certainty in [0, 1]"
            )
    return p_arr.reshape(-1), pos, c_flat, p_arr.shape


# ---------------------------------------------------------------------------
# ranking loss kernels
#
# Each returns (per-positive ranking error, gradient over all pixels). The
# per-positive error is 1 - rank+(i)/rank(i), already multiplied by the
# optional row weight.


def _rank_reference(p, pos, delta, weight, self_w):
    pos_idx = np.flatnonzero(pos)
    pos_p = p[pos_idx]
    # negatives scored at or below min(pos) - delta never enter a rank
    rel = np.flatnonzero(~pos & (p > pos_p.min() - delta))
    neg_p = p[rel]
    grad = np.zeros_like(p)
    neg_grad = np.zeros(len(rel))
    errors = np.zeros(len(pos_idx))
    for k, i in enumerate(pos_idx):
        hp = step_h(pos_p - p[i], delta)
        hp[k] = 0.0
        hn = step_h(neg_p - p[i], delta)
        rank_pos = self_w + hp.sum()
        fp = hn.sum()
        rank = rank_pos + fp
        errors[k] = weight[k] * fp / rank
        if fp > 0:
            grad[i] -= errors[k]
            neg_grad += hn * (weight[k] / rank)
    grad[rel] += neg_grad
    return errors, grad


def _rank_negative_side(p, pos, pos_p, rank_pos, delta, weight):
    neg_idx = np.flatnonzero(~pos)
    neg_sweep = StepSweep(p[neg_idx])
    fp = neg_sweep.above(pos_p, delta)
    rank = rank_pos + fp
    errors = weight * fp / rank
    grad = np.zeros_like(p)
    grad[pos] = -errors
    pos_sweep = StepSweep(pos_p, weight / rank)
    grad[neg_idx] = pos_sweep.below(p[neg_idx], delta)
    return errors, grad


def _rank_semi(p, pos, delta, weight, self_w, tile):
    pos_p = p[pos]
    rank_pos = np.empty(len(pos_p))
    for s in range(0, len(pos_p), tile):
        block = step_h(pos_p[None, :] - pos_p[s:s + tile, None], delta)
        # diagonal holds H(0) = 0.5 for the excluded self-pair
        rank_pos[s:s + tile] = self_w + block.sum(axis=1) - 0.5
    return _rank_negative_side(p, pos, pos_p, rank_pos, delta, weight)


def _rank_vectorized(p, pos, delta, weight, self_w):
    pos_p = p[pos]
    rank_pos = self_w + StepSweep(pos_p).above(pos_p, delta) - 0.5
    return _rank_negative_side(p, pos, pos_p, rank_pos, delta, weight)


def _rank_dispatch(p, pos, cfg: LossConfig, weight=None, self_w=SELF_WEIGHT):
    n_pos = int(pos.sum())
    if weight is None:
        weight = np.ones(n_pos)
    delta = cfg.delta_rank
    if cfg.strategy is Strategy.REFERENCE:
        errors, grad = _rank_reference(p, pos, delta, weight, self_w)
    elif cfg.strategy is Strategy.SEMI_VECTORIZED:
        errors, grad = _rank_semi(p, pos, delta, weight, self_w, cfg.tile_size)
    else:
        errors, grad = _rank_vectorized(p, pos, delta, weight, self_w)
    return float(errors.sum() / n_pos), grad / n_pos


def rank_loss(p, y, cfg: Optional[LossConfig] = None) -> LossResult:
    """1 - AP of positives ranked over negatives, with its error-driven gradient.

    >>> import numpy as np
    >>> r = rank_loss(np.array([[0.2, 0.8]]), np.array([[1, 0]]))
    >>> round(r.loss, 12)
    0.5
    """
    cfg = cfg or LossConfig()
    p_flat, pos, _, shape = _flatten(p, y)
    loss, grad = _rank_dispatch(p_flat, pos, cfg)
    return LossResult(loss, grad.reshape(shape))


# ---------------------------------------------------------------------------
# sorting loss kernels
#
# Per positive i (sums over positives j, self-term weight 1):
#   cur(i)  = sum_j H_ij (1 - c_j) / sum_j H_ij
#   tgt(i)  = same sums restricted to c_j >= c_i
#   miss(i) = sum_j H_ij [c_j < c_i]
# and the error cur - tgt is pushed from i onto the missorted j.


def _sort_finish(cur, tgt, miss):
    err = cur - tgt
    active = miss > _SORT_EPS
    err = np.where(active, err, 0.0)
    share = np.zeros_like(err)
    share[active] = err[active] / miss[active]
    return err, share


def _sort_reference(pp, pc, delta, self_w):
    n = len(pp)
    unc = 1.0 - pc
    errors = np.zeros(n)
    grad = np.zeros(n)
    for k in range(n):
        h = step_h(pp - pp[k], delta)
        h[k] = self_w
        cur = (h * unc).sum() / h.sum()
        ge = pc >= pc[k]
        hg = h * ge
        tgt = (hg * unc).sum() / hg.sum()
        missorted = h * (pc < pc[k])
        mass = missorted.sum()
        if mass > _SORT_EPS:
            errors[k] = cur - tgt
            grad[k] -= errors[k]
            grad += missorted * (errors[k] / mass)
    return errors, grad


def _sort_tiled(pp, pc, delta, self_w, tile):
    n = len(pp)
    unc = 1.0 - pc
    errors = np.zeros(n)
    grad = np.zeros(n)
    for s in range(0, n, tile):
        rows = slice(s, min(s + tile, n))
        h = step_h(pp[None, :] - pp[rows, None], delta)
        r = np.arange(rows.start, rows.stop)
        h[r - s, r] = self_w
        ge = pc[None, :] >= pc[rows, None]
        hg = h * ge
        cur = (h @ unc) / h.sum(axis=1)
        tgt = (hg @ unc) / hg.sum(axis=1)
        missorted = h - hg
        mass = missorted.sum(axis=1)
        err, share = _sort_finish(cur, tgt, mass)
        errors[rows] = err
        grad[rows] -= err
        grad += share @ missorted
    return errors, grad


def _sort_levels(pp, pc, delta, self_w):
    unc = 1.0 - pc
    order = np.argsort(pp, kind="stable")
    sp, sc, su = pp[order], pc[order], unc[order]
    # H(0) = 0.5 is what the sweep counts for the self pair
    fix = self_w - 0.5
    all_h = StepSweep(sp, presorted=True).above(pp, delta) + fix
    all_hu = StepSweep(sp, su, presorted=True).above(pp, delta) + fix * unc
    cur = all_hu / all_h
    tgt = np.empty_like(pp)
    miss = np.empty_like(pp)
    levels = np.unique(pc)
    members = [np.flatnonzero(pc == v) for v in levels]
    for v, idx in zip(levels, members):
        ge = sc >= v
        a = pp[idx]
        hg = StepSweep(sp[ge], presorted=True).above(a, delta) + fix
        hgu = StepSweep(sp[ge], su[ge], presorted=True).above(a, delta) + fix * unc[idx]
        tgt[idx] = hgu / hg
        miss[idx] = StepSweep(sp[~ge], presorted=True).above(a, delta)
    errors, share = _sort_finish(cur, tgt, miss)
    grad = -errors
    s_share = share[order]
    for v, idx in zip(levels, members):
        gt = sc > v
        if gt.any():
            grad[idx] += StepSweep(sp[gt], s_share[gt], presorted=True).below(pp[idx], delta)
    return errors, grad


def _sort_dispatch(p, pos, c, cfg: LossConfig, self_w=SELF_WEIGHT):
    pp = p[pos]
    pc = c[pos]
    delta = cfg.delta_sort
    if cfg.strategy is Strategy.REFERENCE:
        errors, g = _sort_reference(pp, pc, delta, self_w)
    elif cfg.strategy is Strategy.SEMI_VECTORIZED:
        errors, g = _sort_tiled(pp, pc, delta, self_w, cfg.tile_size)
    elif len(np.unique(pc)) > cfg.max_sweep_levels:
        errors, g = _sort_tiled(pp, pc, delta, self_w, cfg.tile_size)
    else:
        errors, g = _sort_levels(pp, pc, delta, self_w)
    n_pos = len(pp)
    grad = np.zeros_like(p)
    grad[pos] = g / n_pos
    return float(errors.sum() / n_pos), grad


def sort_loss(p, y, c, cfg: Optional[LossConfig] = None) -> LossResult:
    """Penalty for positives whose score order disagrees with their certainty order.

    Zero when every positive with a higher score also has a certainty at least
    as high, e.g. when all positives share one certainty value.
    """
    cfg = cfg or LossConfig()
    if c is None:
        raise CertaintyCoverageError("sort_loss needs a certainty map")
    p_flat, pos, c_flat, shape = _flatten(p, y, c)
    loss, grad = _sort_dispatch(p_flat, pos, c_flat, cfg)
    return LossResult(loss, grad.reshape(shape))


def overall_loss(p, y, c=None, cfg: Optional[LossConfig] = None) -> LossResult:
    """rank + alpha * sort. ``alpha`` must be 0 when no certainty map exists."""
    cfg = cfg or LossConfig()
    if c is None and cfg.alpha > 0:
        raise ConfigError("alpha > 0 requires a certainty map")
    p_flat, pos, c_flat, shape = _flatten(p, y, c)
    loss, grad = _rank_dispatch(p_flat, pos, cfg)
    if cfg.alpha > 0:
        s_loss, s_grad = _sort_dispatch(p_flat, pos, c_flat, cfg)
        loss += cfg.alpha * s_loss
        grad = grad + cfg.alpha * s_grad
    return LossResult(loss, grad.reshape(shape))


def weighted_rank_loss(p, y, row_weight, cfg: Optional[LossConfig] = None) -> LossResult:
    """Rank loss with every positive's primary terms scaled by ``row_weight``."""
    cfg = cfg or LossConfig()
    p_flat, pos, _, shape = _flatten(p, y)
    w = np.asarray(row_weight, dtype=np.float64).reshape(-1)[pos]
    loss, grad = _rank_dispatch(p_flat, pos, cfg, weight=w)
    return LossResult(loss, grad.reshape(shape))


def primary_terms(p, y, c=None, cfg: Optional[LossConfig] = None, which: str = "rank") -> PrimaryTerms:
    """Sparse nonzero pairwise terms L_ij of the rank or sort loss.

    Rank terms pair a positive i with a negative j; sort terms pair two
    positives. Summing all terms and dividing by |P| gives the loss back.
    """
    cfg = cfg or LossConfig()
    which = which.lower()
    if which not in ("rank", "sort"):
        raise ValueError("which must be 'rank' or 'sort'")
    p_flat, pos, c_flat, shape = _flatten(p, y, c if which == "sort" else None)
    if which == "sort" and c_flat is None:
        raise CertaintyCoverageError("sort terms need a certainty map")
    pos_idx = np.flatnonzero(pos)
    rows, cols, vals = [], [], []
    if which == "rank":
        delta = cfg.delta_rank
        neg_idx = np.flatnonzero(~pos)
        pos_p, neg_p = p_flat[pos_idx], p_flat[neg_idx]
        for k, i in enumerate(pos_idx):
            hp = step_h(pos_p - p_flat[i], delta)
            hp[k] = 0.0
            hn = step_h(neg_p - p_flat[i], delta)
            rank = SELF_WEIGHT + hp.sum() + hn.sum()
            nz = np.flatnonzero(hn)
            rows.append(np.full(len(nz), i))
            cols.append(neg_idx[nz])
            vals.append(hn[nz] / rank)
    else:
        delta = cfg.delta_sort
        pp, pc = p_flat[pos_idx], c_flat[pos_idx]
        unc = 1.0 - pc
        for k, i in enumerate(pos_idx):
            h = step_h(pp - pp[k], delta)
            h[k] = SELF_WEIGHT
            ge = pc >= pc[k]
            cur = (h * unc).sum() / h.sum()
            tgt = (h * ge * unc).sum() / (h * ge).sum()
            missorted = h * (pc < pc[k])
            mass = missorted.sum()
            if mass <= _SORT_EPS:
                continue
            nz = np.flatnonzero(missorted)
            rows.append(np.full(len(nz), i))
            cols.append(pos_idx[nz])
            vals.append((cur - tgt) * missorted[nz] / mass)
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
    return PrimaryTerms(
        which=which,
        shape=shape,
        i=cat(rows, np.int64),
        j=cat(cols, np.int64),
        value=cat(vals, np.float64),
        n_positives=len(pos_idx),
    )
