"""Score-based comparison losses: class-balanced CE, Dice, CE + Dice.

All losses are sums over pixels (not means) and return exact analytic
gradients. Probabilities are clamped to ``[CE_EPS, 1 - CE_EPS]`` before any
log; the gradient is evaluated at the clamped value.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .config import LossConfig, LossResult

CE_EPS = 1e-7
DICE_EPS = 1e-7


def _pair(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != label shape {y.shape}")
    return p, (y > 0).astype(np.float64)


def _ce_terms(p, y, w_pos, w_neg):
    q = np.clip(p, CE_EPS, 1.0 - CE_EPS)
    per_pixel = -w_pos * y * np.log(q) - w_neg * (1.0 - y) * np.log1p(-q)
    grad = -w_pos * y / q + w_neg * (1.0 - y) / (1.0 - q)
    return per_pixel, grad


def class_balance(y) -> float:
    """beta = |N| / |N u P|."""
    y = np.asarray(y)
    return float((y == 0).sum()) / y.size


def cb_ce_loss(p, y) -> LossResult:
    """Class-balanced binary cross entropy.

    Positives are weighted by beta = |N|/|N u P| and negatives by 1 - beta,
    so the rare edge class gets the larger weight.
    """
    p, y = _pair(p, y)
    beta = class_balance(y)
    per_pixel, grad = _ce_terms(p, y, beta, 1.0 - beta)
    return LossResult(float(per_pixel.sum()), grad)


def ce_loss(p, y) -> LossResult:
    p, y = _pair(p, y)
    per_pixel, grad = _ce_terms(p, y, 1.0, 1.0)
    return LossResult(float(per_pixel.sum()), grad)


def dice_loss(p, y) -> LossResult:
    """(sum p^2 + sum y^2) / (2 sum p*y).

    Kept in this printed form, whose minimum is 1 (reached at p == y), not
    the usual ``1 - dice``. The offset does not change the gradient direction.
    """
    p, y = _pair(p, y)
    num = (p * p).sum() + (y * y).sum()
    den = 2.0 * ((p * y).sum() + DICE_EPS)
    grad = 2.0 * p / den - num * 2.0 * y / den**2
    return LossResult(float(num / den), grad)


def ce_dice_combined(p, y, alpha_d: float = 1.0, beta_d: float = 1.0) -> LossResult:
    if alpha_d < 0 or beta_d < 0:
        raise ValueError("loss weights must be non-negative")
    d = dice_loss(p, y)
    c = ce_loss(p, y)
    return LossResult(alpha_d * d.loss + beta_d * c.loss, alpha_d * d.grad + beta_d * c.grad)


def uncertainty_weighted_loss(p, y, c, base: str = "cb_ce", cfg: LossConfig | None = None) -> LossResult:
    """Scale each pixel's loss by (1 - c_i) before summing.

    ``base`` is one of ``"cb_ce"``, ``"ce"`` or ``"rank"``. For the rank loss
    the per-pixel loss is a positive's ranking error, so the weight scales
    that positive's primary terms.
    """
    from .ranking import weighted_rank_loss

    p_arr, y_arr = _pair(p, y)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != p_arr.shape:
        raise ShapeError(f"certainty shape {c.shape} != prediction shape {p_arr.shape}")
    weight = 1.0 - c
    if base == "rank":
        return weighted_rank_loss(p_arr, y_arr, weight, cfg)
    if base == "cb_ce":
        beta = class_balance(y_arr)
        per_pixel, grad = _ce_terms(p_arr, y_arr, beta, 1.0 - beta)
    elif base == "ce":
        per_pixel, grad = _ce_terms(p_arr, y_arr, 1.0, 1.0)
    else:
        raise ValueError(f"unknown base loss {base!r}")
    return LossResult(float((weight * per_pixel).sum()), weight * grad)
