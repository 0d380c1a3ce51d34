"""Sorted prefix-sum evaluation of weighted smoothed-step sums.

For anchors ``a`` and weighted points ``(v_k, w_k)`` the step
``H(x) = clip(x / (2*delta) + 0.5, 0, 1)`` is piecewise linear, so

    sum_k w_k H(v_k - a)

splits into a saturated part (``v_k > a + delta``) and a linear window
(``|v_k - a| <= delta``). Both are read off prefix sums of ``w`` and ``w*v``
over the points sorted by ``v``, giving O((n + m) log n) instead of O(n*m).
Weights must be non-negative; results are clipped at 0 so prefix-sum
cancellation never flips the sign of a sum of non-negative terms.
"""
from __future__ import annotations

import numpy as np


def step_h(x, delta: float):
    """Smoothed unit step: 0 below -delta, linear on [-delta, delta], 1 above."""
    x = np.asarray(x, dtype=np.float64)
    out = np.clip(x / (2.0 * delta) + 0.5, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


class StepSweep:
    def __init__(self, values, weights=None, *, presorted: bool = False):
        v = np.asarray(values, dtype=np.float64)
        w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
        if not presorted:
            order = np.argsort(v, kind="stable")
            v, w = v[order], w[order]
        self.values = v
        self.cw = np.concatenate(([0.0], np.cumsum(w)))
        self.cwv = np.concatenate(([0.0], np.cumsum(w * v)))

    @property
    def total(self) -> float:
        return self.cw[-1]

    def above(self, anchors, delta: float) -> np.ndarray:
        """sum_k w_k H(v_k - a) for every anchor a."""
        a = np.asarray(anchors, dtype=np.float64)
        if self.values.size == 0:
            return np.zeros_like(a)
        hi = np.searchsorted(self.values, a + delta, side="right")
        lo = np.searchsorted(self.values, a - delta, side="left")
        full = self.cw[-1] - self.cw[hi]
        mw = self.cw[hi] - self.cw[lo]
        mwv = self.cwv[hi] - self.cwv[lo]
        return np.maximum(full + (mwv - a * mw) / (2.0 * delta) + 0.5 * mw, 0.0)

    def below(self, anchors, delta: float) -> np.ndarray:
        """sum_k w_k H(a - v_k), using H(x) + H(-x) = 1."""
        a = np.asarray(anchors, dtype=np.float64)
        if self.values.size == 0:
            return np.zeros_like(a)
        hi = np.searchsorted(self.values, a + delta, side="right")
        lo = np.searchsorted(self.values, a - delta, side="left")
        # points strictly below the window are saturated at 1
        full = self.cw[lo]
        mw = self.cw[hi] - self.cw[lo]
        mwv = self.cwv[hi] - self.cwv[lo]
        return np.maximum(full + (a * mw - mwv) / (2.0 * delta) + 0.5 * mw, 0.0)
