"""Edge-normal non-maximum suppression followed by skeleton thinning."""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from ..gridcore import ProbMap

__all__ = ["edge_normals", "suppress_non_maxima", "nms_thin"]


def edge_normals(p: np.ndarray, radius: int = 2):
    """Unit edge-normal field from the dominant eigenvector of the structure tensor.

    The tensor is smoothed with a Gaussian window truncated at ``radius`` px.
    """
    p = np.asarray(p, dtype=np.float64)
    gy = ndimage.sobel(p, axis=0, mode="constant")
    gx = ndimage.sobel(p, axis=1, mode="constant")
    sigma = radius / 2.0
    smooth = lambda a: ndimage.gaussian_filter(a, sigma, mode="constant", truncate=radius / sigma)
    jxx, jyy, jxy = smooth(gx * gx), smooth(gy * gy), smooth(gx * gy)
    # angle of the major eigenvector of [[jxx, jxy], [jxy, jyy]]
    theta = 0.5 * np.arctan2(2.0 * jxy, jxx - jyy)
    return np.cos(theta), np.sin(theta)


def suppress_non_maxima(p: np.ndarray, radius: int = 2) -> np.ndarray:
    """Zero every pixel lower than either neighbour 1 px away along its normal."""
    p = np.asarray(p, dtype=np.float64)
    nx, ny = edge_normals(p, radius)
    rows, cols = np.nonzero(p > 0)
    if rows.size == 0:
        return np.zeros_like(p)
    vx, vy = nx[rows, cols], ny[rows, cols]
    fwd = ndimage.map_coordinates(p, [rows + vy, cols + vx], order=1, mode="constant", cval=0.0)
    bwd = ndimage.map_coordinates(p, [rows - vy, cols - vx], order=1, mode="constant", cval=0.0)
    centre = p[rows, cols]
    # relative slack absorbs interpolation rounding on plateaus
    keep = (centre >= fwd * (1 - 1e-9)) & (centre >= bwd * (1 - 1e-9))
    out = np.zeros_like(p)
    out[rows[keep], cols[keep]] = centre[keep]
    return out


def nms_thin(p, radius: int = 2, max_rounds: int = 32) -> ProbMap:
    """Suppress non-maxima, then thin the surviving support to 1-px ridges.

    Surviving pixels keep their original probabilities. The two steps are
    repeated until nothing changes, so the result is a fixpoint and applying
    the function again returns it unchanged.
    """
    cur = np.asarray(p, dtype=np.float64)
    for _ in range(max_rounds):
        sup = suppress_non_maxima(cur, radius)
        skeleton = thin(sup > 0)
        nxt = np.where(skeleton, sup, 0.0)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return ProbMap(cur.astype(np.float32))
