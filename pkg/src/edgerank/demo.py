"""Toy end-to-end training of a 5x5 linear edge scorer with error-driven gradients.

The scene is a union of random filled polygons. Ground truth is the inner
boundary of the union; each synthetic annotator sees that boundary shifted by
up to one pixel, which gives the certainty map something to disagree about.
Pixel scores are ``sigmoid(correlate(image, W) + b)``; the rank/sort gradient
with respect to each score is chained through the sigmoid onto W and b.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np
from scipy import ndimage
from scipy.special import expit
from skimage.draw import polygon as draw_polygon

from .certainty import MatchTolerance, certainty_map
from .errors import ConfigError, EdgeRankError
from .gridcore import binarize_merged, merge_annotations
from .losses import LossConfig, overall_loss, rank_loss, sort_loss

KERNEL = 5


class DivergenceError(EdgeRankError, ArithmeticError):
    pass


@dataclass(frozen=True)
class DemoConfig:
    size: int = 64
    seed: int = 7
    lr: float = 0.5
    iterations: int = 200
    polygons: int = 4
    annotators: int = 3
    jitter: bool = True  # False gives identical annotators (uniform certainty)
    noise: float = 0.05
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.size < KERNEL:
            raise ConfigError(f"size must be >= {KERNEL}")
        if self.annotators < 1:
            raise ConfigError("annotators must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "DemoConfig":
        """Build from string key=value pairs; loss keys go to LossConfig."""
        demo_keys = {f.name: f.type for f in fields(cls) if f.name != "loss"}
        loss_keys = {f.name for f in fields(LossConfig)}
        demo_kw, loss_kw = {}, {}
        for key, raw in values.items():
            if key in demo_keys:
                if key == "jitter":
                    demo_kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
                elif key in ("lr", "noise"):
                    demo_kw[key] = float(raw)
                else:
                    demo_kw[key] = int(raw)
            elif key in loss_keys:
                loss_kw[key] = raw if key == "strategy" else (int(raw) if key in ("tile_size", "max_sweep_levels") else float(raw))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(loss=LossConfig(**loss_kw), **demo_kw)


@dataclass
class Scene:
    image: np.ndarray
    truth: np.ndarray
    annotations: list
    labels: np.ndarray
    certainty: np.ndarray


def make_scene(cfg: DemoConfig, tol: Optional[MatchTolerance] = None) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.size
    mask = np.zeros((n, n), dtype=bool)
    for _ in range(cfg.polygons):
        centre = rng.uniform(0.25 * n, 0.75 * n, size=2)
        k = int(rng.integers(3, 7))
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        rad = rng.uniform(0.1 * n, 0.25 * n, k)
        rr, cc = draw_polygon(centre[0] + rad * np.sin(ang), centre[1] + rad * np.cos(ang), (n, n))
        mask[rr, cc] = True
    truth = mask & ~ndimage.binary_erosion(mask)
    image = mask.astype(np.float64) + cfg.noise * rng.standard_normal((n, n))
    annotations = []
    for _ in range(cfg.annotators):
        if cfg.jitter:
            dy, dx = rng.integers(-1, 2, size=2)
            shifted = np.zeros_like(truth)
            src = truth[max(0, -dy):n - max(0, dy), max(0, -dx):n - max(0, dx)]
            shifted[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
            annotations.append(shifted)
        else:
            annotations.append(truth.copy())
    labels = np.asarray(binarize_merged(merge_annotations(annotations), 0)) > 0
    cert = np.asarray(certainty_map(annotations, tol or MatchTolerance.pixels(1)))
    return Scene(image, truth, annotations, labels, cert)


def _patches(image: np.ndarray) -> np.ndarray:
    """(KERNEL*KERNEL, H, W) stack of shifted copies, zero padded."""
    r = KERNEL // 2
    padded = np.pad(image, r)
    h, w = image.shape
    return np.stack([padded[a:a + h, b:b + w] for a in range(KERNEL) for b in range(KERNEL)])


def train(cfg: DemoConfig, emit: Optional[Callable[[int, float, float], None]] = None):
    """Run the trainer; returns a list of (iteration, rank_loss, sort_loss).

    Raises NoPositivesError for an empty scene and DivergenceError when the
    optimized loss exceeds ten times its initial value or the scorer's
    parameters stop being finite.
    """
    scene = make_scene(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    weights = 0.1 * rng.standard_normal(KERNEL * KERNEL)
    bias = 0.0
    stack = _patches(scene.image)
    lcfg = cfg.loss
    use_sort = lcfg.alpha > 0
    history = []
    initial = None
    for it in range(cfg.iterations + 1):
        score = np.tensordot(weights, stack, axes=1) + bias
        p = expit(score)
        if use_sort:
            res = overall_loss(p, scene.labels, scene.certainty, lcfg)
            r_loss = rank_loss(p, scene.labels, lcfg).loss
            s_loss = (res.loss - r_loss) / lcfg.alpha
        else:
            res = rank_loss(p, scene.labels, lcfg)
            r_loss = res.loss
            s_loss = sort_loss(p, scene.labels, scene.certainty, lcfg).loss
        history.append((it, r_loss, s_loss))
        if emit:
            emit(it, r_loss, s_loss)
        if initial is None:
            initial = res.loss
        elif initial > 0 and res.loss > 10.0 * initial:
            raise DivergenceError(f"loss {res.loss:.4g} at iteration {it} exceeds 10x initial {initial:.4g}")
        if it == cfg.iterations:
            break
        g_score = res.grad * p * (1.0 - p)
        weights = weights - cfg.lr * np.tensordot(stack, g_score, axes=([1, 2], [0, 1]))
        bias = bias - cfg.lr * float(g_score.sum())
        if not (np.all(np.isfinite(weights)) and np.isfinite(bias)):
            raise DivergenceError(f"non-finite scorer parameters after iteration {it}")
    return history
