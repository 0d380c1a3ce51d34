"""Wall-clock comparison of the loss kernels on random inputs."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .losses import LossConfig, Strategy, ce_dice_combined, cb_ce_loss, overall_loss, rank_loss

WARMUP = 3
LOSSES = ("rank", "rank+sort", "ce", "ce+dice")


@dataclass(frozen=True)
class BenchRow:
    strategy: str
    loss: str
    size: int
    positive_fraction: float
    mean_ms: Optional[float]  # None when the run ran out of memory
    std_ms: Optional[float]
    repeats: int
    speedup: Optional[float] = None


def random_instance(size: int, positive_fraction: float, seed: int = 0, levels: int = 5):
    """Uniform scores, Bernoulli labels and certainties quantized to 1/levels."""
    rng = np.random.default_rng(seed)
    p = rng.random((size, size), dtype=np.float32)
    y = rng.random((size, size)) < positive_fraction
    if not y.any():
        y.flat[rng.integers(y.size)] = True
    c = np.where(y, rng.integers(1, levels + 1, (size, size)) / levels, 0.0).astype(np.float32)
    return p, y, c


def _callable(loss: str, strategy: Strategy, p, y, c, cfg: LossConfig):
    cfg = cfg.replace(strategy=strategy)
    if loss == "rank":
        return lambda: rank_loss(p, y, cfg)
    if loss == "rank+sort":
        cfg = cfg.replace(alpha=cfg.alpha or 1.0)
        return lambda: overall_loss(p, y, c, cfg)
    if loss == "ce":
        return lambda: cb_ce_loss(p, y)
    if loss == "ce+dice":
        return lambda: ce_dice_combined(p, y, 1.0, 1.0)
    raise ValueError(f"unknown loss {loss!r}")


def time_call(fn, repeats: int, warmup: int = WARMUP):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.fmean(samples), (statistics.stdev(samples) if len(samples) > 1 else 0.0)


def run_bench(
    sizes: Iterable[int] = (320,),
    positive_fractions: Iterable[float] = (0.01, 0.03, 0.07),
    strategies: Iterable = tuple(Strategy),
    losses: Iterable[str] = ("rank", "rank+sort"),
    repeats: int = 100,
    cfg: Optional[LossConfig] = None,
    seed: int = 0,
    progress=None,
) -> list:
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    cfg = cfg or LossConfig()
    strategies = [Strategy.parse(s) for s in strategies]
    rows = []
    for size in sizes:
        for frac in positive_fractions:
            p, y, c = random_instance(size, frac, seed)
            for loss in losses:
                # score-based losses have a single implementation
                strats = strategies if loss in ("rank", "rank+sort") else [None]
                group = []
                for strat in strats:
                    fn = _callable(loss, strat or Strategy.VECTORIZED, p, y, c, cfg)
                    try:
                        mean, std = time_call(fn, repeats)
                    except MemoryError:
                        mean = std = None
                    name = strat.value if strat else "-"
                    group.append(BenchRow(name, loss, size, frac, mean, std, repeats))
                    if progress:
                        progress(group[-1])
                base = next((r for r in group if r.strategy == Strategy.REFERENCE.value), group[0])
                for r in group:
                    ratio = None
                    if r.mean_ms is not None and base.mean_ms is not None:
                        ratio = base.mean_ms / r.mean_ms
                    rows.append(BenchRow(**{**r.__dict__, "speedup": ratio}))
    return rows


def format_report(rows) -> str:
    out = ["strategy\tloss\tsize\tpos_frac\tmean_ms\tstd_ms\trepeats\tspeedup"]
    for r in rows:
        if r.mean_ms is None:
            timing = "OOM\tOOM"
        else:
            timing = f"{r.mean_ms:.3f}\t{r.std_ms:.3f}"
        ratio = "-" if r.speedup is None else f"{r.speedup:.2f}"
        out.append(f"{r.strategy}\t{r.loss}\t{r.size}\t{r.positive_fraction:g}\t{timing}\t{r.repeats}\t{ratio}")
    return "\n".join(out) + "\n"
