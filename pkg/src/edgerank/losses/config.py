from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

# Pairwise sums skip i == j and add 1 for pixel i itself to rank(i) and
# rank+(i), so a perfect ranking scores AP = 1. Sorting-error sums keep the
# j == i term with weight 1.
SELF_WEIGHT = 1.0


class Strategy(str, enum.Enum):
    REFERENCE = "reference"
    SEMI_VECTORIZED = "semi"
    VECTORIZED = "vectorized"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "reference": cls.REFERENCE,
            "ref": cls.REFERENCE,
            "foriterations": cls.REFERENCE,
            "semi": cls.SEMI_VECTORIZED,
            "semivectorized": cls.SEMI_VECTORIZED,
            "vectorized": cls.VECTORIZED,
            "vec": cls.VECTORIZED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown strategy {value!r}") from None


def check_delta(value: float, name: str = "delta") -> float:
    value = float(value)
    if not 0.0 < value <= 1.0:
        raise ConfigError(f"{name} must lie in (0, 1], got {value}")
    return value


@dataclass(frozen=True)
class LossConfig:
    """Parameters of the rank/sort losses.

    ``delta_rank`` of 0.1 suits multi-annotator data, 0.4 single-label data.
    ``tile_size`` bounds the number of positives per materialized pairwise
    block.
    """

    delta_rank: float = 0.1
    delta_sort: float = 0.1
    alpha: float = 0.0
    strategy: Strategy = Strategy.VECTORIZED
    tile_size: int = 256
    # above this many distinct certainty levels the vectorized sort kernel
    # switches from per-level sweeps to tiled pairwise blocks
    max_sweep_levels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "delta_rank", check_delta(self.delta_rank, "delta_rank"))
        object.__setattr__(self, "delta_sort", check_delta(self.delta_sort, "delta_sort"))
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if int(self.tile_size) < 1:
            raise ConfigError("tile_size must be >= 1")
        object.__setattr__(self, "tile_size", int(self.tile_size))

    def replace(self, **changes) -> "LossConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad: np.ndarray

    def __iter__(self):
        yield self.loss
        yield self.grad


@dataclass(frozen=True)
class PrimaryTerms:
    """Nonzero pairwise primary terms as flat (row-major) pixel indices."""

    which: str
    shape: tuple
    i: np.ndarray = field(repr=False)
    j: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)
    n_positives: int = 0

    def __len__(self):
        return len(self.value)

    def triples(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.value.tolist()))

    def reconstruct(self) -> float:
        """(1/|P|) * sum of all terms: the loss the terms decompose."""
        return float(self.value.sum()) / self.n_positives
