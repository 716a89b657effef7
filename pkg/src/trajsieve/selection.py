"""Keep/drop decisions from importance scores.

Training uses binary-concrete sampling: per neighbor, logit(score) plus
logistic noise through a temperature sigmoid gives a soft gate, binarized
at 0.5 with a straight-through gradient. The hard gate is Bernoulli with
P(keep) equal to the score exactly, independent of temperature. Inference
thresholds the raw scores deterministically; dropped people are then
physically removed from the predictor input by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class GumbelConfig:
    """Sampling and thresholding knobs.

    ``threshold`` nominally lives in (0, 1) but degenerate settings are
    allowed: 0 keeps everyone (baseline equivalence) and values above 1
    keep nobody but the primary. ``anneal`` is an optional multiplicative
    per-epoch temperature factor, off by default. ``min_keep`` keeps the
    top-k neighbors by score when fewer than k pass the threshold.
    """

    temperature: float = 1.0
    anneal: float | None = None
    threshold: float = 0.5
    min_keep: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"gumbel: temperature must be positive, got {self.temperature}")
        if self.threshold < 0:
            raise ConfigError(f"gumbel: threshold must be non-negative, got {self.threshold}")
        if self.anneal is not None and self.anneal <= 0:
            raise ConfigError(f"gumbel: anneal factor must be positive, got {self.anneal}")
        if self.min_keep < 0:
            raise ConfigError(f"gumbel: min_keep must be non-negative, got {self.min_keep}")


@dataclass
class SelectionMask:
    """Keep/drop decisions over all N people; entry 0 (the primary) is 1.

    In training mode ``gates`` is the straight-through tensor (length N)
    to multiply into attention; gradients flow through its soft values.
    In inference mode ``soft`` simply echoes the raw scores.
    """

    hard: np.ndarray
    soft: np.ndarray
    mode: str
    gates: ad.Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.hard = np.asarray(self.hard, dtype=np.float64)
        self.soft = np.asarray(self.soft, dtype=np.float64)
        if self.hard.shape != self.soft.shape or self.hard.ndim != 1:
            raise ContractError("selection mask: hard and soft must be equal-length vectors")
        if self.hard[0] != 1.0:
            raise ContractError("selection mask: the primary (entry 0) must be kept")
        if self.mode not in ("training", "inference"):
            raise ContractError(f"selection mask: unknown mode {self.mode!r}")

    @property
    def n_people(self) -> int:
        return self.hard.shape[0]

    @property
    def n_kept(self) -> int:
        return int(self.hard.sum())

    @property
    def keep_fraction(self) -> float:
        """Fraction of neighbors kept; 1.0 for a neighbor-free scene."""
        n_neighbors = self.n_people - 1
        if n_neighbors == 0:
            return 1.0
        return float(self.hard[1:].sum() / n_neighbors)

    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.hard == 1.0)


def gumbel_sample(scores: ad.Tensor, config: GumbelConfig, rng,
                  temperature: float | None = None) -> SelectionMask:
    """Sample one training mask from neighbor scores (length N-1 tensor).

    Per neighbor: l = logit(s), g ~ Logistic(0, 1), soft = sigmoid((l+g)/t),
    hard = [soft > 0.5]. The marginal P(hard = 1) equals s for every
    temperature. Scores at 0 or 1 are clamped into [1e-6, 1 - 1e-6] first
    (logged) so the logit stays finite.
    """
    t = config.temperature if temperature is None else temperature
    k = scores.data.shape[0]
    if k == 0:
        return SelectionMask(hard=np.ones(1), soft=np.ones(1), mode="training",
                             gates=ad.constant(np.ones(1)))
    n_clamped = int(np.sum((scores.data < SCORE_FLOOR) | (scores.data > 1.0 - SCORE_FLOOR)))
    if n_clamped:
        # Routine once training saturates scores, so keep it at debug level.
        log.debug("gumbel_sample: clamped %d saturated score(s) into [%g, %g]",
                  n_clamped, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    s = ad.clamp(scores, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    logit = ad.sub(ad.log(s), ad.log(ad.sub(ad.constant(np.ones(k)), s)))
    u = np.clip(rng.random(k), 1e-12, 1.0 - 1e-12)
    noise = ad.constant(np.log(u) - np.log1p(-u))
    soft = ad.sigmoid(ad.scale(ad.add(logit, noise), 1.0 / t))
    hard = ad.straight_through(soft, 0.5)
    gates = ad.concat([ad.constant(np.ones(1)), hard], axis=0)
    return SelectionMask(
        hard=np.concatenate([[1.0], hard.data]),
        soft=np.concatenate([[1.0], soft.data]),
        mode="training",
        gates=gates,
    )


def threshold_select(scores, config: GumbelConfig) -> SelectionMask:
    """Deterministic inference mask: keep neighbor i iff score_i >= threshold
    (ties kept), with an optional top-k floor from ``min_keep``."""
    raw = np.asarray(scores.data if isinstance(scores, ad.Tensor) else scores,
                     dtype=np.float64)
    if raw.ndim != 1:
        raise ContractError(f"threshold_select: scores must be a vector, got {raw.shape}")
    keep = raw >= config.threshold
    floor = min(config.min_keep, raw.shape[0])
    if keep.sum() < floor:
        order = np.argsort(-raw, kind="stable")
        keep = keep.copy()
        keep[order[:floor]] = True
    return SelectionMask(
        hard=np.concatenate([[1.0], keep.astype(np.float64)]),
        soft=np.concatenate([[1.0], raw]),
        mode="inference",
    )
