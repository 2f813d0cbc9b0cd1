"""Loss-driven key-subset selection and InfoBatch-style soft pruning.

Selection tracks, for every epoch, which samples have a loss above the
previous epoch's mean. Those hard flags are summed within groups of ``k``
consecutive epochs, the groups are down-weighted geometrically by ``r``,
and the ``n`` samples with the largest weighted count form the key subset.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import InvalidInput, ShapeError
from .numeric import argsort_desc, as_vector, make_rng

log = logging.getLogger(__name__)

WARMUP_EPOCH = -1
DEFAULT_SUBSET_SIZE = 10_819


@dataclass(frozen=True)
class SelectionConfig:
    epochs: int = 15
    group_size: int = 3
    decay: float = 0.618
    subset_size: int = DEFAULT_SUBSET_SIZE

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInput(f"epochs must be >= 1, got {self.epochs}")
        if self.group_size < 1:
            raise InvalidInput(f"group_size must be >= 1, got {self.group_size}")
        if not 0.0 < self.decay <= 1.0:
            raise InvalidInput(f"decay must lie in (0, 1], got {self.decay}")
        if self.subset_size < 1:
            raise InvalidInput(f"subset_size must be >= 1, got {self.subset_size}")

    @property
    def n_groups(self) -> int:
        return math.ceil(self.epochs / self.group_size)

    def group_weights(self) -> list[float]:
        return [self.decay ** (g - 1) for g in range(1, self.n_groups + 1)]


@dataclass(frozen=True)
class InfoBatchConfig:
    prune_ratio: float = 0.5
    delta: float = 0.875
    total_epochs: int = 15

    def __post_init__(self):
        if not 0.0 <= self.prune_ratio < 1.0:
            raise InvalidInput(f"prune_ratio must lie in [0, 1), got {self.prune_ratio}")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidInput(f"delta must lie in (0, 1], got {self.delta}")
        if self.total_epochs < 1:
            raise InvalidInput(f"total_epochs must be >= 1, got {self.total_epochs}")

    @property
    def anneal_epoch(self) -> int:
        """First 0-based epoch that trains on the full data."""
        return math.floor(self.delta * self.total_epochs)


@dataclass
class ScoreBoard:
    scores: np.ndarray
    epochs_list: list[np.ndarray] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class PruneDecision:
    kept: np.ndarray
    rescale: np.ndarray  # factor per kept index, aligned with ``kept``

    def factors(self, n: int) -> np.ndarray:
        """Dense length-``n`` factor vector with zeros for pruned samples."""
        out = np.zeros(n)
        out[self.kept] = self.rescale
        return out


@dataclass(frozen=True)
class KeySubset:
    indices: tuple[int, ...]
    merged_scores: np.ndarray

    def to_json(self, config: SelectionConfig | None = None) -> dict:
        doc = {"indices": list(self.indices), "merged_scores": self.merged_scores.tolist()}
        if config is not None:
            doc["config"] = {
                "epochs": config.epochs,
                "group_size": config.group_size,
                "decay": config.decay,
                "subset_size": config.subset_size,
            }
        return doc


def _mean_within_range(x: np.ndarray) -> float:
    # fsum gives the correctly rounded sum; the clamp keeps a constant vector's mean exact
    mu = math.fsum(x.tolist()) / x.size
    return min(max(mu, float(x.min())), float(x.max()))


def warmup_scores(losses) -> ScoreBoard:
    s = as_vector(losses, "losses")
    if s.size == 0:
        raise InvalidInput("warm-up losses are empty")
    if np.any(s < 0):
        log.warning("negative losses in warm-up; selection still uses the mean")
    return ScoreBoard(scores=s.copy())


def epoch_update(board: ScoreBoard, losses) -> ScoreBoard:
    """Flag samples whose new loss beats the mean of the previous scores."""
    new = as_vector(losses, "losses")
    if new.shape[0] != board.n_samples:
        raise ShapeError(f"expected {board.n_samples} losses, got {new.shape[0]}")
    if np.any(new < 0):
        log.warning("negative losses in epoch %d", len(board.epochs_list))
    mu = _mean_within_range(board.scores)
    flags = (new > mu).astype(np.int64)
    return ScoreBoard(scores=new.copy(), epochs_list=[*board.epochs_list, flags])


def merge_epoch_flags(board: ScoreBoard, cfg: SelectionConfig) -> np.ndarray:
    if len(board.epochs_list) != cfg.epochs:
        raise InvalidInput(f"board holds {len(board.epochs_list)} epochs, config expects {cfg.epochs}")
    m = np.zeros(board.n_samples)
    for g, w in enumerate(cfg.group_weights(), start=1):
        first = (g - 1) * cfg.group_size + 1
        last = min(g * cfg.group_size, cfg.epochs)
        for e in range(first, last + 1):
            # groups and epochs are 1-based; epochs_list is 0-based
            m = m + w * board.epochs_list[e - 1]
    return m


def select_key_subset(m, n: int) -> KeySubset:
    m = as_vector(m, "merged scores")
    if not 1 <= n <= m.size:
        raise InvalidInput(f"subset size {n} outside [1, {m.size}]")
    top = argsort_desc(m)[:n]
    return KeySubset(tuple(sorted(int(i) for i in top)), m)


def run_selection(loss_oracle: Callable[[int], Iterable[float]], cfg: SelectionConfig) -> KeySubset:
    """Run the full selection loop.

    ``loss_oracle(epoch)`` must return a loss for every sample; it is called
    once with ``WARMUP_EPOCH`` and then for epochs ``0 .. cfg.epochs - 1``.
    """
    board = warmup_scores(loss_oracle(WARMUP_EPOCH))
    if cfg.subset_size > board.n_samples:
        raise InvalidInput(f"subset size {cfg.subset_size} exceeds {board.n_samples} samples")
    for epoch in range(cfg.epochs):
        board = epoch_update(board, loss_oracle(epoch))
    return select_key_subset(merge_epoch_flags(board, cfg), cfg.subset_size)


def infobatch_step(losses, cfg: InfoBatchConfig, epoch: int, rng) -> PruneDecision:
    """Soft-prune below-mean samples and rescale the survivors.

    One uniform draw is consumed per sample whether or not it is a pruning
    candidate, so the stream position never depends on the losses.
    """
    x = as_vector(losses, "losses")
    n = x.size
    if n == 0:
        raise InvalidInput("losses are empty")
    if not 0 <= epoch < cfg.total_epochs:
        raise InvalidInput(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch >= cfg.anneal_epoch or cfg.prune_ratio == 0.0:
        return PruneDecision(np.arange(n), np.ones(n))
    u = make_rng(rng).random(n)
    easy = x < _mean_within_range(x)
    pruned = easy & (u < cfg.prune_ratio)
    kept = np.flatnonzero(~pruned)
    rescale = np.where(easy[kept], 1.0 / (1.0 - cfg.prune_ratio), 1.0)
    return PruneDecision(kept, rescale)


def read_loss_log(lines: Iterable[str], n_epochs: int | None = None) -> dict[int, np.ndarray]:
    """Parse JSON Lines records ``{"epoch": e, "losses": [...]}`` (epoch -1 is warm-up).

    Raises ``json.JSONDecodeError`` on malformed lines and ``InvalidInput`` on
    contract violations such as a missing warm-up or a gap in epochs.
    """
    records: dict[int, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if not isinstance(rec, dict) or "epoch" not in rec or "losses" not in rec:
            raise InvalidInput(f"line {lineno}: expected an object with 'epoch' and 'losses'")
        epoch = rec["epoch"]
        if not isinstance(epoch, int) or epoch < WARMUP_EPOCH:
            raise InvalidInput(f"line {lineno}: bad epoch {epoch!r}")
        if epoch in records:
            raise InvalidInput(f"line {lineno}: duplicate epoch {epoch}")
        records[epoch] = as_vector(rec["losses"], f"losses of epoch {epoch}")
    if WARMUP_EPOCH not in records:
        raise InvalidInput("loss log has no warm-up record (epoch -1)")
    found = sorted(e for e in records if e != WARMUP_EPOCH)
    if found != list(range(len(found))):
        raise InvalidInput(f"loss log epochs must be 0..E-1 without gaps, got {found}")
    if n_epochs is not None and len(found) != n_epochs:
        raise InvalidInput(f"loss log has {len(found)} epochs, config expects {n_epochs}")
    sizes = {v.size for v in records.values()}
    if len(sizes) != 1:
        raise ShapeError(f"loss vectors have differing lengths {sorted(sizes)}")
    return records
