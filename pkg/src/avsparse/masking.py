"""Random masking of visual patch tokens and audio spectrogram-patch tokens.

Masked tokens are removed from the sequence, not zeroed, so downstream
compute scales with the number of survivors. Audio arrives already patched:
a spectrogram grid flattened into one token per patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ShapeError
from .numeric import make_rng, sample_without_replacement

MODALITIES = ("visual", "audio")


@dataclass(frozen=True)
class TokenSet:
    """Ordered token embeddings of one modality with stable origin ids."""

    modality: str
    tokens: np.ndarray
    origin_ids: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InvalidInput(f"unknown modality {self.modality!r}")
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be a 2-D array, got shape {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise InvalidInput("tokens contain non-finite values")
        ids = np.asarray(self.origin_ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != tokens.shape[0]:
            raise ShapeError(f"{tokens.shape[0]} tokens but {ids.shape[0]} origin ids")
        if np.unique(ids).size != ids.size:
            raise InvalidInput("origin_ids must be unique")
        tokens.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "origin_ids", ids)

    @classmethod
    def from_array(cls, modality: str, tokens) -> "TokenSet":
        tokens = np.asarray(tokens, dtype=np.float64)
        return cls(modality, tokens, np.arange(tokens.shape[0]))

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def to_json(self) -> dict:
        return {
            "modality": self.modality,
            "dim": self.dim,
            "origin_ids": self.origin_ids.tolist(),
            "tokens": self.tokens.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TokenSet":
        try:
            modality = doc["modality"]
            dim = int(doc["dim"])
            ids = doc["origin_ids"]
            rows = doc["tokens"]
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed TokenSet document: {exc}") from exc
        if any(len(r) != dim for r in rows):
            raise ShapeError(f"every token must have dim {dim}")
        tokens = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
        return cls(modality, tokens, np.asarray(ids, dtype=np.int64))


@dataclass(frozen=True)
class MaskPlan:
    total: int
    masked: tuple[int, ...]
    ratio: float
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise InvalidInput(f"ratio out of range: {self.ratio}")
        masked = tuple(sorted(int(i) for i in self.masked))
        if len(set(masked)) != len(masked):
            raise InvalidInput("masked indices must be distinct")
        if masked and (masked[0] < 0 or masked[-1] >= self.total):
            raise InvalidInput(f"masked index outside [0, {self.total})")
        if len(masked) != math.floor(self.ratio * self.total):
            raise InvalidInput(
                f"plan masks {len(masked)} of {self.total} tokens, expected floor({self.ratio} * {self.total})"
            )
        object.__setattr__(self, "masked", masked)

    def to_json(self) -> dict:
        return {"total": self.total, "masked": list(self.masked), "ratio": self.ratio, "seed": self.seed}


@dataclass(frozen=True)
class MaskSchedule:
    """Masking is active for 0-based epochs ``0 .. active_epochs - 1``."""

    active_epochs: int = 3

    def __post_init__(self):
        if self.active_epochs < 0:
            raise InvalidInput(f"active_epochs must be >= 0, got {self.active_epochs}")


def plan_mask(total: int, ratio: float, rng) -> MaskPlan:
    """Choose ``floor(ratio * total)`` token positions uniformly at random."""
    if not 0.0 <= ratio <= 1.0:
        raise InvalidInput(f"ratio out of range: {ratio}")
    if total < 1:
        raise InvalidInput(f"total must be >= 1, got {total}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    k = math.floor(ratio * total)
    masked = sample_without_replacement(total, k, make_rng(rng))
    return MaskPlan(total=total, masked=tuple(masked.tolist()), ratio=ratio, seed=seed)


def apply_mask(ts: TokenSet, plan: MaskPlan) -> TokenSet:
    if plan.total != len(ts):
        raise ShapeError(f"plan covers {plan.total} tokens but the set holds {len(ts)}")
    if not plan.masked:
        return ts
    keep = np.ones(len(ts), dtype=bool)
    keep[list(plan.masked)] = False
    return TokenSet(ts.modality, ts.tokens[keep], ts.origin_ids[keep])


def mask_active(epoch: int, schedule: MaskSchedule) -> bool:
    return epoch < schedule.active_epochs
