"""Attention-guided token merging.

Tokens are scored by the mean attention probability they receive from a set
of query tokens. Scores that are IQR outliers become key tokens (falling back
to the top quarter when nothing stands out), every other token joins the key
it is most similar to, and each cluster collapses into one softmax-weighted
embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, ShapeError
from .masking import TokenSet
from .numeric import argsort_desc, as_matrix, as_vector, quartiles, scaled_dot_attention, softmax

IQR_WHISKER = 1.5


@dataclass(frozen=True)
class AttentionInputs:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray | None = None

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        K = as_matrix(self.K, "K")
        V = K if self.V is None else as_matrix(self.V, "V")
        if Q.shape[0] < 1 or K.shape[0] < 1:
            raise ShapeError("need at least one query row and one key row")
        if Q.shape[1] != K.shape[1]:
            raise ShapeError(f"Q has dim {Q.shape[1]} but K has dim {K.shape[1]}")
        if V.shape[0] != K.shape[0]:
            raise ShapeError(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_json(cls, doc: dict) -> "AttentionInputs":
        try:
            q, k = doc["Q"], doc["K"]
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed attention document: {exc}") from exc
        v = doc.get("V")
        return cls(_matrix_from_rows(q, "Q"), _matrix_from_rows(k, "K"), None if v is None else _matrix_from_rows(v, "V"))


def _matrix_from_rows(rows, name):
    if not isinstance(rows, list) or not rows or any(not isinstance(r, list) for r in rows):
        raise ShapeError(f"{name} must be a non-empty list of rows")
    if len({len(r) for r in rows}) != 1:
        raise ShapeError(f"{name} rows have differing lengths")
    return np.asarray(rows, dtype=np.float64)


@dataclass(frozen=True)
class MergeResult:
    key_indices: tuple[int, ...]
    assignment: dict[int, int]
    merged: TokenSet
    compression_ratio: float
    scores: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "key_indices": list(self.key_indices),
            "assignment": {str(i): k for i, k in sorted(self.assignment.items())},
            "compression_ratio": self.compression_ratio,
        }


def importance_scores(inp: AttentionInputs) -> np.ndarray:
    """Per-candidate importance: column mean of the attention probabilities."""
    probs, _ = scaled_dot_attention(inp.Q, inp.K, inp.V)
    return probs.mean(axis=0)


def select_key_tokens(scores) -> list[int]:
    s = as_vector(scores, "scores")
    n = s.size
    if n == 0:
        raise InvalidInput("no scores to select from")
    q1, _, q3 = quartiles(s)
    threshold = q3 + IQR_WHISKER * (q3 - q1)
    keys = np.flatnonzero(s > threshold)
    if keys.size == 0:
        keys = argsort_desc(s)[: math.ceil(n / 4)]
    return sorted(int(i) for i in keys)


def token_similarity(K, i: int, j: int) -> float:
    K = as_matrix(K, "K")
    n = K.shape[0]
    for idx in (i, j):
        if not 0 <= idx < n:
            raise InvalidInput(f"token index {idx} outside [0, {n})")
    return float(K[i] @ K[j])


def assign_clusters(K, key_indices) -> dict[int, int]:
    """Map every non-key row of ``K`` to its most similar key (lowest key index on ties)."""
    K = as_matrix(K, "K")
    keys = np.asarray(sorted(key_indices), dtype=np.int64)
    n = K.shape[0]
    if keys.size == 0:
        raise InvalidInput("key_indices must be non-empty")
    if keys[0] < 0 or keys[-1] >= n or np.unique(keys).size != keys.size:
        raise InvalidInput(f"key_indices must be distinct indices in [0, {n})")
    others = np.setdiff1d(np.arange(n), keys)
    if others.size == 0:
        return {}
    sims = K[others] @ K[keys].T
    # argmax returns the first maximum, and keys are ascending
    best = keys[np.argmax(sims, axis=1)]
    return {int(i): int(k) for i, k in zip(others, best)}


def merge_tokens(ts: TokenSet, K, key_indices, assignment: dict[int, int]) -> TokenSet:
    K = as_matrix(K, "K")
    n = len(ts)
    if K.shape[0] != n:
        raise ShapeError(f"K has {K.shape[0]} rows for {n} tokens")
    keys = list(key_indices)
    key_set = set(keys)
    if not keys or len(key_set) != len(keys) or any(not 0 <= k < n for k in keys):
        raise InvalidInput("key_indices must be distinct, non-empty and in range")
    expected = set(range(n)) - key_set
    if set(assignment) != expected:
        raise InvalidInput("assignment must cover exactly the non-key tokens")
    if any(k not in key_set for k in assignment.values()):
        raise InvalidInput("assignment targets must be key tokens")

    members: dict[int, list[int]] = {k: [k] for k in keys}
    for i in sorted(assignment):
        members[assignment[i]].append(i)

    merged = np.empty((len(keys), ts.dim))
    for row, k in enumerate(keys):
        cluster = members[k]
        if len(cluster) == 1:
            merged[row] = ts.tokens[k]
            continue
        w = softmax(K[cluster] @ K[k])
        merged[row] = w @ ts.tokens[cluster]
    return TokenSet(ts.modality, merged, ts.origin_ids[keys])


def prumerge(ts: TokenSet, inp: AttentionInputs) -> MergeResult:
    n = len(ts)
    if inp.K.shape[0] != n:
        raise ShapeError(f"attention covers {inp.K.shape[0]} tokens but the set holds {n}")
    scores = importance_scores(inp)
    keys = select_key_tokens(scores)
    assignment = assign_clusters(inp.K, keys)
    merged = merge_tokens(ts, inp.K, keys, assignment)
    return MergeResult(tuple(keys), assignment, merged, len(keys) / n, scores)
