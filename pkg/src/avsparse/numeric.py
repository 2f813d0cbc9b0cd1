"""Deterministic numeric primitives used by every other module.

All randomness goes through :func:`make_rng`, a ``numpy.random.Generator``
backed by PCG64. PCG64 output is specified bit-for-bit and does not depend
on the platform, so a seed fully determines every stream.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInput, ShapeError

RNG_ALGORITHM = "numpy.PCG64"


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``; generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (bool, float)) or not isinstance(seed, (int, np.integer)):
        raise InvalidInput(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise InvalidInput(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def softmax(v) -> np.ndarray:
    """Max-subtracted softmax of a non-empty finite vector."""
    x = as_vector(v)
    if x.size == 0:
        raise InvalidInput("softmax of an empty vector")
    e = np.exp(x - x.max())
    return e / e.sum()


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def scaled_dot_attention(Q, K, V) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(probs, context)`` for ``softmax(Q K^T / sqrt(d)) V``.

    ``probs`` has shape ``(len(Q), len(K))`` and each row sums to one.
    """
    Q = as_matrix(Q, "Q")
    K = as_matrix(K, "K")
    V = as_matrix(V, "V")
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(f"Q has dim {Q.shape[1]} but K has dim {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
    if Q.shape[0] == 0 or K.shape[0] == 0 or Q.shape[1] == 0:
        raise ShapeError("attention needs at least one query, one key and d >= 1")
    logits = (Q @ K.T) / math.sqrt(Q.shape[1])
    probs = _softmax_rows(logits)
    return probs, probs @ V


def quartiles(v) -> tuple[float, float, float]:
    """Quartiles by linear interpolation at position ``p * (n - 1)`` of the sorted data."""
    x = as_vector(v)
    if x.size == 0:
        raise InvalidInput("quartiles of an empty vector")
    q1, q2, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    return float(q1), float(q2), float(q3)


def argsort_desc(v) -> np.ndarray:
    """Indices ordering ``v`` from largest to smallest; ties keep ascending index."""
    x = as_vector(v)
    # stable sort on the negation keeps equal values in index order
    return np.argsort(-x, kind="stable")


def sample_without_replacement(n: int, k: int, rng) -> np.ndarray:
    """Draw ``k`` distinct indices from ``range(n)``, returned sorted."""
    if n < 0 or k < 0:
        raise InvalidInput(f"n and k must be non-negative, got n={n}, k={k}")
    if k > n:
        raise InvalidInput(f"cannot draw {k} items from {n}")
    rng = make_rng(rng)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)`` via ``SeedSequence``."""
    make_rng(seed)  # validates the seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
