"""Core value types and probability primitives shared by every other module.

Everything here is small and immutable: vocabularies, dense probability
vectors, prompts that keep image context separate from text, and a
counter-based random stream whose draws are reproducible from
(seed, stream, counter) alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "AllZeroError",
    "MultimodalPrompt",
    "ProbDist",
    "RngState",
    "TokenId",
    "Vocab",
    "argmax",
    "normalize",
    "sample",
]

TokenId = int

# Validation tolerance for "sums to one"; tighter checks belong in tests.
PROB_SUM_TOL = 1e-9


class AllZeroError(ValueError):
    """Raised when a weight vector with no positive mass is normalized."""


# --------------------------------------------------------------------------- #
#  Value types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Vocab:
    """Token id space ``[0, size)`` with a designated end-of-sequence id."""

    size: int
    eos: TokenId

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")
        if not 0 <= self.eos < self.size:
            raise ValueError(f"eos id {self.eos} outside [0, {self.size})")


class ProbDist:
    """Dense float64 distribution over token ids.

    The underlying array is validated on construction (non-negative entries
    summing to one within ``PROB_SUM_TOL``) and then frozen, so instances can
    be shared without defensive copies.
    """

    __slots__ = ("probs",)

    def __init__(self, probs: np.ndarray | Sequence[float]) -> None:
        arr = np.array(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError(f"expected a 1-d vector of >= 2 entries, got shape {arr.shape}")
        if np.any(arr < 0.0):
            raise ValueError("probabilities must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities must sum to 1 within {PROB_SUM_TOL}, got {total!r}")
        arr.setflags(write=False)
        self.probs = arr

    def __len__(self) -> int:
        return int(self.probs.size)

    def __repr__(self) -> str:
        return f"ProbDist({np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True)
class MultimodalPrompt:
    """Prompt made of opaque image-context ids followed by text ids.

    ``image_ctx`` stands in for projected image embeddings: an image-aware
    model conditions on ``image_ctx`` then ``text`` in that fixed order, a
    text-only model sees ``text`` alone.  ``image_ctx`` may be empty; the
    text may not.
    """

    image_ctx: tuple[TokenId, ...]
    text: tuple[TokenId, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_ctx", tuple(self.image_ctx))
        object.__setattr__(self, "text", tuple(self.text))
        if not self.text:
            raise ValueError("prompt text must be non-empty")


class RngState:
    """Deterministic uniform stream addressed by ``(seed, stream, counter)``.

    Each named substream is an independent counter-based Philox stream keyed
    by the 64-bit seed plus a tuple of stream ids.  Every draw consumes
    exactly one word of the underlying stream, so a state can be rebuilt from
    the three address components alone; nothing global is touched.
    """

    __slots__ = ("seed", "stream", "counter", "_gen")

    def __init__(self, seed: int, stream: int | tuple[int, ...] = (), counter: int = 0) -> None:
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream = (stream,) if isinstance(stream, int) else tuple(int(s) for s in stream)
        self.counter = 0
        key = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(key))
        for _ in range(counter):
            self.uniform()

    def uniform(self) -> float:
        """Next uniform draw in ``[0, 1)``; advances the counter by one."""
        self.counter += 1
        return float(self._gen.random())

    def substream(self, *ids: int) -> "RngState":
        """Fresh stream for ``(seed, stream + ids)``.

        Derivation depends only on the stream identity, never on how many
        draws this state has already produced.
        """
        return RngState(self.seed, self.stream + ids)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, counter={self.counter})"


# --------------------------------------------------------------------------- #
#  Probability operations
# --------------------------------------------------------------------------- #


def normalize(raw: np.ndarray | Sequence[float]) -> ProbDist:
    """Scale a non-negative weight vector to sum to one.

    Raises:
        AllZeroError: if no entry is positive.
        ValueError: if any entry is negative.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if np.any(arr < 0.0):
        raise ValueError("weights must be non-negative")
    total = float(arr.sum())
    if total <= 0.0:
        raise AllZeroError("cannot normalize an all-zero weight vector")
    return ProbDist(arr / total)


def sample(dist: ProbDist, rng: RngState) -> TokenId:
    """Inverse-CDF draw from ``dist``; consumes exactly one uniform.

    Tokens with zero probability are never returned, so a point mass is
    sampled exactly.
    """
    u = rng.uniform()
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= len(dist):
        # u landed past a cumulative sum that rounded slightly below 1.
        idx = int(np.flatnonzero(dist.probs > 0.0)[-1])
    return idx


def argmax(dist: ProbDist) -> TokenId:
    """Index of the largest probability; ties break to the lowest index."""
    return int(np.argmax(dist.probs))
