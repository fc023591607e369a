"""N-gram language models and the prompt-conditioned views the engine uses.

Models here are deliberately tiny stand-ins for neural LMs: an order-n
model with additive smoothing supplies next-token distributions, and two
thin adapters give it the conditioning asymmetry that matters for
speculative decoding — the target sees image context plus text, the draft
sees text alone.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from mmspec.core import MultimodalPrompt, ProbDist, TokenId, Vocab

__all__ = [
    "BOS",
    "BlockTooLongError",
    "EmptyCorpusError",
    "LanguageModel",
    "ModelFormatError",
    "MultimodalTargetLm",
    "NGRAM_FORMAT",
    "NgramLm",
    "PromptConditionedLm",
    "TextOnlyDraftLm",
    "load_ngram",
    "save_ngram",
    "train_ngram",
]

# Reserved begin-of-sequence marker used to left-pad short contexts.  It sits
# outside the token id space on purpose: it can appear in a context window but
# never in model output.
BOS: TokenId = -1

NGRAM_FORMAT = "ngram-v1"


class EmptyCorpusError(ValueError):
    """Raised when training is attempted on no usable sequences."""


class BlockTooLongError(ValueError):
    """Raised when score_block is given a block longer than its limit."""


class ModelFormatError(ValueError):
    """Raised when a model file does not parse as the expected format."""


# --------------------------------------------------------------------------- #
#  Flat-prefix models
# --------------------------------------------------------------------------- #


class LanguageModel:
    """Base class for token-level models over a fixed vocabulary.

    ``calls`` counts public queries — ``next_dist`` and ``score_block`` each
    add exactly one, however long the block.  It is the only mutable state on
    a model and is owned by whichever run holds the instance; share a model
    across concurrent runs and the counts become meaningless.
    """

    def __init__(self, vocab: Vocab) -> None:
        self.vocab = vocab
        self.calls = 0

    def _dist(self, prefix: tuple[TokenId, ...]) -> np.ndarray:
        """Raw next-token probabilities for a prefix (no call accounting)."""
        raise NotImplementedError

    def next_dist(self, prefix: Sequence[TokenId]) -> ProbDist:
        """Distribution over the next token after ``prefix``."""
        self.calls += 1
        return ProbDist(self._dist(tuple(prefix)))

    def score_block(
        self,
        prefix: Sequence[TokenId],
        block: Sequence[TokenId],
        *,
        max_block: int | None = None,
    ) -> list[ProbDist]:
        """Distributions at every position along ``block``, plus one more.

        Returns ``len(block) + 1`` distributions: entry ``j`` conditions on
        ``prefix + block[:j]``, so the last entry covers the position after
        the final block token.  Counts as a single model call regardless of
        block length — that one-call accounting is what makes speculative
        verification cheaper than token-by-token scoring.

        Raises:
            BlockTooLongError: if ``max_block`` is given and exceeded.
        """
        block = tuple(block)
        if max_block is not None and len(block) > max_block:
            raise BlockTooLongError(f"block of {len(block)} tokens exceeds limit {max_block}")
        self.calls += 1
        prefix = tuple(prefix)
        return [ProbDist(self._dist(prefix + block[:j])) for j in range(len(block) + 1)]


class NgramLm(LanguageModel):
    """Order-n model with additive smoothing over a fixed vocabulary.

    The context window is the last ``order - 1`` prefix tokens, left-padded
    with :data:`BOS` when the prefix is shorter.  A context never seen in
    training yields the uniform distribution; otherwise
    ``(count + alpha) / (total + alpha * V)``.
    """

    def __init__(
        self,
        vocab: Vocab,
        order: int,
        alpha: float,
        counts: dict[tuple[TokenId, ...], np.ndarray],
    ) -> None:
        super().__init__(vocab)
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if not alpha > 0:
            raise ValueError(f"smoothing alpha must be > 0, got {alpha}")
        self.order = order
        self.alpha = float(alpha)
        self._counts = counts
        self._uniform = np.full(vocab.size, 1.0 / vocab.size)

    def context(self, prefix: Sequence[TokenId]) -> tuple[TokenId, ...]:
        """BOS-padded window of the last ``order - 1`` prefix tokens."""
        need = self.order - 1
        if need == 0:
            return ()
        window = tuple(prefix[-need:])
        if len(window) < need:
            window = (BOS,) * (need - len(window)) + window
        return window

    def _dist(self, prefix: tuple[TokenId, ...]) -> np.ndarray:
        counts = self._counts.get(self.context(prefix))
        if counts is None:
            return self._uniform
        total = int(counts.sum())
        return (counts + self.alpha) / (total + self.alpha * self.vocab.size)


def train_ngram(
    corpus: Sequence[Sequence[TokenId]],
    order: int,
    alpha: float,
    vocab: Vocab,
) -> NgramLm:
    """Count next-token occurrences over ``corpus`` and build an NgramLm.

    Each sequence is conceptually left-padded with :data:`BOS` so the
    position-0 prediction is defined.

    Raises:
        EmptyCorpusError: if the corpus has no non-empty sequences.
        ValueError: if any token id falls outside the vocabulary.
    """
    seqs = [tuple(s) for s in corpus if len(s) > 0]
    if not seqs:
        raise EmptyCorpusError("training corpus has no non-empty sequences")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    need = order - 1
    counts: dict[tuple[TokenId, ...], np.ndarray] = {}
    for seq in seqs:
        for tok in seq:
            if not 0 <= tok < vocab.size:
                raise ValueError(f"token id {tok} outside vocab of size {vocab.size}")
        padded = (BOS,) * need + seq
        for i, tok in enumerate(seq):
            ctx = padded[i : i + need]
            row = counts.get(ctx)
            if row is None:
                row = counts[ctx] = np.zeros(vocab.size, dtype=np.int64)
            row[tok] += 1
    for row in counts.values():
        row.setflags(write=False)
    return NgramLm(vocab, order, alpha, counts)


# --------------------------------------------------------------------------- #
#  Serialization (format "ngram-v1")
# --------------------------------------------------------------------------- #


def save_ngram(model: NgramLm, path: str | Path) -> None:
    """Write a model as ``ngram-v1`` JSON; a given model always produces
    identical bytes (contexts are sorted)."""
    payload = {
        "format": NGRAM_FORMAT,
        "order": model.order,
        "alpha": model.alpha,
        "vocab_size": model.vocab.size,
        "eos": model.vocab.eos,
        "counts": [
            [list(ctx), [int(c) for c in row]]
            for ctx, row in sorted(model._counts.items())
        ],
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8")


def load_ngram(path: str | Path) -> NgramLm:
    """Read an ``ngram-v1`` model file back into an NgramLm.

    Raises:
        ModelFormatError: if the file is not valid ``ngram-v1``.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != NGRAM_FORMAT:
        raise ModelFormatError(f"{path}: expected format {NGRAM_FORMAT!r}")
    try:
        vocab = Vocab(size=int(payload["vocab_size"]), eos=int(payload["eos"]))
        order = int(payload["order"])
        alpha = float(payload["alpha"])
        counts: dict[tuple[TokenId, ...], np.ndarray] = {}
        for ctx, row in payload["counts"]:
            arr = np.asarray(row, dtype=np.int64)
            if arr.shape != (vocab.size,):
                raise ModelFormatError(f"{path}: count row has {arr.size} entries, expected {vocab.size}")
            arr.setflags(write=False)
            counts[tuple(int(t) for t in ctx)] = arr
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed {NGRAM_FORMAT} payload ({exc})") from exc
    return NgramLm(vocab, order, alpha, counts)


# --------------------------------------------------------------------------- #
#  Prompt-conditioned views
# --------------------------------------------------------------------------- #


class PromptConditionedLm:
    """Adapts a flat-prefix model to ``(prompt, generated)`` queries."""

    def __init__(self, base: LanguageModel) -> None:
        self.base = base

    @property
    def vocab(self) -> Vocab:
        return self.base.vocab

    @property
    def calls(self) -> int:
        return self.base.calls

    def prefix(self, prompt: MultimodalPrompt, generated: Sequence[TokenId] = ()) -> tuple[TokenId, ...]:
        """Effective flat prefix for this view."""
        raise NotImplementedError

    def next_dist(self, prompt: MultimodalPrompt, generated: Sequence[TokenId] = ()) -> ProbDist:
        return self.base.next_dist(self.prefix(prompt, generated))

    def score_block(
        self,
        prompt: MultimodalPrompt,
        generated: Sequence[TokenId],
        block: Sequence[TokenId],
        *,
        max_block: int | None = None,
    ) -> list[ProbDist]:
        return self.base.score_block(self.prefix(prompt, generated), block, max_block=max_block)


class MultimodalTargetLm(PromptConditionedLm):
    """Image-aware view: conditions on image context, then text, then output."""

    def prefix(self, prompt: MultimodalPrompt, generated: Sequence[TokenId] = ()) -> tuple[TokenId, ...]:
        return prompt.image_ctx + prompt.text + tuple(generated)


class TextOnlyDraftLm(PromptConditionedLm):
    """Text-only view: image context is invisible, by construction."""

    def prefix(self, prompt: MultimodalPrompt, generated: Sequence[TokenId] = ()) -> tuple[TokenId, ...]:
        return prompt.text + tuple(generated)
