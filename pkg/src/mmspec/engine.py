"""Draft/verify generation loop with lossless acceptance rules.

One round works like this: the draft proposes ``gamma`` tokens
autoregressively, the target scores the whole block in a single call, and a
verification rule walks the block left to right.  In stochastic mode each
position is accepted with probability ``min(1, q/p)`` and the first
rejection is replaced by a draw from the residual ``max(0, q - p)``; in
greedy mode a position is accepted only if it equals the target argmax,
which is also the correction on mismatch.  A fully accepted block earns one
bonus token from the target's extra distribution.  Both rules leave the
output distributed exactly as plain autoregressive decoding from the
target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mmspec.core import MultimodalPrompt, ProbDist, RngState, TokenId, argmax, normalize, sample
from mmspec.models import PromptConditionedLm

__all__ = [
    "BlockRecord",
    "BlockTrace",
    "DraftBlock",
    "DraftZeroProbError",
    "ShapeMismatchError",
    "SpdConfig",
    "VerifyOutcome",
    "accept_prob",
    "autoregressive_generate",
    "draft_block",
    "residual_dist",
    "spd_generate",
    "verify_greedy",
    "verify_stochastic",
]

MODES = ("stochastic", "greedy")

# Substream ids under the run-level stream: drafting, accept/reject draws,
# and residual/bonus draws are kept independent so that a perturbation on
# the verification side can never shift what the draft proposes.
STREAM_DRAFT = 0
STREAM_VERIFY = 1
STREAM_RESAMPLE = 2


class DraftZeroProbError(ValueError):
    """Raised when a drafted token has zero probability under the draft."""


class ShapeMismatchError(ValueError):
    """Raised when target distributions do not line up with a draft block."""


# --------------------------------------------------------------------------- #
#  Config and record types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SpdConfig:
    """Knobs for one speculative generation run."""

    gamma: int
    mode: str = "stochastic"
    max_new_tokens: int = 64
    stop_on_eos: bool = True

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


@dataclass(frozen=True)
class DraftBlock:
    """Drafted tokens plus the draft distribution each was taken from."""

    tokens: tuple[TokenId, ...]
    dists: tuple[ProbDist, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.dists):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.dists)} distributions")


@dataclass(frozen=True)
class VerifyOutcome:
    """Result of verifying one draft block.

    ``emitted`` is the accepted prefix plus exactly one trailing token: a
    residual resample or greedy correction on rejection, or the bonus token
    when the whole block was accepted.  ``accepted == len(block)`` holds
    exactly when ``correction_kind == "bonus"``.
    """

    accepted: int
    emitted: tuple[TokenId, ...]
    correction_kind: str  # "residual-resample" | "greedy-correction" | "bonus"


@dataclass(frozen=True)
class BlockRecord:
    """One verified block as it entered the output stream."""

    draft_tokens: tuple[TokenId, ...]
    accepted: int
    emitted: tuple[TokenId, ...]  # after EOS / length truncation
    correction_kind: str


@dataclass
class BlockTrace:
    """Call accounting for a generation run: one entry per target call."""

    blocks: list[BlockRecord] = field(default_factory=list)
    target_calls: int = 0
    draft_calls: int = 0

    @property
    def total_emitted(self) -> int:
        return sum(len(b.emitted) for b in self.blocks)

    @classmethod
    def from_emission_counts(cls, counts: Sequence[int], gamma: int = 1) -> "BlockTrace":
        """Build a skeletal trace from per-block emission counts (reporting
        and tests only; token values are placeholders)."""
        trace = cls()
        for n in counts:
            if n < 1:
                raise ValueError(f"a block emits at least one token, got {n}")
            trace.blocks.append(BlockRecord((0,) * gamma, min(n - 1, gamma), (0,) * n, "bonus"))
            trace.target_calls += 1
            trace.draft_calls += gamma
        return trace


# --------------------------------------------------------------------------- #
#  Single-step pieces
# --------------------------------------------------------------------------- #


def accept_prob(p_val: float, q_val: float) -> float:
    """Acceptance probability ``min(1, q/p)`` for one drafted token.

    The division is exact — no epsilon guard — so losslessness is not
    silently degraded.

    Raises:
        DraftZeroProbError: if ``p_val`` is zero; a correct sampler cannot
            propose such a token, so this always indicates a caller bug.
    """
    if p_val == 0.0:
        raise DraftZeroProbError("drafted token has zero draft probability")
    return min(1.0, q_val / p_val)


def residual_dist(q: ProbDist, p: ProbDist) -> ProbDist:
    """Normalized ``max(0, q - p)``: where to resample after a rejection.

    Raises:
        AllZeroError: if ``q == p`` entrywise (a rejection is impossible
            then, so verification never hits this).
    """
    return normalize(np.maximum(q.probs - p.probs, 0.0))


def draft_block(
    draft: PromptConditionedLm,
    prompt: MultimodalPrompt,
    generated: Sequence[TokenId],
    gamma: int,
    rng: RngState | None,
    mode: str = "stochastic",
) -> DraftBlock:
    """Propose ``gamma`` tokens autoregressively from the draft view.

    Drafting never stops early — a draft-predicted EOS is proposed and
    verified like any other token.  In greedy mode ``rng`` is unused.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    gen = tuple(generated)
    tokens: list[TokenId] = []
    dists: list[ProbDist] = []
    for _ in range(gamma):
        d = draft.next_dist(prompt, gen + tuple(tokens))
        tokens.append(argmax(d) if mode == "greedy" else sample(d, rng))
        dists.append(d)
    return DraftBlock(tuple(tokens), tuple(dists))


def verify_stochastic(
    target_dists: Sequence[ProbDist],
    block: DraftBlock,
    rng: RngState,
    resample_rng: RngState | None = None,
) -> VerifyOutcome:
    """Accept/reject a draft block so the output follows the target exactly.

    Scans positions left to right, consuming one uniform from ``rng`` per
    scanned position; position ``j`` survives with probability
    ``min(1, q_j/p_j)``.  The first rejection is replaced by a draw from the
    residual distribution and everything after it is discarded; a clean
    sweep appends a bonus token from the final target distribution.
    Residual and bonus draws come from ``resample_rng`` (default: ``rng``).

    Raises:
        ShapeMismatchError: unless ``len(target_dists) == len(block) + 1``.
    """
    if resample_rng is None:
        resample_rng = rng
    n = len(block.tokens)
    if len(target_dists) != n + 1:
        raise ShapeMismatchError(f"expected {n + 1} target distributions, got {len(target_dists)}")
    for j, tok in enumerate(block.tokens):
        p_j = float(block.dists[j].probs[tok])
        q_j = float(target_dists[j].probs[tok])
        if rng.uniform() >= accept_prob(p_j, q_j):
            fix = sample(residual_dist(target_dists[j], block.dists[j]), resample_rng)
            return VerifyOutcome(j, block.tokens[:j] + (fix,), "residual-resample")
    bonus = sample(target_dists[n], resample_rng)
    return VerifyOutcome(n, block.tokens + (bonus,), "bonus")


def verify_greedy(target_dists: Sequence[ProbDist], block: DraftBlock) -> VerifyOutcome:
    """Accept drafted tokens while they equal the target argmax.

    On the first mismatch the target argmax itself is emitted as the
    correction, which makes the overall output identical to greedy decoding
    from the target alone.
    """
    n = len(block.tokens)
    if len(target_dists) != n + 1:
        raise ShapeMismatchError(f"expected {n + 1} target distributions, got {len(target_dists)}")
    for j, tok in enumerate(block.tokens):
        top = argmax(target_dists[j])
        if tok != top:
            return VerifyOutcome(j, block.tokens[:j] + (top,), "greedy-correction")
    return VerifyOutcome(n, block.tokens + (argmax(target_dists[n]),), "bonus")


# --------------------------------------------------------------------------- #
#  Generation loops
# --------------------------------------------------------------------------- #


def spd_generate(
    target: PromptConditionedLm,
    draft: PromptConditionedLm,
    prompt: MultimodalPrompt,
    cfg: SpdConfig,
    rng: RngState,
) -> tuple[list[TokenId], BlockTrace]:
    """Speculative generation: returns ``(tokens, trace)``.

    Each loop iteration drafts a full ``gamma`` block, scores it with one
    target call, verifies, and appends the verified emission.  With
    ``stop_on_eos`` the emission is cut after the first EOS (keeping the EOS
    itself); the final emission is also cut to fit ``max_new_tokens``.  The
    trace records post-truncation emissions, so block efficiency computed
    from it matches the tokens actually returned.

    Draft, accept/reject, and resample draws come from three substreams of
    ``rng``, so draft proposals depend only on the seed and the text-side
    prefix — never on image context or verification outcomes inside a block.
    """
    draft_rng = rng.substream(STREAM_DRAFT)
    verify_rng = rng.substream(STREAM_VERIFY)
    resample_rng = rng.substream(STREAM_RESAMPLE)
    eos = target.vocab.eos
    out: list[TokenId] = []
    trace = BlockTrace()
    done = False
    while not done and len(out) < cfg.max_new_tokens:
        block = draft_block(draft, prompt, out, cfg.gamma, draft_rng, cfg.mode)
        target_dists = target.score_block(prompt, out, block.tokens, max_block=cfg.gamma)
        trace.target_calls += 1
        trace.draft_calls += len(block.tokens)
        if cfg.mode == "greedy":
            outcome = verify_greedy(target_dists, block)
        else:
            outcome = verify_stochastic(target_dists, block, verify_rng, resample_rng)
        emitted = list(outcome.emitted)
        if cfg.stop_on_eos and eos in emitted:
            emitted = emitted[: emitted.index(eos) + 1]
            done = True
        room = cfg.max_new_tokens - len(out)
        if len(emitted) > room:
            emitted = emitted[:room]
        out.extend(emitted)
        trace.blocks.append(
            BlockRecord(block.tokens, outcome.accepted, tuple(emitted), outcome.correction_kind)
        )
    return out, trace


def autoregressive_generate(
    target: PromptConditionedLm,
    prompt: MultimodalPrompt,
    max_new_tokens: int,
    mode: str = "greedy",
    rng: RngState | None = None,
    *,
    stop_on_eos: bool = True,
) -> list[TokenId]:
    """Plain one-token-per-call decoding from the target; the baseline."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "stochastic" and rng is None:
        raise ValueError("stochastic mode needs an rng")
    if max_new_tokens < 1:
        raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
    out: list[TokenId] = []
    while len(out) < max_new_tokens:
        d = target.next_dist(prompt, out)
        tok = argmax(d) if mode == "greedy" else sample(d, rng)
        out.append(tok)
        if stop_on_eos and tok == target.vocab.eos:
            break
    return out
