"""Tests for draft/verify primitives and the generation loops."""

import numpy as np
import pytest

from helpers import random_model, random_prompt, random_vocab

from mmspec.core import AllZeroError, MultimodalPrompt, ProbDist, RngState, Vocab, argmax
from mmspec.engine import (
    BlockTrace,
    DraftBlock,
    DraftZeroProbError,
    ShapeMismatchError,
    SpdConfig,
    accept_prob,
    autoregressive_generate,
    draft_block,
    residual_dist,
    spd_generate,
    verify_greedy,
    verify_stochastic,
)
from mmspec.models import MultimodalTargetLm, TextOnlyDraftLm, train_ngram


def make_pair(rng, vocab, target_order=None, draft_order=None):
    """Random (target, draft) views over independently trained models."""
    target = MultimodalTargetLm(random_model(rng, vocab, order=target_order))
    draft = TextOnlyDraftLm(random_model(rng, vocab, order=draft_order))
    return target, draft


class TestConfigTypes:
    def test_spd_config_validation(self):
        with pytest.raises(ValueError):
            SpdConfig(gamma=0)
        with pytest.raises(ValueError):
            SpdConfig(gamma=1, mode="beam")
        with pytest.raises(ValueError):
            SpdConfig(gamma=1, max_new_tokens=0)

    def test_draft_block_length_mismatch(self):
        with pytest.raises(ValueError):
            DraftBlock(tokens=(1,), dists=())


class TestAcceptProb:
    def test_ratio_clamped_at_one(self):
        assert accept_prob(0.5, 0.9) == 1.0

    def test_plain_ratio(self):
        assert accept_prob(0.5, 0.1) == pytest.approx(0.2)

    def test_zero_draft_prob_raises(self):
        with pytest.raises(DraftZeroProbError):
            accept_prob(0.0, 0.3)


class TestResidualDist:
    def test_positive_part_normalized(self):
        res = residual_dist(ProbDist([0.9, 0.1]), ProbDist([0.5, 0.5]))
        np.testing.assert_allclose(res.probs, [1.0, 0.0])

    def test_equal_dists_raise(self):
        d = ProbDist([0.4, 0.6])
        with pytest.raises(AllZeroError):
            residual_dist(d, d)


class TestDraftBlock:
    def test_block_has_gamma_tokens_and_dists(self):
        rng = np.random.default_rng(60)
        vocab = random_vocab(rng)
        _, draft = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        block = draft_block(draft, prompt, (), 4, RngState(1, (0,)))
        assert len(block.tokens) == 4 and len(block.dists) == 4

    def test_dists_match_draft_view(self):
        """Each stored dist equals the draft's dist at that drafted prefix."""
        rng = np.random.default_rng(61)
        vocab = random_vocab(rng)
        _, draft = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        block = draft_block(draft, prompt, (2 % vocab.size,), 3, RngState(2, (0,)))
        gen = (2 % vocab.size,)
        for j in range(3):
            want = draft.next_dist(prompt, gen + block.tokens[:j])
            np.testing.assert_array_equal(block.dists[j].probs, want.probs)

    def test_greedy_mode_picks_argmax(self):
        rng = np.random.default_rng(62)
        vocab = random_vocab(rng)
        _, draft = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        block = draft_block(draft, prompt, (), 3, None, mode="greedy")
        for j in range(3):
            assert block.tokens[j] == argmax(block.dists[j])

    def test_draft_eos_does_not_stop_drafting(self):
        """A draft that loves EOS still proposes a full block."""
        vocab = Vocab(size=3, eos=1)
        m = train_ngram([[1, 1, 1, 1]], order=1, alpha=0.01, vocab=vocab)
        draft = TextOnlyDraftLm(m)
        prompt = MultimodalPrompt((), (0,))
        block = draft_block(draft, prompt, (), 3, None, mode="greedy")
        assert block.tokens == (1, 1, 1)


class TestVerifyStochastic:
    def test_shape_mismatch(self):
        blk = DraftBlock((0,), (ProbDist([0.5, 0.5]),))
        with pytest.raises(ShapeMismatchError):
            verify_stochastic([ProbDist([0.5, 0.5])], blk, RngState(0))

    def test_sure_accept_consumes_one_uniform_per_position(self):
        """q >= p at each drafted token: all accepted, 3 draws consumed."""
        p = ProbDist([0.5, 0.5])
        q = ProbDist([0.5, 0.5])
        blk = DraftBlock((0, 1, 0), (p, p, p))
        rng = RngState(3, (1,))
        res_rng = RngState(3, (2,))
        out = verify_stochastic([q, q, q, q], blk, rng, res_rng)
        assert out.accepted == 3
        assert out.correction_kind == "bonus"
        assert rng.counter == 3
        assert res_rng.counter == 1  # the bonus draw

    def test_sure_reject_stops_at_first_position(self):
        """q == 0 at the first drafted token forces rejection there."""
        p = ProbDist([1.0, 0.0])
        q = ProbDist([0.0, 1.0])
        blk = DraftBlock((0, 0), (p, p))
        rng = RngState(4, (1,))
        out = verify_stochastic([q, q, q], blk, rng)
        assert out.accepted == 0
        assert out.correction_kind == "residual-resample"
        assert out.emitted == (1,)
        assert rng.counter == 2  # one accept draw + one resample draw

    def test_single_step_marginal(self):
        """p=[.5,.5], q=[.9,.1]: emitted-token frequency approaches [0.9, 0.1]."""
        p = ProbDist([0.5, 0.5])
        q = ProbDist([0.9, 0.1])
        bonus = ProbDist([0.5, 0.5])
        n = 20_000
        hits = np.zeros(2)
        root = RngState(77)
        for i in range(n):
            trial = root.substream(i)
            draft_rng = trial.substream(0)
            tok = 0 if draft_rng.uniform() < 0.5 else 1
            blk = DraftBlock((tok,), (p,))
            out = verify_stochastic([q, bonus], blk, trial.substream(1), trial.substream(2))
            hits[out.emitted[0]] += 1
        freq = hits / n
        # 4-sigma band around 0.9 is about +/- 0.0085
        assert abs(freq[0] - 0.9) < 0.012

    def test_accepted_equals_gamma_iff_bonus(self):
        rng = np.random.default_rng(63)
        for trial in range(200):
            size = int(rng.integers(2, 6))
            gamma = int(rng.integers(1, 4))
            dists = []
            toks = []
            for _ in range(gamma):
                w = rng.random(size)
                d = ProbDist(w / w.sum())
                dists.append(d)
                toks.append(int(rng.integers(0, size)))
                if d.probs[toks[-1]] == 0.0:  # keep draft prob positive
                    toks[-1] = int(np.argmax(d.probs))
            blk = DraftBlock(tuple(toks), tuple(dists))
            q = [ProbDist(w / w.sum()) for w in (rng.random(size) + 1e-6 for _ in range(gamma + 1))]
            out = verify_stochastic(q, blk, RngState(trial, (1,)), RngState(trial, (2,)))
            assert (out.accepted == gamma) == (out.correction_kind == "bonus")
            assert 1 <= len(out.emitted) <= gamma + 1
            assert out.emitted[: out.accepted] == blk.tokens[: out.accepted]


class TestVerifyGreedy:
    def test_accepts_matching_argmax(self):
        q0 = ProbDist([0.1, 0.9])
        q1 = ProbDist([0.8, 0.2])
        blk = DraftBlock((1, 0), (q0, q1))
        out = verify_greedy([q0, q1, ProbDist([0.3, 0.7])], blk)
        assert out.accepted == 2
        assert out.emitted == (1, 0, 1)
        assert out.correction_kind == "bonus"

    def test_correction_is_target_argmax(self):
        q0 = ProbDist([0.1, 0.9])
        blk = DraftBlock((0, 0), (q0, q0))
        out = verify_greedy([q0, q0, q0], blk)
        assert out.accepted == 0
        assert out.emitted == (1,)
        assert out.correction_kind == "greedy-correction"

    def test_shape_mismatch(self):
        blk = DraftBlock((0,), (ProbDist([0.5, 0.5]),))
        with pytest.raises(ShapeMismatchError):
            verify_greedy([ProbDist([0.5, 0.5])] * 3, blk)


class TestSpdGenerate:
    def test_greedy_lossless_random_instances(self):
        """SPD greedy output is token-identical to the autoregressive chain."""
        rng = np.random.default_rng(64)
        gammas = [1, 2, 3, 5]
        for trial in range(40):
            vocab = random_vocab(rng, max_size=32)
            target, draft = make_pair(rng, vocab)
            prompt = random_prompt(rng, vocab)
            cfg = SpdConfig(gamma=gammas[trial % 4], mode="greedy", max_new_tokens=48)
            spd, _ = spd_generate(target, draft, prompt, cfg, RngState(trial))
            ar = autoregressive_generate(target, prompt, 48, "greedy")
            assert spd == ar

    def test_trace_accounting(self):
        rng = np.random.default_rng(65)
        for trial in range(25):
            vocab = random_vocab(rng)
            target, draft = make_pair(rng, vocab)
            prompt = random_prompt(rng, vocab)
            gamma = int(rng.integers(1, 5))
            mode = "greedy" if trial % 2 else "stochastic"
            cfg = SpdConfig(gamma=gamma, mode=mode, max_new_tokens=32)
            out, trace = spd_generate(target, draft, prompt, cfg, RngState(trial))
            assert trace.target_calls == len(trace.blocks)
            assert trace.draft_calls == gamma * trace.target_calls
            assert trace.total_emitted == len(out)
            for b in trace.blocks:
                assert 1 <= len(b.emitted) <= gamma + 1
                assert (b.accepted == gamma) == (b.correction_kind == "bonus")

    def test_stochastic_seed_determinism(self):
        rng = np.random.default_rng(66)
        vocab = random_vocab(rng)
        target, draft = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        cfg = SpdConfig(gamma=3, mode="stochastic", max_new_tokens=32)
        a, _ = spd_generate(target, draft, prompt, cfg, RngState(9))
        b, _ = spd_generate(target, draft, prompt, cfg, RngState(9))
        assert a == b

    def test_stochastic_seed_sensitivity(self):
        """Across several instances, some seed change alters the output."""
        rng = np.random.default_rng(67)
        changed = 0
        for trial in range(10):
            vocab = random_vocab(rng, min_size=4)
            target, draft = make_pair(rng, vocab)
            prompt = random_prompt(rng, vocab)
            cfg = SpdConfig(gamma=2, mode="stochastic", max_new_tokens=24)
            a, _ = spd_generate(target, draft, prompt, cfg, RngState(100 + trial))
            b, _ = spd_generate(target, draft, prompt, cfg, RngState(200 + trial))
            changed += a != b
        assert changed > 0

    def test_single_token_budget(self):
        """max_new_tokens=1 emits exactly one token with one target call."""
        rng = np.random.default_rng(68)
        vocab = random_vocab(rng)
        target, draft = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        out, trace = spd_generate(
            target, draft, prompt, SpdConfig(gamma=3, mode="greedy", max_new_tokens=1), RngState(0)
        )
        assert len(out) == 1
        assert trace.target_calls == 1

    def test_eos_first_token_stops(self):
        """A target that always predicts EOS yields the single token [eos]."""
        vocab = Vocab(size=3, eos=2)
        m = train_ngram([[2, 2, 2, 2, 2]], order=1, alpha=0.01, vocab=vocab)
        target = MultimodalTargetLm(m)
        draft = TextOnlyDraftLm(m)
        prompt = MultimodalPrompt((), (0,))
        out, trace = spd_generate(
            target, draft, prompt, SpdConfig(gamma=3, mode="greedy", max_new_tokens=16), RngState(0)
        )
        assert out == [2]
        assert trace.target_calls == 1

    def test_eos_truncation_keeps_eos_drops_rest(self):
        rng = np.random.default_rng(69)
        for trial in range(25):
            vocab = random_vocab(rng)
            target, draft = make_pair(rng, vocab)
            prompt = random_prompt(rng, vocab)
            cfg = SpdConfig(gamma=3, mode="stochastic", max_new_tokens=32)
            out, trace = spd_generate(target, draft, prompt, cfg, RngState(trial))
            if vocab.eos in out:
                assert out.index(vocab.eos) == len(out) - 1
            for b in trace.blocks:
                if vocab.eos in b.emitted:
                    assert b.emitted.index(vocab.eos) == len(b.emitted) - 1

    def test_identity_pair_overshoot_truncated(self):
        """draft==target, gamma=3, budget 10: blocks emit 4, 4, then 2."""
        vocab = Vocab(size=4, eos=3)
        m = train_ngram([[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]], order=3, alpha=0.5, vocab=vocab)
        target = MultimodalTargetLm(m)
        draft = TextOnlyDraftLm(m)
        prompt = MultimodalPrompt((), (0, 1))
        cfg = SpdConfig(gamma=3, mode="greedy", max_new_tokens=10, stop_on_eos=False)
        out, trace = spd_generate(target, draft, prompt, cfg, RngState(0))
        assert len(out) == 10
        assert [len(b.emitted) for b in trace.blocks] == [4, 4, 2]
        assert trace.total_emitted == 10

    def test_image_perturbation_never_moves_draft_block(self):
        """Changing image_ctx shifts target dists but not draft proposals."""
        rng = np.random.default_rng(70)
        for trial in range(50):
            vocab = random_vocab(rng, min_size=4)
            target, draft = make_pair(rng, vocab, target_order=3)
            text = (int(rng.integers(0, vocab.size)),)
            p_a = MultimodalPrompt(tuple(rng.integers(0, vocab.size, 3).tolist()), text)
            p_b = MultimodalPrompt(tuple(rng.integers(0, vocab.size, 3).tolist()), text)
            gen = tuple(rng.integers(0, vocab.size, int(rng.integers(0, 3))).tolist())
            blk_a = draft_block(draft, p_a, gen, 3, RngState(trial, (0,)))
            blk_b = draft_block(draft, p_b, gen, 3, RngState(trial, (0,)))
            assert blk_a.tokens == blk_b.tokens
            for da, db in zip(blk_a.dists, blk_b.dists):
                assert np.array_equal(da.probs, db.probs)


class TestAutoregressive:
    def test_one_call_per_token(self):
        rng = np.random.default_rng(71)
        vocab = random_vocab(rng)
        target, _ = make_pair(rng, vocab)
        prompt = random_prompt(rng, vocab)
        before = target.calls
        out = autoregressive_generate(target, prompt, 16, "greedy", stop_on_eos=False)
        assert target.calls - before == len(out) == 16

    def test_stochastic_requires_rng(self):
        rng = np.random.default_rng(72)
        vocab = random_vocab(rng)
        target, _ = make_pair(rng, vocab)
        with pytest.raises(ValueError):
            autoregressive_generate(target, random_prompt(rng, vocab), 4, "stochastic")


class TestBlockTrace:
    def test_from_emission_counts(self):
        trace = BlockTrace.from_emission_counts([4, 2, 3], gamma=3)
        assert trace.target_calls == 3
        assert trace.total_emitted == 9

    def test_from_emission_counts_rejects_zero(self):
        with pytest.raises(ValueError):
            BlockTrace.from_emission_counts([2, 0])
