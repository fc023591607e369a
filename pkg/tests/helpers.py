"""Shared builders for randomized test instances (models, prompts, dists)."""

import numpy as np

from mmspec.core import MultimodalPrompt, ProbDist, Vocab
from mmspec.models import train_ngram


def random_vocab(rng, min_size=2, max_size=16):
    size = int(rng.integers(min_size, max_size + 1))
    return Vocab(size=size, eos=int(rng.integers(0, size)))


def random_corpus(rng, vocab, n_seqs=20, min_len=3, max_len=12):
    return [
        rng.integers(0, vocab.size, int(rng.integers(min_len, max_len + 1))).tolist()
        for _ in range(n_seqs)
    ]


def random_model(rng, vocab, order=None, alpha=None, **corpus_kw):
    """Train a small n-gram model on a random corpus."""
    if order is None:
        order = int(rng.integers(1, 4))
    if alpha is None:
        alpha = float(rng.uniform(0.2, 1.5))
    return train_ngram(random_corpus(rng, vocab, **corpus_kw), order, alpha, vocab)


def random_prompt(rng, vocab, max_image=4, max_text=6):
    img = tuple(rng.integers(0, vocab.size, int(rng.integers(0, max_image + 1))).tolist())
    txt = tuple(rng.integers(0, vocab.size, int(rng.integers(1, max_text + 1))).tolist())
    return MultimodalPrompt(image_ctx=img, text=txt)


def random_dist(rng, size, allow_zeros=False):
    """Random distribution; optionally with a few exact-zero entries."""
    w = rng.random(size) + 1e-3
    if allow_zeros and size > 2:
        n_zero = int(rng.integers(0, size - 1))
        w[rng.choice(size, size=n_zero, replace=False)] = 0.0
    return ProbDist(w / w.sum())
