"""Shared builders for small, fully trained retrieval instances."""

import numpy as np

from deepbow.index import build_index
from deepbow.normalize import root_sift
from deepbow.sketch import LshBank, train_he
from deepbow.synth import SynthConfig, generate
from deepbow.vocab import train_kmeans


def make_instance(
    seed,
    n_groups=4,
    group_size=4,
    keypoints=8,
    d_ctx=12,
    desc_noise=6.0,
    ctx_noise=0.5,
    distractors=8,
    k=16,
    he_bits=64,
    ctx_bits=64,
    modes=("binary_context",),
    alpha=0.5,
):
    """Generate data, train models, and build one index per requested mode."""
    cfg = SynthConfig(
        n_groups=n_groups,
        group_size=group_size,
        keypoints=keypoints,
        d_ctx=d_ctx,
        desc_noise=desc_noise,
        ctx_noise=ctx_noise,
        distractors=distractors,
        seed=seed,
    )
    records, truth = generate(cfg)
    descs = np.concatenate([r.descriptors for r in records])
    rs = root_sift(descs)
    vocab = train_kmeans(rs, k, seed=seed + 1, max_iters=15)
    he = train_he(vocab, rs, bits=he_bits, seed=seed + 2)
    lsh = LshBank.from_seed(d_ctx, ctx_bits, seed=seed + 3)
    indexes = {
        mode: build_index(
            records, vocab, he, lsh, d_ctx=d_ctx, mode=mode, alpha=alpha
        )
        for mode in modes
    }
    return {
        "records": records,
        "truth": truth,
        "vocab": vocab,
        "he": he,
        "lsh": lsh,
        "indexes": indexes,
        "d_ctx": d_ctx,
    }
