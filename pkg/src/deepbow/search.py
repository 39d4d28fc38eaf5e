"""Online query pipeline over a finalized index.

A query image is scored against the collection by walking the posting
lists of its keypoints' words (multiple assignment widens this to the ma
nearest words per keypoint, query side only). Every (query keypoint,
posting) pair sharing a word contributes

    idf(word)^2 * burst(tf) * s_local * s_regional * s_global

where burst(tf) = 1/sqrt(tf) down-weights repeated words in the database
image, the kernels come from the scoring module, and disabled levels
contribute 1. Per-image sums are divided by sqrt(k_q * k_d) (symmetric
keypoint-count normalization, selectable off) and ranked descending with
ties broken by ascending image id.

The regional term compares same-scale blocks: the query keypoint's 4x4
block context against the posting's 4x4 block context, likewise for 8x8,
combined per QueryConfig.regional_combine. The global distance depends
only on the candidate image and is computed once per query.

Scoring is deterministic: traversal order is fixed and accumulation is
elementwise, so results are bit-identical across runs and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datastore import ImageRecord
from .errors import DimensionMismatch, EmptyIndex, MissingContexts
from .geometry import N_SLOTS, region_pointers
from .index import DeepIndex
from .normalize import root_sift, srn
from .scoring import (
    BINARY_CONTEXT,
    MatchParams,
    s_global,
    s_local,
    s_regional,
    sketch_to_euclidean,
)
from .sketch import HeModel, LshBank, lsh_sketch, pack_bits, project_descriptors
from .vocab import Vocabulary, idf_table, sq_distances

REGIONAL_COMBINE_MODES = ("multiply", "mean", "scale2", "scale3")

RankedList = list[tuple[int, float]]


@dataclass(frozen=True)
class QueryConfig:
    """Query-side knobs: assignment width, weighting, kernels, output size."""

    ma: int = 3
    burstiness: bool = True
    params: MatchParams = field(default_factory=MatchParams)
    top_k: int = 10
    use_idf: bool = True
    normalization: str = "symmetric"  # or "none"
    regional_combine: str = "multiply"

    def __post_init__(self):
        if self.ma < 1:
            raise ValueError(f"ma must be >= 1, got {self.ma}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.normalization not in ("symmetric", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.regional_combine not in REGIONAL_COMBINE_MODES:
            raise ValueError(f"unknown regional combine {self.regional_combine!r}")


def burst_weight(tf: int) -> float:
    """Burstiness down-weighting of a term frequency: 1/sqrt(tf)."""
    if tf < 1:
        raise ValueError(f"tf must be >= 1, got {tf}")
    return 1.0 / np.sqrt(float(tf))


def _combine_regional(sr2: np.ndarray, sr3: np.ndarray, mode: str) -> np.ndarray:
    if mode == "multiply":
        return sr2 * sr3
    if mode == "mean":
        return 0.5 * (sr2 + sr3)
    if mode == "scale2":
        return sr2
    return sr3


def score_query(
    query: ImageRecord,
    index: DeepIndex,
    vocab: Vocabulary,
    he: HeModel,
    lsh: LshBank | None,
    cfg: QueryConfig = QueryConfig(),
) -> RankedList:
    """Rank indexed images against a query record.

    Returns at most cfg.top_k (img_id, score) pairs with positive scores,
    descending; ties resolve to the lower image id.
    """
    if not index.finalized or index.n_images == 0:
        raise EmptyIndex("index must be finalized and non-empty")
    params = cfg.params
    if params.mode != index.mode:
        raise DimensionMismatch(
            f"query mode {params.mode!r} != index mode {index.mode!r}"
        )
    if query.contexts.shape != (N_SLOTS, index.d_ctx):
        raise MissingContexts(
            f"query {query.img_id}: contexts {query.contexts.shape} != "
            f"({N_SLOTS}, {index.d_ctx})"
        )

    binary = index.mode == BINARY_CONTEXT
    q_ctx = srn(query.contexts, index.srn_cfg)
    if binary:
        if lsh is None or lsh.dim != index.d_ctx:
            raise DimensionMismatch("binary mode requires an LSH bank of matching dim")
        q_sigs = np.ascontiguousarray(lsh_sketch(q_ctx, lsh))
        q_sigs64 = q_sigs.view(np.uint64)
        ctx64 = index.ctx_table.view(np.uint64)
        ctx_bits = index.ctx_table.shape[-1] * 8
        # binary-mode kernel inputs are integer Hamming distances, so the
        # three kernels collapse to lookup tables over [0, bits]
        de = sketch_to_euclidean(np.arange(ctx_bits + 1), ctx_bits)
        reg_lut = s_regional(de, params)
        glob_lut = s_global(de, params)
    else:
        q_vecs = q_ctx.astype(np.float32).astype(np.float64)

    sig_bits = index.sig_bytes * 8
    if params.kappa > sig_bits:
        raise ValueError(f"kappa {params.kappa} exceeds signature length {sig_bits}")
    local_lut = s_local(np.arange(sig_bits + 1), params)

    n = index.n_images
    acc = np.zeros(n, dtype=np.float64)
    k_q = query.n_keypoints

    if k_q:
        use_local = "local" in params.levels
        use_regional = "regional" in params.levels
        use_global = "global" in params.levels

        if use_global:
            if binary:
                g_sims = glob_lut[_hamming64(ctx64[:, 0, :], q_sigs64[0])]
            else:
                diff = index.ctx_table[:, 0, :].astype(np.float64) - q_vecs[0]
                g_sims = s_global(np.sqrt(np.sum(diff * diff, axis=-1)), params)

        rs = root_sift(query.descriptors)
        d2 = sq_distances(rs, vocab.centroids)
        words_ma = np.argsort(d2, axis=1, kind="stable")[:, : cfg.ma]
        projected = project_descriptors(rs, he)

        q_regions = region_pointers(query.xy, query.width, query.height)
        q_slot2 = 1 + (q_regions & 0xF).astype(np.int64)
        q_slot3 = 17 + (q_regions >> 4).astype(np.int64)

        idf2 = idf_table(vocab) ** 2 if cfg.use_idf else np.ones(vocab.n_words)

        for i in range(k_q):
            for w in words_ma[i]:
                plist = index.postings.get(int(w))
                if plist is None:
                    continue
                contrib = np.full(len(plist), idf2[w], dtype=np.float64)
                if cfg.burstiness:
                    contrib /= np.sqrt(plist.tfs.astype(np.float64))
                if use_local:
                    sig_q = np.ascontiguousarray(
                        pack_bits(projected[i] >= he.thresholds[w])
                    )
                    dh = _hamming64(plist.sigs.view(np.uint64), sig_q.view(np.uint64))
                    contrib *= local_lut[dh]
                if use_regional:
                    slots2 = 1 + (plist.regions & 0xF).astype(np.int64)
                    slots3 = 17 + (plist.regions >> 4).astype(np.int64)
                    if binary:
                        s2 = reg_lut[
                            _hamming64(ctx64[plist.rows, slots2], q_sigs64[q_slot2[i]])
                        ]
                        s3 = reg_lut[
                            _hamming64(ctx64[plist.rows, slots3], q_sigs64[q_slot3[i]])
                        ]
                    else:
                        v2 = index.ctx_table[plist.rows, slots2].astype(np.float64)
                        v3 = index.ctx_table[plist.rows, slots3].astype(np.float64)
                        s2 = s_regional(
                            np.sqrt(np.sum((v2 - q_vecs[q_slot2[i]]) ** 2, axis=-1)),
                            params,
                        )
                        s3 = s_regional(
                            np.sqrt(np.sum((v3 - q_vecs[q_slot3[i]]) ** 2, axis=-1)),
                            params,
                        )
                    contrib *= _combine_regional(s2, s3, cfg.regional_combine)
                if use_global:
                    contrib *= g_sims[plist.rows]
                acc += np.bincount(plist.rows, weights=contrib, minlength=n)

    if cfg.normalization == "symmetric" and k_q:
        denom = np.sqrt(float(k_q) * np.maximum(index.kp_counts, 1).astype(np.float64))
        acc = acc / denom

    return rank_scores(index.img_ids, acc, cfg.top_k)


def _hamming64(sigs: np.ndarray, sig: np.ndarray) -> np.ndarray:
    """Hamming distances on uint64-packed signature rows."""
    return np.bitwise_count(sigs ^ sig).sum(axis=-1, dtype=np.int64)


def rank_scores(img_ids: np.ndarray, scores: np.ndarray, top_k: int) -> RankedList:
    """Descending (img_id, score) list; zero scores dropped, id breaks ties."""
    pos = np.flatnonzero(scores > 0.0)
    order = pos[np.lexsort((img_ids[pos], -scores[pos]))][:top_k]
    return [(int(img_ids[i]), float(scores[i])) for i in order]

