"""Visual vocabulary: k-means training, quantization, IDF.

The codebook is trained with exact Lloyd k-means (adequate at the
codebook sizes this package targets). Quantization maps a descriptor to
its nearest centroids by Euclidean distance; multiple assignment (ma > 1)
is meant for the query side only. Document frequencies are filled in by
the index at finalize time and drive the classic idf = ln(N / n_w).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, MaTooLarge, TooFewPoints, TruncatedFile, UnknownWord
from .sketch import HeModel, read_he_payload, write_he_payload

DESCRIPTOR_DIM = 128


class EmptyClusterResolved(UserWarning):
    """A cluster went empty during Lloyd iteration and was re-seeded."""


@dataclass
class Vocabulary:
    """K centroids plus per-word document frequencies.

    centroids are float32 (the storage format); doc_freq[w] counts indexed
    images containing word w and n_images is the total, both zero until an
    index is finalized against this vocabulary.
    """

    centroids: np.ndarray = field(repr=False)
    doc_freq: np.ndarray = field(repr=False)
    n_images: int = 0

    @property
    def n_words(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def train_kmeans(
    descriptors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 50,
    tol: float = 1e-4,
    init: np.ndarray | None = None,
) -> Vocabulary:
    """Exact Lloyd k-means over descriptor rows, deterministic given seed.

    Initial centroids are k distinct descriptors chosen by a seeded PCG64
    generator (or the explicit init array). Iteration stops at max_iters
    or when the relative WCSS improvement drops below tol. Empty clusters
    are re-seeded from the point currently farthest from its centroid (a
    warning, not an error).
    """
    data = np.asarray(descriptors, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("descriptors must be a 2-D array")
    if init is not None:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, data.shape[1]):
            raise ValueError(f"init must be ({k}, {data.shape[1]})")
    else:
        distinct = np.unique(data, axis=0)
        if distinct.shape[0] < k:
            raise TooFewPoints(
                f"need {k} distinct descriptors, have {distinct.shape[0]}"
            )
        rng = np.random.Generator(np.random.PCG64(seed))
        centroids = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()

    prev_wcss = np.inf
    for _ in range(max_iters):
        d2 = sq_distances(data, centroids)
        labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(data.shape[0]), labels]

        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            warnings.warn(
                f"re-seeded {empties.size} empty cluster(s)", EmptyClusterResolved
            )
            order = np.argsort(point_d2)[::-1]
            for slot, e in enumerate(empties):
                p = order[slot]
                centroids[e] = data[p]
                labels[p] = e
                point_d2[p] = 0.0
            counts = np.bincount(labels, minlength=k)

        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, data)
        centroids = sums / counts[:, None]

        wcss = float(point_d2.sum())
        if prev_wcss - wcss <= tol * max(prev_wcss, 1e-30):
            break
        prev_wcss = wcss

    return Vocabulary(
        centroids=centroids.astype(np.float32),
        doc_freq=np.zeros(k, dtype=np.int64),
    )


def sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    c = np.asarray(centroids, dtype=np.float64)
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(c * c, axis=1)[None, :]
        - 2.0 * (x @ c.T)
    )
    return np.maximum(d2, 0.0)


def quantize(d: np.ndarray, vocab: Vocabulary, ma: int = 1) -> list[tuple[int, float]]:
    """The ma nearest words to a descriptor, as (word, distance) ascending.

    Ties resolve to the lowest word index; ma=1 is baseline quantization.
    """
    if ma < 1 or ma > vocab.n_words:
        raise MaTooLarge(f"ma={ma} invalid for a vocabulary of {vocab.n_words} words")
    d2 = sq_distances(np.asarray(d, dtype=np.float64)[None, :], vocab.centroids)[0]
    order = np.argsort(d2, kind="stable")[:ma]
    return [(int(w), float(np.sqrt(d2[w]))) for w in order]


def quantize_batch(descriptors: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Nearest word per descriptor row (the ma=1 fast path)."""
    d2 = sq_distances(np.asarray(descriptors, dtype=np.float64), vocab.centroids)
    return np.argmin(d2, axis=1)


def idf(vocab: Vocabulary, w: int) -> float:
    """ln(N / n_w) with n_w clamped to 1; 0 when the word is in every image."""
    if not 0 <= w < vocab.n_words:
        raise UnknownWord(f"word {w} outside vocabulary of {vocab.n_words}")
    return float(np.log(vocab.n_images / max(int(vocab.doc_freq[w]), 1)))


def idf_table(vocab: Vocabulary) -> np.ndarray:
    """idf for every word as a float64 vector."""
    df = np.maximum(vocab.doc_freq, 1).astype(np.float64)
    return np.log(vocab.n_images / df)


# --- persistence -----------------------------------------------------------

VOCAB_MAGIC = b"DVOC"


def save_vocabulary(vocab: Vocabulary, he: HeModel, path) -> None:
    """Write the vocabulary file: codebook, doc frequencies, HE payload."""
    with open(path, "wb") as f:
        f.write(VOCAB_MAGIC)
        f.write(struct.pack("<II", vocab.n_words, vocab.dim))
        f.write(np.ascontiguousarray(vocab.centroids, dtype=np.float32).tobytes())
        f.write(vocab.doc_freq.astype("<u4").tobytes())
        f.write(struct.pack("<I", vocab.n_images))
        write_he_payload(f, he)


def load_vocabulary(path) -> tuple[Vocabulary, HeModel]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VOCAB_MAGIC:
            raise BadMagic(f"expected {VOCAB_MAGIC!r}, got {magic!r}")
        header = f.read(8)
        if len(header) < 8:
            raise TruncatedFile("vocabulary header incomplete")
        k, dim = struct.unpack("<II", header)
        cent_bytes = f.read(k * dim * 4)
        df_bytes = f.read(k * 4)
        n_bytes = f.read(4)
        if len(cent_bytes) < k * dim * 4 or len(df_bytes) < k * 4 or len(n_bytes) < 4:
            raise TruncatedFile("vocabulary payload incomplete")
        centroids = np.frombuffer(cent_bytes, dtype="<f4").reshape(k, dim).copy()
        doc_freq = np.frombuffer(df_bytes, dtype="<u4").astype(np.int64)
        (n_images,) = struct.unpack("<I", n_bytes)
        he = read_he_payload(f, k, dim)
    return Vocabulary(centroids=centroids, doc_freq=doc_freq, n_images=n_images), he
