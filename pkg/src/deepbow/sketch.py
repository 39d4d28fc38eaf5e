"""Binary signatures: LSH sketches, Hamming embedding, Hamming distance.

Two signature generators live here:

* Random-hyperplane LSH for context vectors: bit j is 1 iff r_j . v >= 0,
  with the hyperplanes r_j drawn from a zero-mean unit Gaussian. The
  normalized Hamming distance between two sketches estimates angle/pi.
* Hamming embedding for local descriptors: descriptors are projected by a
  row-orthonormal matrix and each component is thresholded at the median
  of its visual word's training population, so bits are balanced per word.

Signatures are packed uint8 arrays (16 bytes at the default 128 bits) and
the bit length must be a multiple of 64. Threshold comparisons use >= so
ties deterministically produce a 1 bit.

Hyperplane and projection sampling use a seeded PCG64 generator; the LSH
bank file stores only (dim, bits, seed) and regenerates the hyperplanes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    LengthMismatch,
    NoTrainingData,
    TruncatedFile,
    UnknownWord,
)

DEFAULT_BITS = 128

# per-byte popcount lookup table
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def _check_bits(bits: int) -> None:
    if bits <= 0 or bits % 64 != 0:
        raise ValueError(f"signature length must be a positive multiple of 64, got {bits}")


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean array (last axis = bits) into uint8 bytes, MSB first."""
    return np.packbits(bits.astype(np.uint8), axis=-1)


def unpack_bits(packed: np.ndarray) -> np.ndarray:
    """Inverse of pack_bits; returns a uint8 0/1 array."""
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed signatures of equal length."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise LengthMismatch(f"signature lengths differ: {a.shape} vs {b.shape}")
    return int(_POPCOUNT[a ^ b].sum(dtype=np.int64))


def hamming_to_many(sigs: np.ndarray, sig: np.ndarray) -> np.ndarray:
    """Hamming distance from one signature to each row of a packed matrix."""
    sigs = np.asarray(sigs, dtype=np.uint8)
    sig = np.asarray(sig, dtype=np.uint8)
    if sigs.shape[-1] != sig.shape[-1]:
        raise LengthMismatch(f"signature lengths differ: {sigs.shape[-1]} vs {sig.shape[-1]}")
    return _POPCOUNT[sigs ^ sig].sum(axis=-1, dtype=np.int64)


@dataclass(frozen=True)
class LshBank:
    """A bank of b random hyperplanes over dim-dimensional vectors."""

    dim: int
    bits: int
    seed: int
    hyperplanes: np.ndarray = field(repr=False)

    @classmethod
    def from_seed(cls, dim: int, bits: int, seed: int) -> "LshBank":
        _check_bits(bits)
        rng = np.random.Generator(np.random.PCG64(seed))
        planes = rng.standard_normal((bits, dim))
        return cls(dim=dim, bits=bits, seed=seed, hyperplanes=planes)


def lsh_sketch(v: np.ndarray, bank: LshBank) -> np.ndarray:
    """Packed LSH sketch of a vector (or batch); bit j = 1 iff r_j . v >= 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != bank.dim:
        raise DimensionMismatch(f"vector dim {v.shape[-1]} != bank dim {bank.dim}")
    return pack_bits(v @ bank.hyperplanes.T >= 0.0)


@dataclass(frozen=True)
class HeModel:
    """Hamming-embedding projection plus per-word median thresholds.

    projection is (bits, 128) float32 with orthonormal rows; thresholds is
    (K, bits) float64 so that median ties survive persistence exactly.
    """

    projection: np.ndarray = field(repr=False)
    thresholds: np.ndarray = field(repr=False)

    @property
    def bits(self) -> int:
        return self.projection.shape[0]

    @property
    def n_words(self) -> int:
        return self.thresholds.shape[0]


def _orthonormal_rows(bits: int, dim: int, seed: int) -> np.ndarray:
    # QR of a Gaussian matrix; sign-fixed so the factorization is canonical
    rng = np.random.Generator(np.random.PCG64(seed))
    g = rng.standard_normal((dim, bits))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return q.T


def project_descriptors(descriptors: np.ndarray, model: HeModel) -> np.ndarray:
    """Project descriptor rows through the HE matrix, one row at a time.

    Signature bits compare projected values against medians with >=, and a
    median equals one of the training values exactly; projecting row by row
    keeps each value independent of how callers batch their descriptors, so
    those ties resolve identically everywhere.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    pt = model.projection.T.astype(np.float64)
    out = np.empty((descriptors.shape[0], model.bits), dtype=np.float64)
    for i in range(descriptors.shape[0]):
        out[i] = descriptors[i] @ pt
    return out


def train_he(vocab, descriptors: np.ndarray, bits: int = DEFAULT_BITS, seed: int = 0) -> HeModel:
    """Train the Hamming-embedding model on quantized training descriptors.

    Each descriptor is assigned to its nearest word; threshold[w][j] is the
    median of projected component j over word w's descriptors. Words with
    no training data inherit the global medians.
    """
    from .vocab import quantize_batch

    _check_bits(bits)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[0] == 0:
        raise NoTrainingData("need at least one training descriptor")
    dim = descriptors.shape[1]
    if bits > dim:
        raise DimensionMismatch(f"cannot draw {bits} orthonormal rows in dim {dim}")

    projection = _orthonormal_rows(bits, dim, seed).astype(np.float32)
    model = HeModel(
        projection=projection, thresholds=np.zeros((vocab.n_words, bits))
    )
    projected = project_descriptors(descriptors, model)

    words = quantize_batch(descriptors, vocab)
    global_median = np.median(projected, axis=0)
    thresholds = np.tile(global_median, (vocab.n_words, 1))
    for w in np.unique(words):
        thresholds[w] = np.median(projected[words == w], axis=0)
    return HeModel(projection=projection, thresholds=thresholds)


def he_signature(d: np.ndarray, word: int, model: HeModel) -> np.ndarray:
    """Packed signature of a rootSIFT descriptor relative to one word's thresholds."""
    if not 0 <= word < model.n_words:
        raise UnknownWord(f"word {word} outside vocabulary of {model.n_words}")
    projected = project_descriptors(np.asarray(d, dtype=np.float64)[None, :], model)[0]
    return pack_bits(projected >= model.thresholds[word])


def he_signatures(projected: np.ndarray, words: np.ndarray, model: HeModel) -> np.ndarray:
    """Packed signatures for pre-projected descriptors against per-row words."""
    return pack_bits(projected >= model.thresholds[words])


# --- persistence -----------------------------------------------------------

LSH_MAGIC = b"DLSH"


def save_lsh_bank(bank: LshBank, path) -> None:
    """Write an LSH bank file: magic, dim u32, bits u32, seed u64."""
    with open(path, "wb") as f:
        f.write(LSH_MAGIC)
        f.write(struct.pack("<IIQ", bank.dim, bank.bits, bank.seed))


def load_lsh_bank(path) -> LshBank:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != LSH_MAGIC:
            raise BadMagic(f"expected {LSH_MAGIC!r}, got {magic!r}")
        payload = f.read(16)
        if len(payload) < 16:
            raise TruncatedFile("LSH bank file too short")
        dim, bits, seed = struct.unpack("<IIQ", payload)
    return LshBank.from_seed(dim, bits, seed)


def write_he_payload(f, model: HeModel) -> None:
    """Append the HE payload to an open vocabulary file.

    Layout: bits u32, projection float32 row-major, thresholds float64
    row-major (K x bits). Thresholds keep full precision because signature
    bits compare projected values with >= against them.
    """
    f.write(struct.pack("<I", model.bits))
    f.write(np.ascontiguousarray(model.projection, dtype=np.float32).tobytes())
    f.write(np.ascontiguousarray(model.thresholds, dtype=np.float64).tobytes())


def read_he_payload(f, n_words: int, dim: int = 128) -> HeModel:
    raw = f.read(4)
    if len(raw) < 4:
        raise TruncatedFile("missing HE payload")
    (bits,) = struct.unpack("<I", raw)
    proj_bytes = f.read(bits * dim * 4)
    thr_bytes = f.read(n_words * bits * 8)
    if len(proj_bytes) < bits * dim * 4 or len(thr_bytes) < n_words * bits * 8:
        raise TruncatedFile("HE payload incomplete")
    projection = np.frombuffer(proj_bytes, dtype="<f4").reshape(bits, dim).copy()
    thresholds = np.frombuffer(thr_bytes, dtype="<f8").reshape(n_words, bits).copy()
    return HeModel(projection=projection, thresholds=thresholds)
