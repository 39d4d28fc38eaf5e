"""The inverted file with compact region pointers and a context table.

Postings carry only what a keypoint match needs: image id, the word's
term frequency in that image, the 16-byte local signature, and a 10-bit
region pointer locating the keypoint's two regional blocks. The 81
context signatures (or vectors, in float mode) of an image are stored
once in a per-image table and dereferenced through the pointer, instead
of being duplicated into every posting.

Per-feature memory therefore costs 4 (ImgID) + 1 (TF) + 16 (local)
+ 1.25 (region pointer, accounted at 10 bits) = 22.25 bytes, plus
16 x 81 bytes per image for the table; memstats() reproduces that
accounting. Pointers are held in a 16-bit field in memory but accounted
at 1.25 bytes.

Index file layout (little-endian):

    magic "DIDX", version u32 = 1
    mode u8 (0 = binary context, 1 = float context)
    n_images u32, n_words u32, d_ctx u32, sig_bytes u8, n_lists u32
    per posting list:
        word u32, count u32,
        count x (img_id u32, tf u8, region u16, signature sig_bytes x u8)
    per image (ascending img_id):
        img_id u32, then 81 x 16 u8 signatures (binary)
        or 81 x d_ctx f32 vectors (float)

Document frequencies and keypoint counts are not stored; they are exact
functions of the posting lists and are recomputed on load.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .datastore import ImageRecord
from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateImage,
    EmptyIndex,
    Finalized,
    IoFailure,
    TruncatedFile,
    UnknownId,
    VersionMismatch,
)
from .geometry import N_SLOTS, region_pointers
from .normalize import SrnConfig, root_sift, srn
from .scoring import BINARY_CONTEXT, FLOAT_CONTEXT
from .sketch import HeModel, LshBank, he_signatures, lsh_sketch, project_descriptors
from .vocab import Vocabulary, quantize_batch

INDEX_MAGIC = b"DIDX"
INDEX_VERSION = 1

_MODE_CODES = {BINARY_CONTEXT: 0, FLOAT_CONTEXT: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


@dataclass
class PostingList:
    """Parallel per-keypoint arrays for one word, sorted by img_id."""

    img_ids: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)     # row into the context table
    tfs: np.ndarray = field(repr=False)
    regions: np.ndarray = field(repr=False)  # packed 10-bit pointers
    sigs: np.ndarray = field(repr=False)     # (n, sig_bytes) uint8

    def __len__(self) -> int:
        return self.img_ids.shape[0]


class DeepIndex:
    """Word-keyed inverted file plus per-image context table.

    Mutable while building (add_image), immutable after finalize(). The
    build phase may be fed from several threads; an internal lock makes
    each add atomic and the finalize sort makes the result independent of
    arrival order across images.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        d_ctx: int,
        mode: str = BINARY_CONTEXT,
        alpha: float = 0.5,
    ):
        if mode not in _MODE_CODES:
            raise ValueError(f"unknown context mode {mode!r}")
        self.vocab = vocab
        self.d_ctx = d_ctx
        self.mode = mode
        self.srn_cfg = SrnConfig(alpha)
        self.finalized = False
        self.sig_bytes = 0
        self._lock = threading.Lock()
        # build-phase accumulators, keyed by word / img_id
        self._chunks: dict[int, list[tuple]] = {}
        self._ctx: dict[int, np.ndarray] = {}
        self._n_kp: dict[int, int] = {}
        # finalized state
        self.img_ids: np.ndarray | None = None
        self.kp_counts: np.ndarray | None = None
        self.ctx_table: np.ndarray | None = None
        self.postings: dict[int, PostingList] = {}

    @property
    def n_images(self) -> int:
        if self.finalized:
            return int(self.img_ids.size)
        return len(self._ctx)

    def add_image(self, rec: ImageRecord, he: HeModel, lsh: LshBank | None) -> None:
        """Quantize, sign, and file every keypoint of one image.

        All 81 context vectors are SRN-normalized and entered into the
        context table (sketched in binary mode). Term frequency is counted
        per (word, image) and stamped on each of the word's postings,
        saturating at 255.
        """
        if self.finalized:
            raise Finalized("index is finalized")
        if rec.contexts.shape != (N_SLOTS, self.d_ctx):
            raise DimensionMismatch(
                f"image {rec.img_id}: contexts {rec.contexts.shape} != "
                f"({N_SLOTS}, {self.d_ctx})"
            )

        ctx = srn(rec.contexts, self.srn_cfg)
        if self.mode == BINARY_CONTEXT:
            if lsh is None:
                raise DimensionMismatch("binary mode requires an LSH bank")
            if lsh.dim != self.d_ctx:
                raise DimensionMismatch(f"LSH bank dim {lsh.dim} != d_ctx {self.d_ctx}")
            entry = lsh_sketch(ctx, lsh)
        else:
            entry = ctx.astype(np.float32)

        n = rec.n_keypoints
        if n:
            rs = root_sift(rec.descriptors)
            words = quantize_batch(rs, self.vocab)
            projected = project_descriptors(rs, he)
            sigs = he_signatures(projected, words, he)
            regions = region_pointers(rec.xy, rec.width, rec.height)
            counts = np.bincount(words, minlength=self.vocab.n_words)
            tfs = np.minimum(counts[words], 255).astype(np.uint8)

        with self._lock:
            if rec.img_id in self._ctx:
                raise DuplicateImage(f"img_id {rec.img_id} already indexed")
            self._ctx[rec.img_id] = entry
            self._n_kp[rec.img_id] = n
            if n:
                if self.sig_bytes == 0:
                    self.sig_bytes = sigs.shape[1]
                for w in np.unique(words):
                    mask = words == w
                    self._chunks.setdefault(int(w), []).append(
                        (rec.img_id, tfs[mask], regions[mask], sigs[mask])
                    )

    def finalize(self) -> "DeepIndex":
        """Sort postings, compute document frequencies, freeze the index."""
        if self.finalized:
            return self
        if not self._ctx:
            raise EmptyIndex("no images indexed")
        if self.sig_bytes == 0:
            self.sig_bytes = 16

        self.img_ids = np.array(sorted(self._ctx), dtype=np.uint32)
        self.kp_counts = np.array(
            [self._n_kp[i] for i in self.img_ids], dtype=np.int64
        )
        self.ctx_table = np.stack([self._ctx[i] for i in self.img_ids])

        for w in sorted(self._chunks):
            chunks = self._chunks[w]
            img_ids = np.concatenate(
                [np.full(len(c[1]), c[0], dtype=np.uint32) for c in chunks]
            )
            tfs = np.concatenate([c[1] for c in chunks])
            regions = np.concatenate([c[2] for c in chunks])
            sigs = np.concatenate([c[3] for c in chunks])
            order = np.argsort(img_ids, kind="stable")
            img_ids = img_ids[order]
            rows = np.searchsorted(self.img_ids, img_ids).astype(np.int64)
            self.postings[w] = PostingList(
                img_ids=img_ids,
                rows=rows,
                tfs=tfs[order],
                regions=regions[order],
                sigs=sigs[order],
            )

        self._refresh_stats()
        self._chunks = {}
        self._ctx = {}
        self._n_kp = {}
        self.finalized = True
        return self

    def _refresh_stats(self) -> None:
        df = np.zeros(self.vocab.n_words, dtype=np.int64)
        for w, plist in self.postings.items():
            df[w] = np.unique(plist.img_ids).size
        self.vocab.doc_freq = df
        self.vocab.n_images = int(self.img_ids.size)

    def row_of(self, img_id: int) -> int:
        pos = int(np.searchsorted(self.img_ids, img_id))
        if pos >= self.img_ids.size or self.img_ids[pos] != img_id:
            raise UnknownId(f"img_id {img_id} not in index")
        return pos


def build_index(
    records,
    vocab: Vocabulary,
    he: HeModel,
    lsh: LshBank | None,
    d_ctx: int,
    mode: str = BINARY_CONTEXT,
    alpha: float = 0.5,
) -> DeepIndex:
    """Index a record collection and finalize."""
    idx = DeepIndex(vocab, d_ctx=d_ctx, mode=mode, alpha=alpha)
    for rec in records:
        idx.add_image(rec, he, lsh)
    return idx.finalize()


# --- memory accounting -------------------------------------------------------

GIB = float(2**30)

PER_FEATURE_BYTES = {
    "img_id": 4.0,
    "tf": 1.0,
    "local": 16.0,
    "regional": 1.25,  # 4-bit + 6-bit pointers, accounted at 10 bits
    "global": 0.0,     # reached through the already-stored img_id
}
CTX_SIG_BYTES = 16.0
# brute-force layout: both regional signatures and the global signature
# inlined into every posting instead of pointer + shared table
BRUTE_FORCE_FEATURE_BYTES = 4.0 + 1.0 + 16.0 + 2 * 16.0 + 16.0


@dataclass(frozen=True)
class MemoryStats:
    """Byte accounting for a binary-mode index of n images, k keypoints each."""

    n_images: int
    avg_keypoints: float
    per_feature: dict
    per_image: dict
    dataset_gb: dict
    per_feature_total: float
    per_image_total: float
    dataset_gb_total: float
    brute_force_gb_total: float


def memstats(n_images: int, avg_keypoints: float, mode: str = BINARY_CONTEXT) -> MemoryStats:
    """Closed-form memory accounting for the deep layout, by component.

    Per image, regional cost is the 80 table signatures plus the packed
    pointers on each posting; global cost is one table signature.
    """
    if n_images <= 0 or avg_keypoints <= 0:
        raise ValueError("n_images and avg_keypoints must be positive")
    if mode != BINARY_CONTEXT:
        raise ValueError("memory accounting is defined for binary context mode")

    k = float(avg_keypoints)
    per_image = {
        "img_id": PER_FEATURE_BYTES["img_id"] * k,
        "tf": PER_FEATURE_BYTES["tf"] * k,
        "local": PER_FEATURE_BYTES["local"] * k,
        "regional": CTX_SIG_BYTES * 80 + PER_FEATURE_BYTES["regional"] * k,
        "global": CTX_SIG_BYTES,
    }
    dataset_gb = {name: n_images * b / GIB for name, b in per_image.items()}
    return MemoryStats(
        n_images=n_images,
        avg_keypoints=k,
        per_feature=dict(PER_FEATURE_BYTES),
        per_image=per_image,
        dataset_gb=dataset_gb,
        per_feature_total=sum(PER_FEATURE_BYTES.values()),
        per_image_total=sum(per_image.values()),
        dataset_gb_total=sum(dataset_gb.values()),
        brute_force_gb_total=n_images * k * BRUTE_FORCE_FEATURE_BYTES / GIB,
    )


# --- persistence -------------------------------------------------------------

def _posting_dtype(sig_bytes: int) -> np.dtype:
    return np.dtype(
        [("img", "<u4"), ("tf", "u1"), ("region", "<u2"), ("sig", "u1", (sig_bytes,))]
    )


def save_index(index: DeepIndex, path) -> None:
    """Write a finalized index; see the module docstring for the layout."""
    if not index.finalized:
        raise Finalized("only finalized indexes can be saved")
    try:
        with open(path, "wb") as f:
            f.write(INDEX_MAGIC)
            f.write(
                struct.pack(
                    "<IBIIIBI",
                    INDEX_VERSION,
                    _MODE_CODES[index.mode],
                    index.img_ids.size,
                    index.vocab.n_words,
                    index.d_ctx,
                    index.sig_bytes,
                    len(index.postings),
                )
            )
            dt = _posting_dtype(index.sig_bytes)
            for w in sorted(index.postings):
                plist = index.postings[w]
                f.write(struct.pack("<II", w, len(plist)))
                packed = np.empty(len(plist), dtype=dt)
                packed["img"] = plist.img_ids
                packed["tf"] = plist.tfs
                packed["region"] = plist.regions
                packed["sig"] = plist.sigs
                f.write(packed.tobytes())
            for row, img_id in enumerate(index.img_ids):
                f.write(struct.pack("<I", int(img_id)))
                if index.mode == BINARY_CONTEXT:
                    f.write(index.ctx_table[row].tobytes())
                else:
                    f.write(
                        np.ascontiguousarray(
                            index.ctx_table[row], dtype="<f4"
                        ).tobytes()
                    )
    except OSError as exc:
        raise IoFailure(f"cannot write index {path}: {exc}") from exc


def load_index(path, vocab: Vocabulary, alpha: float = 0.5) -> DeepIndex:
    """Read an index file and rebind it to its vocabulary.

    Document frequencies and the image count are recomputed from the
    posting lists and written back into the vocabulary, so a query against
    the loaded index scores identically to one before saving. The SRN
    exponent is not part of the file and must match the build.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read index {path}: {exc}") from exc

    if data[:4] != INDEX_MAGIC:
        raise BadMagic(f"expected {INDEX_MAGIC!r}, got {data[:4]!r}")
    header = struct.Struct("<IBIIIBI")
    if len(data) < 4 + header.size:
        raise TruncatedFile("index header incomplete")
    version, mode_code, n_images, n_words, d_ctx, sig_bytes, n_lists = header.unpack_from(
        data, 4
    )
    if version != INDEX_VERSION:
        raise VersionMismatch(f"index version {version}, expected {INDEX_VERSION}")
    if mode_code not in _MODE_NAMES:
        raise VersionMismatch(f"unknown mode code {mode_code}")
    if n_words != vocab.n_words:
        raise DimensionMismatch(
            f"index built with {n_words} words, vocabulary has {vocab.n_words}"
        )

    index = DeepIndex(vocab, d_ctx=d_ctx, mode=_MODE_NAMES[mode_code], alpha=alpha)
    index.sig_bytes = sig_bytes
    offset = 4 + header.size
    dt = _posting_dtype(sig_bytes)

    raw_lists: dict[int, np.ndarray] = {}
    for _ in range(n_lists):
        if offset + 8 > len(data):
            raise TruncatedFile("posting list header incomplete")
        w, count = struct.unpack_from("<II", data, offset)
        offset += 8
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise TruncatedFile(f"posting list {w} incomplete")
        raw_lists[w] = np.frombuffer(data, dtype=dt, count=count, offset=offset)
        offset += nbytes

    img_ids = np.empty(n_images, dtype=np.uint32)
    entry_bytes = (
        N_SLOTS * sig_bytes if index.mode == BINARY_CONTEXT else N_SLOTS * d_ctx * 4
    )
    entries = []
    for i in range(n_images):
        if offset + 4 + entry_bytes > len(data):
            raise TruncatedFile("context table incomplete")
        (img_ids[i],) = struct.unpack_from("<I", data, offset)
        offset += 4
        if index.mode == BINARY_CONTEXT:
            entry = (
                np.frombuffer(data, dtype=np.uint8, count=N_SLOTS * sig_bytes, offset=offset)
                .reshape(N_SLOTS, sig_bytes)
                .copy()
            )
        else:
            entry = (
                np.frombuffer(data, dtype="<f4", count=N_SLOTS * d_ctx, offset=offset)
                .reshape(N_SLOTS, d_ctx)
                .copy()
            )
        entries.append(entry)
        offset += entry_bytes

    index.img_ids = img_ids
    index.ctx_table = np.stack(entries) if entries else None
    kp_counts = np.zeros(n_images, dtype=np.int64)
    for w, raw in raw_lists.items():
        rows = np.searchsorted(img_ids, raw["img"]).astype(np.int64)
        index.postings[w] = PostingList(
            img_ids=raw["img"].astype(np.uint32),
            rows=rows,
            tfs=raw["tf"].copy(),
            regions=raw["region"].astype(np.uint16),
            sigs=raw["sig"].copy(),
        )
        kp_counts += np.bincount(rows, minlength=n_images).astype(np.int64)
    index.kp_counts = kp_counts
    index._refresh_stats()
    index.finalized = True
    return index
