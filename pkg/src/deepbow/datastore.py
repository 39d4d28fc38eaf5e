"""Dataset container and ground-truth files.

Dataset files hold raw ingested features, little-endian throughout:

    magic   "DEMB"
    version u32 = 1
    d_ctx   u32                 context vector dimension
    count   u32                 number of images
    per image:
        img_id u32, width u32, height u32, n_kp u32
        n_kp keypoints of (x f32, y f32, descriptor 128 x u8)
        81 context vectors of d_ctx f32 (slot order per geometry)

Context vectors are stored raw (pre-normalization) so the SRN exponent can
change without re-exporting data.

Ground truth is plain text: one line "query_id: id id id ..." per query,
'#' lines ignored. By convention a query lists itself among its relevant
ids; the evaluator decides whether to count it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateImageId,
    IoFailure,
    OutOfBounds,
    ParseError,
    TruncatedFile,
    UnknownId,
    VersionMismatch,
)
from .geometry import N_SLOTS

DATASET_MAGIC = b"DEMB"
DATASET_VERSION = 1
DEFAULT_D_CTX = 4096

_KP_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("desc", "u1", (128,))])


@dataclass
class ImageRecord:
    """One ingested image: keypoints plus its 81 raw context vectors.

    xy is (n, 2) float32, descriptors (n, 128) uint8, contexts
    (81, d_ctx) float32.
    """

    img_id: int
    width: int
    height: int
    xy: np.ndarray = field(repr=False)
    descriptors: np.ndarray = field(repr=False)
    contexts: np.ndarray = field(repr=False)

    @property
    def n_keypoints(self) -> int:
        return self.xy.shape[0]

    @property
    def d_ctx(self) -> int:
        return self.contexts.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.img_id == other.img_id
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.descriptors, other.descriptors)
            and np.array_equal(self.contexts, other.contexts)
        )


def validate_record(rec: ImageRecord) -> None:
    """Check one record's invariants; raises on the first violation."""
    if rec.width <= 0 or rec.height <= 0:
        raise OutOfBounds(f"image {rec.img_id}: size must be positive")
    if rec.xy.ndim != 2 or rec.xy.shape[1] != 2:
        raise DimensionMismatch(f"image {rec.img_id}: xy must be (n, 2)")
    if rec.descriptors.ndim != 2 or rec.descriptors.shape[1] != 128:
        raise DimensionMismatch(f"image {rec.img_id}: descriptors must be (n, 128)")
    if rec.descriptors.shape[0] != rec.xy.shape[0]:
        raise DimensionMismatch(f"image {rec.img_id}: keypoint count mismatch")
    if rec.contexts.ndim != 2 or rec.contexts.shape[0] != N_SLOTS:
        raise DimensionMismatch(
            f"image {rec.img_id}: expected {N_SLOTS} context vectors, "
            f"got {rec.contexts.shape[0]}"
        )
    if rec.n_keypoints:
        x, y = rec.xy[:, 0], rec.xy[:, 1]
        if (
            np.any(x < 0)
            or np.any(y < 0)
            or np.any(x >= rec.width)
            or np.any(y >= rec.height)
        ):
            raise OutOfBounds(f"image {rec.img_id}: keypoint outside image bounds")


def write_dataset(records: list[ImageRecord], path) -> None:
    """Serialize records to a dataset file; validates invariants first."""
    d_ctx = records[0].d_ctx if records else DEFAULT_D_CTX
    seen: set[int] = set()
    for rec in records:
        validate_record(rec)
        if rec.d_ctx != d_ctx:
            raise DimensionMismatch(
                f"image {rec.img_id}: d_ctx {rec.d_ctx} != {d_ctx}"
            )
        if rec.img_id in seen:
            raise DuplicateImageId(f"duplicate img_id {rec.img_id}")
        seen.add(rec.img_id)

    try:
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<III", DATASET_VERSION, d_ctx, len(records)))
            for rec in records:
                f.write(
                    struct.pack(
                        "<IIII", rec.img_id, rec.width, rec.height, rec.n_keypoints
                    )
                )
                kps = np.empty(rec.n_keypoints, dtype=_KP_DTYPE)
                kps["x"] = rec.xy[:, 0]
                kps["y"] = rec.xy[:, 1]
                kps["desc"] = rec.descriptors
                f.write(kps.tobytes())
                f.write(np.ascontiguousarray(rec.contexts, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path) -> list[ImageRecord]:
    """Parse a dataset file back into records, in file order."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc

    if data[:4] != DATASET_MAGIC:
        raise BadMagic(f"expected {DATASET_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 16:
        raise TruncatedFile("dataset header incomplete")
    version, d_ctx, count = struct.unpack_from("<III", data, 4)
    if version != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {DATASET_VERSION}")

    records: list[ImageRecord] = []
    seen: set[int] = set()
    offset = 16
    ctx_bytes = N_SLOTS * d_ctx * 4
    for _ in range(count):
        if offset + 16 > len(data):
            raise TruncatedFile("image header incomplete")
        img_id, width, height, n_kp = struct.unpack_from("<IIII", data, offset)
        offset += 16
        kp_bytes = n_kp * _KP_DTYPE.itemsize
        if offset + kp_bytes > len(data):
            raise TruncatedFile(f"image {img_id}: keypoint block incomplete")
        kps = np.frombuffer(data, dtype=_KP_DTYPE, count=n_kp, offset=offset)
        offset += kp_bytes
        if offset + ctx_bytes > len(data):
            # ran out inside the context block: payload disagrees with header
            raise DimensionMismatch(
                f"image {img_id}: context payload shorter than 81 x {d_ctx} floats"
            )
        contexts = (
            np.frombuffer(data, dtype="<f4", count=N_SLOTS * d_ctx, offset=offset)
            .reshape(N_SLOTS, d_ctx)
            .copy()
        )
        offset += ctx_bytes

        if img_id in seen:
            raise DuplicateImageId(f"duplicate img_id {img_id}")
        seen.add(img_id)

        xy = np.column_stack([kps["x"], kps["y"]]).astype(np.float32)
        rec = ImageRecord(
            img_id=img_id,
            width=width,
            height=height,
            xy=xy,
            descriptors=kps["desc"].copy(),
            contexts=contexts,
        )
        validate_record(rec)
        records.append(rec)
    return records


@dataclass
class GroundTruth:
    """Query ids mapped to their relevant-image id sets."""

    relevant: dict[int, set[int]] = field(default_factory=dict)

    @property
    def queries(self) -> list[int]:
        return list(self.relevant)


def read_ground_truth(path, valid_ids: set[int] | None = None) -> GroundTruth:
    """Parse a ground-truth file; validates ids against valid_ids when given."""
    relevant: dict[int, set[int]] = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read ground truth {path}: {exc}") from exc

    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise ParseError(f"{path}:{lineno}: missing ':'")
        try:
            query = int(head)
            ids = {int(tok) for tok in tail.split()}
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if valid_ids is not None:
            unknown = ({query} | ids) - valid_ids
            if unknown:
                raise UnknownId(f"{path}:{lineno}: unknown ids {sorted(unknown)}")
        relevant[query] = ids
    return GroundTruth(relevant=relevant)


def write_ground_truth(truth: GroundTruth, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for query in sorted(truth.relevant):
                ids = " ".join(str(i) for i in sorted(truth.relevant[query]))
                f.write(f"{query}: {ids}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write ground truth {path}: {exc}") from exc
