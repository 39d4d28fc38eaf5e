"""Three-scale image partition and context-slot layout.

An image is split at three scales: the whole image (global), a 4x4 grid
(16 blocks) and an 8x8 grid (64 blocks). Each keypoint therefore sits in
exactly one block per regional scale. The 1 + 16 + 64 = 81 context vectors
of an image are stored in a fixed slot order:

    slot 0        global
    slots 1..16   4x4 blocks, row-major
    slots 17..80  8x8 blocks, row-major

This order is the on-disk contract used by the dataset container and the
index's context table. A keypoint's two block indices fit in 4 and 6 bits
and are packed into a single 10-bit region pointer.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidBlock, OutOfBounds

N_SLOTS = 81
SCALE2_BLOCKS = 16
SCALE3_BLOCKS = 64

_DIVISIONS = {2: 4, 3: 8}


def block_index(scale: int, x: float, y: float, width: float, height: float) -> int:
    """Block index of point (x, y) at a regional scale (2 -> 4x4, 3 -> 8x8).

    Points exactly on the right/bottom edge are clamped into the last
    row/column so the partition is total over [0, width] x [0, height].
    """
    if scale not in _DIVISIONS:
        raise InvalidBlock(f"scale must be 2 or 3, got {scale}")
    if width <= 0 or height <= 0:
        raise OutOfBounds(f"image size must be positive, got {width}x{height}")
    if not (0 <= x <= width and 0 <= y <= height):
        raise OutOfBounds(f"point ({x}, {y}) outside image {width}x{height}")
    n = _DIVISIONS[scale]
    col = min(int(x / (width / n)), n - 1)
    row = min(int(y / (height / n)), n - 1)
    return n * row + col


def context_slot(kind: str, block: int = 0) -> int:
    """Slot in [0, 81) for a context of the given kind ('global', 'scale2', 'scale3')."""
    if kind == "global":
        if block != 0:
            raise InvalidBlock(f"global context has a single block, got {block}")
        return 0
    if kind == "scale2":
        if not 0 <= block < SCALE2_BLOCKS:
            raise InvalidBlock(f"scale2 block out of range: {block}")
        return 1 + block
    if kind == "scale3":
        if not 0 <= block < SCALE3_BLOCKS:
            raise InvalidBlock(f"scale3 block out of range: {block}")
        return 17 + block
    raise InvalidBlock(f"unknown context kind: {kind!r}")


def slot_kind(slot: int) -> tuple[str, int]:
    """Inverse of context_slot: (kind, block) for a slot in [0, 81)."""
    if not 0 <= slot < N_SLOTS:
        raise InvalidBlock(f"slot out of range: {slot}")
    if slot == 0:
        return "global", 0
    if slot < 17:
        return "scale2", slot - 1
    return "scale3", slot - 17


def pack_region(scale2_idx: int, scale3_idx: int) -> int:
    """Pack the two block indices into one 10-bit pointer (scale2 low, scale3 high)."""
    if not 0 <= scale2_idx < SCALE2_BLOCKS:
        raise InvalidBlock(f"scale2 index out of range: {scale2_idx}")
    if not 0 <= scale3_idx < SCALE3_BLOCKS:
        raise InvalidBlock(f"scale3 index out of range: {scale3_idx}")
    return scale2_idx | (scale3_idx << 4)


def unpack_region(packed: int) -> tuple[int, int]:
    """Inverse of pack_region."""
    if not 0 <= packed < 1024:
        raise InvalidBlock(f"packed region pointer out of range: {packed}")
    return packed & 0xF, packed >> 4


def region_pointer(x: float, y: float, width: float, height: float) -> int:
    """Packed 10-bit region pointer for a keypoint position."""
    return pack_region(
        block_index(2, x, y, width, height),
        block_index(3, x, y, width, height),
    )


def region_pointers(xy, width: float, height: float):
    """Vectorized region_pointer over an (n, 2) position array; uint16 out."""
    xy = np.asarray(xy, dtype=np.float64)
    if xy.size == 0:
        return np.zeros(0, dtype=np.uint16)
    x, y = xy[:, 0], xy[:, 1]
    if width <= 0 or height <= 0:
        raise OutOfBounds(f"image size must be positive, got {width}x{height}")
    if np.any(x < 0) or np.any(y < 0) or np.any(x > width) or np.any(y > height):
        raise OutOfBounds("keypoint outside image bounds")
    col2 = np.minimum((x / (width / 4)).astype(np.int64), 3)
    row2 = np.minimum((y / (height / 4)).astype(np.int64), 3)
    col3 = np.minimum((x / (width / 8)).astype(np.int64), 7)
    row3 = np.minimum((y / (height / 8)).astype(np.int64), 7)
    return ((4 * row2 + col2) | ((8 * row3 + col3) << 4)).astype(np.uint16)
