"""Vector normalization: signed root normalization and rootSIFT.

Signed root normalization (SRN) flattens heavy-tailed context vectors by
mapping each component to sign(x)*|x|^alpha before l2-normalizing; alpha=1
degenerates to plain l2 normalization. rootSIFT is the usual
l1-normalize-then-square-root transform of a raw SIFT byte descriptor,
which is l2-normalized by construction.

All arithmetic is done in float64; callers that persist results cast to
float32 at the storage boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector

DEFAULT_ALPHA = 0.5


@dataclass(frozen=True)
class SrnConfig:
    """Signed-root exponent; must lie in [0, 1]."""

    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def srn(v: np.ndarray, cfg: SrnConfig = SrnConfig()) -> np.ndarray:
    """Signed root normalization: sign(x)*|x|^alpha per component, then l2 norm.

    Accepts a single vector or a batch (last axis = components). Raises
    DegenerateVector if any input vector is all zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.abs(v) ** cfg.alpha
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateVector("srn input is all zeros")
    return out / norms


def root_sift(d: np.ndarray) -> np.ndarray:
    """rootSIFT: sqrt(d / ||d||_1) componentwise; unit l2 norm by construction.

    Accepts a single 128-byte descriptor or a batch of them.
    """
    d = np.asarray(d, dtype=np.float64)
    l1 = np.sum(np.abs(d), axis=-1, keepdims=True)
    if np.any(l1 == 0.0):
        raise DegenerateVector("descriptor is all zeros")
    return np.sqrt(np.abs(d) / l1)
