"""Match-strength kernels and their product fusion.

A keypoint pair that already shares a visual word is scored on up to
three levels, each mapping a distance to a similarity in [0, 1]:

    local     exp(-dH^2 / sigma^2) if dH < kappa else 0   (Hamming distance)
    regional  exp(-dE^3 / gamma^3)                        (Euclidean)
    global    exp(-dE^5 / theta^5)                        (Euclidean)

The combined match strength is the product over enabled levels; disabled
levels contribute 1, so masking levels reproduces the plain
counting / local-only baselines. When context features are stored as
binary sketches, the Hamming distance is first mapped back to the
Euclidean distance of unit vectors at the estimated angle
(sqrt(2 - 2 cos(pi * dH / b))).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SIGMA = 21.0
DEFAULT_KAPPA = 60
DEFAULT_GAMMA = 0.8
DEFAULT_THETA = 0.4

LEVELS = ("local", "regional", "global")
ALL_LEVELS = frozenset(LEVELS)

FLOAT_CONTEXT = "float_context"
BINARY_CONTEXT = "binary_context"


@dataclass(frozen=True)
class MatchParams:
    """Kernel parameters, context mode, and the enabled-level mask."""

    sigma: float = DEFAULT_SIGMA
    kappa: int = DEFAULT_KAPPA
    gamma: float = DEFAULT_GAMMA
    theta: float = DEFAULT_THETA
    mode: str = BINARY_CONTEXT
    levels: frozenset = field(default_factory=lambda: ALL_LEVELS)

    def __post_init__(self):
        if self.sigma <= 0 or self.gamma <= 0 or self.theta <= 0 or self.kappa <= 0:
            raise ValueError("kernel parameters must be positive")
        if self.mode not in (FLOAT_CONTEXT, BINARY_CONTEXT):
            raise ValueError(f"unknown context mode {self.mode!r}")
        unknown = frozenset(self.levels) - ALL_LEVELS
        if unknown:
            raise ValueError(f"unknown levels {sorted(unknown)}")
        object.__setattr__(self, "levels", frozenset(self.levels))


@dataclass(frozen=True)
class MatchScore:
    """Per-level similarities and their product; disabled levels read 1."""

    s_local: float
    s_regional: float
    s_global: float

    @property
    def combined(self) -> float:
        return self.s_local * self.s_regional * self.s_global


def s_local(dh, params: MatchParams = MatchParams()):
    """Local kernel on a Hamming distance, hard-gated at kappa."""
    dh = np.asarray(dh, dtype=np.float64)
    val = np.exp(-(dh * dh) / (params.sigma * params.sigma))
    out = np.where(dh < params.kappa, val, 0.0)
    return float(out) if out.ndim == 0 else out


def s_regional(de, params: MatchParams = MatchParams()):
    """Regional kernel on a Euclidean distance."""
    de = np.asarray(de, dtype=np.float64)
    out = np.exp(-(de**3) / params.gamma**3)
    return float(out) if out.ndim == 0 else out


def s_global(de, params: MatchParams = MatchParams()):
    """Global kernel on a Euclidean distance."""
    de = np.asarray(de, dtype=np.float64)
    out = np.exp(-(de**5) / params.theta**5)
    return float(out) if out.ndim == 0 else out


def sketch_to_euclidean(dh, b: int):
    """Euclidean distance of unit vectors at the angle a Hamming distance implies.

    dH/b estimates angle/pi for hyperplane sketches, so the distance is
    sqrt(2 - 2 cos(pi * dH / b)); monotone, 0 at dH=0 and 2 at dH=b.
    """
    dh = np.asarray(dh, dtype=np.float64)
    angle = math.pi * dh / b
    out = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * np.cos(angle)))
    return float(out) if out.ndim == 0 else out


def combine(
    dh_local: int,
    d_regional: float,
    d_global: float,
    params: MatchParams = MatchParams(),
    context_bits: int = 128,
) -> MatchScore:
    """Fused match score for one keypoint pair already gated on word equality.

    In binary context mode, d_regional and d_global are Hamming distances
    and are mapped through sketch_to_euclidean first.
    """
    if params.mode == BINARY_CONTEXT:
        d_regional = sketch_to_euclidean(d_regional, context_bits)
        d_global = sketch_to_euclidean(d_global, context_bits)
    return MatchScore(
        s_local=s_local(dh_local, params) if "local" in params.levels else 1.0,
        s_regional=s_regional(d_regional, params) if "regional" in params.levels else 1.0,
        s_global=s_global(d_global, params) if "global" in params.levels else 1.0,
    )
