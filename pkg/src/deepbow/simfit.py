"""Fitting the exponential similarity curves from labeled distance samples.

Match probability as a function of feature distance is modeled as
exp(-(d/c)^p) with a fixed integer exponent p (2 for local, 3 for
regional, 5 for global) and a fitted scale c. Labeled (distance, is_match)
samples are binned into an empirical match-probability profile and c is
recovered by least squares in the log domain, which is closed-form:

    minimize over c:  sum_i (ln p_i + (d_i / c)^p)^2

Bins with probability 0 are excluded (log undefined; the model never
reaches 0 anyway). The tuned shipped defaults are sigma=21, gamma=0.8,
theta=0.4 and live with the scoring kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, IoFailure, NoSamples, ParseError


@dataclass(frozen=True)
class SimilarityCurve:
    """exp(-(d/c)^p) similarity as a function of distance d."""

    p: int
    c: float

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"exponent must be >= 1, got {self.p}")
        if not self.c > 0:
            raise ValueError(f"scale must be positive, got {self.c}")

    def evaluate(self, d):
        return np.exp(-((np.asarray(d, dtype=np.float64) / self.c) ** self.p))


def empirical_match_probability(
    distances: np.ndarray, labels: np.ndarray, n_bins: int
) -> list[tuple[float, float]]:
    """Binned match probability: (bin center, matches / total) per nonempty bin.

    Bins are equal-width over [0, max distance]; empty bins are omitted.
    """
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if distances.size == 0:
        raise NoSamples("no labeled samples")
    if distances.shape != labels.shape:
        raise ValueError("distances and labels must have the same length")
    if n_bins < 2:
        raise ValueError(f"need at least 2 bins, got {n_bins}")

    max_d = float(distances.max())
    if max_d == 0.0:
        return [(0.0, float(labels.mean()))]

    width = max_d / n_bins
    idx = np.minimum((distances / width).astype(np.int64), n_bins - 1)
    totals = np.bincount(idx, minlength=n_bins)
    matches = np.bincount(idx, weights=labels.astype(np.float64), minlength=n_bins)
    out = []
    for b in range(n_bins):
        if totals[b]:
            out.append(((b + 0.5) * width, float(matches[b] / totals[b])))
    return out


def fit_curve(bin_probs: list[tuple[float, float]], p: int) -> SimilarityCurve:
    """Least-squares fit of the scale c with the exponent p held fixed.

    In the log domain the model is linear through the origin,
    -ln(prob) = d^p / c^p, so the slope has a closed form. Bins with
    probability outside (0, 1] are unusable; fewer than two usable bins,
    or all probabilities exactly 1, give DegenerateFit.
    """
    usable = [(d, q) for d, q in bin_probs if 0.0 < q <= 1.0]
    if len(usable) < 2:
        raise DegenerateFit(f"need >= 2 bins with probability in (0, 1], have {len(usable)}")
    d = np.array([x for x, _ in usable], dtype=np.float64)
    q = np.array([x for _, x in usable], dtype=np.float64)

    dp = d**p
    denom = float(np.sum(dp * dp))
    slope = float(np.sum(dp * -np.log(q))) / denom if denom > 0 else 0.0
    if slope <= 0.0:
        raise DegenerateFit("all usable probabilities are 1; scale is unbounded")
    return SimilarityCurve(p=p, c=float(slope ** (-1.0 / p)))


def read_labeled_samples(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a "distance,label" file into (distances, labels) arrays."""
    distances: list[float] = []
    labels: list[bool] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read samples {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'distance,label'")
        try:
            dist = float(parts[0])
            label = int(parts[1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if label not in (0, 1):
            raise ParseError(f"{path}:{lineno}: label must be 0 or 1")
        distances.append(dist)
        labels.append(bool(label))
    return np.array(distances, dtype=np.float64), np.array(labels, dtype=bool)
