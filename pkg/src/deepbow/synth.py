"""Synthetic benchmark generator: planted near-duplicate groups.

Each group shares a base layout: keypoint descriptors drawn from a common
prototype pool (with replacement, so repeated words appear within an
image), positions, and 81 heavy-tailed context vectors. Group members add
Gaussian noise scaled by the configured levels; distractors are fully
independent draws. Ground truth lists each group as the relevant set of
every member, member ids included.

All randomness comes from one seeded generator consumed in a fixed order
that does not depend on the noise levels, so two configs differing only
in noise share the same underlying draws; noise sweeps are therefore
directly comparable and noise 0 yields bit-exact duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datastore import GroundTruth, ImageRecord
from .geometry import N_SLOTS


@dataclass(frozen=True)
class SynthConfig:
    n_groups: int = 50
    group_size: int = 4
    keypoints: int = 40
    d_ctx: int = 32
    desc_noise: float = 6.0   # descriptor units (0..255 scale)
    ctx_noise: float = 0.5    # absolute, against base values of std ~3.9
    distractors: int = 100
    seed: int = 0
    width: int = 640
    height: int = 480
    n_prototypes: int = 0     # 0 = derive from keypoints

    def __post_init__(self):
        if min(self.n_groups, self.group_size, self.keypoints, self.d_ctx) < 1:
            raise ValueError("counts must be positive")
        if self.desc_noise < 0 or self.ctx_noise < 0 or self.distractors < 0:
            raise ValueError("noise levels and distractor count must be >= 0")


def generate(cfg: SynthConfig) -> tuple[list[ImageRecord], GroundTruth]:
    """Build the dataset and its ground truth; deterministic from cfg.seed."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_proto = cfg.n_prototypes or max(16, 2 * cfg.keypoints)
    protos = rng.uniform(20.0, 235.0, size=(n_proto, 128))

    xy_hi = np.array([cfg.width, cfg.height], dtype=np.float64) * (1.0 - 1e-6)
    records: list[ImageRecord] = []
    relevant: dict[int, set[int]] = {}
    img_id = 0

    for _ in range(cfg.n_groups):
        proto_idx = rng.integers(0, n_proto, size=cfg.keypoints)
        base_desc = protos[proto_idx] + rng.normal(0.0, 8.0, (cfg.keypoints, 128))
        base_xy = rng.uniform(0.0, 1.0, (cfg.keypoints, 2)) * xy_hi
        # cubed Gaussians: heavy-tailed signed values, like raw activations
        base_ctx = rng.standard_normal((N_SLOTS, cfg.d_ctx)) ** 3

        group_ids = list(range(img_id, img_id + cfg.group_size))
        for _member in range(cfg.group_size):
            desc_eps = rng.standard_normal((cfg.keypoints, 128))
            xy_eps = rng.standard_normal((cfg.keypoints, 2))
            ctx_eps = rng.standard_normal((N_SLOTS, cfg.d_ctx))
            desc = np.clip(base_desc + cfg.desc_noise * desc_eps, 0.0, 255.0)
            xy = np.clip(base_xy + 0.5 * cfg.desc_noise * xy_eps, 0.0, xy_hi)
            records.append(
                ImageRecord(
                    img_id=img_id,
                    width=cfg.width,
                    height=cfg.height,
                    xy=xy.astype(np.float32),
                    descriptors=np.round(desc).astype(np.uint8),
                    contexts=(base_ctx + cfg.ctx_noise * ctx_eps).astype(np.float32),
                )
            )
            relevant[img_id] = set(group_ids)
            img_id += 1

    for _ in range(cfg.distractors):
        proto_idx = rng.integers(0, n_proto, size=cfg.keypoints)
        desc = protos[proto_idx] + rng.normal(0.0, 8.0, (cfg.keypoints, 128))
        xy = rng.uniform(0.0, 1.0, (cfg.keypoints, 2)) * xy_hi
        ctx = rng.standard_normal((N_SLOTS, cfg.d_ctx)) ** 3
        records.append(
            ImageRecord(
                img_id=img_id,
                width=cfg.width,
                height=cfg.height,
                xy=xy.astype(np.float32),
                descriptors=np.round(np.clip(desc, 0.0, 255.0)).astype(np.uint8),
                contexts=ctx.astype(np.float32),
            )
        )
        img_id += 1

    return records, GroundTruth(relevant=relevant)
