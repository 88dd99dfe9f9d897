"""Synthetic moving-sprite videos and the fixed toy pixel codec.

Videos are single-channel ``(frames, height, width, 1)`` arrays in [0, 1]
showing a bright square sprite on a dark canvas.  The "moving" class
translates the sprite by a seed-drawn integer velocity with toroidal
wraparound; the "static" class keeps it still.  Wraparound keeps the
motion statistics stationary, which the frame-difference motion proxy
relies on.

The codec is a fixed invertible per-pixel affine map (no learned
autoencoder): ``encode(x) = ENCODE_SCALE * x + ENCODE_SHIFT``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "CLASS_STATIC",
    "CLASS_MOVING",
    "CLASS_NAMES",
    "ENCODE_SCALE",
    "ENCODE_SHIFT",
    "SpriteDatasetConfig",
    "SpriteDataset",
    "generate_sprite_video",
    "make_dataset",
    "reference_frame",
    "toy_encode",
    "toy_decode",
]

CLASS_STATIC = 0
CLASS_MOVING = 1
CLASS_NAMES = ("static", "moving")

# Maps pixel range [0, 1] onto latent range [-1, 1], comparable to the
# unit-variance noise the sampler starts from.
ENCODE_SCALE = 2.0
ENCODE_SHIFT = -1.0


@dataclass(frozen=True)
class SpriteDatasetConfig:
    """Geometry and sampling ranges for the sprite corpus.

    ``channels`` counts the per-token channels the downstream model sees:
    one content channel plus one reference-slot channel.  The rendered
    videos themselves carry ``channels - 1`` (= 1) content channel.
    """

    num_videos: int = 64
    frames: int = 8
    height: int = 8
    width: int = 8
    channels: int = 2
    sprite_size: int = 2
    max_speed: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_videos, self.frames, self.height, self.width) < 1:
            raise ValueError("num_videos, frames, height and width must be positive")
        if self.channels < 2:
            raise ValueError("channels must cover the content channel plus the reference slot")
        if self.sprite_size < 1 or self.sprite_size > min(self.height, self.width):
            raise ValueError(
                f"sprite_size {self.sprite_size} does not fit a "
                f"{self.height}x{self.width} canvas"
            )
        if self.max_speed < 1:
            raise ValueError("max_speed must be at least 1 pixel/frame")

    @property
    def content_channels(self) -> int:
        return self.channels - 1


def _render(cfg: SpriteDatasetConfig, y0: int, x0: int, vy: int, vx: int) -> np.ndarray:
    video = np.zeros((cfg.frames, cfg.height, cfg.width, cfg.content_channels))
    rows = np.arange(cfg.sprite_size)
    for f in range(cfg.frames):
        ys = (y0 + f * vy + rows) % cfg.height
        xs = (x0 + f * vx + rows) % cfg.width
        video[np.ix_([f], ys, xs)] = 1.0
    return video


def generate_sprite_video(
    seed: int, cfg: SpriteDatasetConfig, class_id: int | None = None
) -> tuple[np.ndarray, int]:
    """One ``(frames, height, width, 1)`` video plus its class id.

    Deterministic in ``seed``.  When ``class_id`` is None it is drawn
    50/50; passing it explicitly lets a dataset enforce exact balance.
    """
    rng = stream(seed, "sprite")
    if class_id is None:
        class_id = int(rng.integers(0, 2))
    if class_id not in (CLASS_STATIC, CLASS_MOVING):
        raise ValueError(f"unknown class id {class_id}")
    y0 = int(rng.integers(0, cfg.height))
    x0 = int(rng.integers(0, cfg.width))
    vy = vx = 0
    if class_id == CLASS_MOVING:
        while vy == 0 and vx == 0:
            vy = int(rng.integers(-cfg.max_speed, cfg.max_speed + 1))
            vx = int(rng.integers(-cfg.max_speed, cfg.max_speed + 1))
    return _render(cfg, y0, x0, vy, vx), class_id


@dataclass
class SpriteDataset:
    """Materialized corpus: ``videos[(N, F, H, W, 1)]`` and integer labels."""

    videos: np.ndarray
    labels: np.ndarray
    config: SpriteDatasetConfig

    def __len__(self) -> int:
        return self.videos.shape[0]

    def class_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.labels == k)) for k, name in enumerate(CLASS_NAMES)}


def make_dataset(cfg: SpriteDatasetConfig) -> SpriteDataset:
    """Generate the full corpus with an exactly balanced 50/50 class mix."""
    seeds = stream(cfg.seed, "dataset").integers(0, 2**63, size=cfg.num_videos)
    videos = np.empty((cfg.num_videos, cfg.frames, cfg.height, cfg.width, cfg.content_channels))
    labels = np.empty(cfg.num_videos, dtype=np.int64)
    for i in range(cfg.num_videos):
        videos[i], labels[i] = generate_sprite_video(int(seeds[i]), cfg, class_id=i % 2)
    return SpriteDataset(videos=videos, labels=labels, config=cfg)


def reference_frame(seed: int, cfg: SpriteDatasetConfig) -> np.ndarray:
    """A standalone ``(H, W, 1)`` reference image: frame 0 of a seeded video."""
    video, _ = generate_sprite_video(seed, cfg, class_id=CLASS_MOVING)
    return video[0]


def toy_encode(pixels: np.ndarray) -> np.ndarray:
    """Fixed affine pixel -> latent map."""
    return ENCODE_SCALE * np.asarray(pixels, dtype=float) + ENCODE_SHIFT


def toy_decode(latent: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`toy_encode`."""
    return (np.asarray(latent, dtype=float) - ENCODE_SHIFT) / ENCODE_SCALE
