"""Spatiotemporal token indexing for a frames x height x width latent grid.

Tokens are ordered frame-major, then row-major within a frame, so the
reference frame (frame 0) occupies the contiguous index prefix
``[0, height * width)``.  That prefix structure is what lets the attention
kernel apply a reference-key bias as a block operation instead of a dense
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TokenLayout"]


@dataclass(frozen=True)
class TokenLayout:
    """Bijective map between flat token indices and (frame, row, col) triples."""

    frames: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")

    @property
    def frame_size(self) -> int:
        """Tokens per frame (height * width)."""
        return self.height * self.width

    @property
    def token_count(self) -> int:
        """Total tokens S = frames * height * width."""
        return self.frames * self.height * self.width

    def flatten_index(self, f: int, y: int, x: int) -> int:
        """Flat index of the token at frame ``f``, row ``y``, col ``x``."""
        if not (0 <= f < self.frames and 0 <= y < self.height and 0 <= x < self.width):
            raise IndexError(f"coordinate (f={f}, y={y}, x={x}) out of range for {self}")
        return f * self.frame_size + y * self.width + x

    def unflatten_index(self, i: int) -> tuple[int, int, int]:
        """Inverse of :meth:`flatten_index`."""
        self._check_token(i)
        f, rem = divmod(i, self.frame_size)
        y, x = divmod(rem, self.width)
        return f, y, x

    def frame_of(self, i: int) -> int:
        """Frame index of token ``i``."""
        self._check_token(i)
        return i // self.frame_size

    def frame_index_map(self) -> np.ndarray:
        """Length-S integer array mapping every token to its frame index."""
        return np.arange(self.token_count) // self.frame_size

    def reference_indices(self) -> np.ndarray:
        """Sorted token indices of the reference frame (frame 0)."""
        return np.arange(self.frame_size)

    def _check_token(self, i: int) -> None:
        if not 0 <= i < self.token_count:
            raise IndexError(f"token index {i} out of range [0, {self.token_count})")
