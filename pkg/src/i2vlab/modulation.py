"""Reference-frame attention-logit modulation.

The core rule subtracts ``gamma * phi(frame(query))`` from every attention
logit whose key token lies in the reference frame and whose query token
does not.  ``phi`` is a frame-wise schedule, ``gamma`` may be negative
(which strengthens instead of weakens the reference pathway), and the
whole intervention is gated to the first ``step_ratio`` fraction of
denoising steps.

Because reference tokens occupy a contiguous index prefix (see
:mod:`i2vlab.layout`), the bias never needs a dense S x S matrix: it is a
per-query scalar applied to a fixed key-column prefix, captured by
:class:`BiasSpec`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .layout import TokenLayout

__all__ = [
    "Schedule",
    "BranchPolicy",
    "ModulationConfig",
    "BiasSpec",
    "schedule_weight",
    "build_bias",
    "modulate_logits",
    "is_active",
]


class Schedule(str, enum.Enum):
    """Frame-wise weighting of the modulation strength."""

    UNIFORM = "uniform"
    LINEAR = "linear"
    LOG = "log"


class BranchPolicy(str, enum.Enum):
    """Which classifier-free-guidance branch receives the modulation."""

    CONDITIONAL_ONLY = "conditional"
    BOTH_BRANCHES = "both"


@dataclass(frozen=True)
class ModulationConfig:
    """Complete knob set for the modulation mechanism.

    gamma:        bias strength; positive weakens the reference pathway,
                  negative strengthens it, 0 disables modulation.
    step_ratio:   fraction of initial denoising steps that are modulated
                  (strict gate, see :func:`is_active`).
    schedule:     frame-wise weight phi.
    branch_policy: apply to the conditional branch only (default) or to
                  both guidance branches.
    """

    gamma: float = 0.6
    step_ratio: float = 0.2
    schedule: Schedule = Schedule.UNIFORM
    branch_policy: BranchPolicy = BranchPolicy.CONDITIONAL_ONLY

    def __post_init__(self) -> None:
        if not 0.0 <= self.step_ratio <= 1.0:
            raise ValueError(f"step_ratio must lie in [0, 1], got {self.step_ratio}")
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        object.__setattr__(self, "branch_policy", BranchPolicy(self.branch_policy))


@dataclass(frozen=True)
class BiasSpec:
    """Compact form of the logit bias.

    ``per_query_scale[i]`` is added to logits ``L[i, j]`` for every key
    column ``j < key_prefix_len``; all other entries are untouched.
    Reference-frame query rows carry an exact 0 scale.
    """

    per_query_scale: np.ndarray
    key_prefix_len: int

    @property
    def token_count(self) -> int:
        return self.per_query_scale.shape[0]

    def is_zero(self) -> bool:
        return not np.any(self.per_query_scale)

    def dense(self) -> np.ndarray:
        """Materialize the full S x S additive bias (for oracles and tests)."""
        S = self.token_count
        out = np.zeros((S, S))
        out[:, : self.key_prefix_len] += self.per_query_scale[:, None]
        return out


def schedule_weight(kind: Schedule | str, f: int, frames: int) -> float:
    """Frame-wise modulation weight phi for query frame ``f`` of ``frames``.

    Uniform is 1 everywhere; Linear ramps 0 -> 1 across frames; Log rises
    quickly for early frames and saturates.  Linear and Log need at least
    two frames to be defined.
    """
    kind = Schedule(kind)
    if not 0 <= f < frames:
        raise IndexError(f"frame {f} out of range [0, {frames})")
    if kind is Schedule.UNIFORM:
        return 1.0
    if frames < 2:
        raise ValueError(f"{kind.value} schedule is undefined for a single-frame layout")
    if kind is Schedule.LINEAR:
        return f / (frames - 1)
    return math.log1p(f) / math.log(frames)


def build_bias(layout: TokenLayout, gamma: float, kind: Schedule | str = Schedule.UNIFORM) -> BiasSpec:
    """Bias spec for the given layout: -gamma * phi(frame) on non-reference queries."""
    kind = Schedule(kind)
    frame_of = layout.frame_index_map()
    phi = np.array([schedule_weight(kind, f, layout.frames) for f in range(layout.frames)])
    scale = -(gamma * phi[frame_of])
    scale[frame_of == 0] = 0.0
    return BiasSpec(per_query_scale=scale, key_prefix_len=layout.frame_size)


def modulate_logits(logits: np.ndarray, spec: BiasSpec) -> np.ndarray:
    """Apply ``spec`` to a materialized S x S logit matrix (or head stack).

    Accepts ``(S, S)`` or ``(heads, S, S)``.  Rows of reference-frame
    queries and columns outside the key prefix are returned unchanged.
    """
    S = spec.token_count
    if logits.shape[-2:] != (S, S):
        raise ValueError(f"logits shape {logits.shape} does not match bias for {S} tokens")
    out = logits.copy()
    out[..., :, : spec.key_prefix_len] += spec.per_query_scale[:, None]
    return out


def is_active(step: int, total_steps: int, step_ratio: float) -> bool:
    """Whether 1-based denoising step ``step`` of ``total_steps`` is modulated.

    The gate is strict: active iff step/total_steps < step_ratio, so e.g.
    step_ratio=0.2 with 40 steps modulates steps 1..7 and not step 8.
    """
    if not 1 <= step <= total_steps:
        raise IndexError(f"step {step} out of range [1, {total_steps}]")
    return step / total_steps < step_ratio
