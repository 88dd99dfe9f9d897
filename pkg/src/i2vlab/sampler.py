"""Flow-matching Euler sampler with classifier-free guidance.

The forward corruption is the straight path ``z_t = (1 - t) z0 + t eps``
with velocity target ``v = eps - z0``.  Sampling integrates the learned
velocity field backwards from t=1 with plain Euler steps on the grid
``t_i = 1 - i/N``, which is exact for any field that is constant along
the path (the straight-path optimum), so a perfectly fit model recovers
``z0`` regardless of step count.

Reference-frame attention modulation hooks in here: on step ``i`` the
logit bias is passed to the model only while ``i/N < step_ratio`` and,
under the default branch policy, only on the text-conditional branch of
the guidance pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import toy_encode
from .modulation import (
    BiasSpec,
    BranchPolicy,
    ModulationConfig,
    build_bias,
    is_active,
)
from .rng import stream

__all__ = [
    "Condition",
    "SamplerConfig",
    "StepRecord",
    "DivergenceError",
    "interpolate",
    "target_velocity",
    "cfg_combine",
    "scheduler_step",
    "replace_reference_latent",
    "sample",
]


@dataclass(frozen=True)
class Condition:
    """Class conditioning for the toy model; ``class_id=None`` is the null
    (unconditional) row used for guidance and condition dropout."""

    class_id: int | None

    @classmethod
    def null(cls) -> "Condition":
        return cls(class_id=None)

    @property
    def is_null(self) -> bool:
        return self.class_id is None


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 40
    guidance_scale: float = 3.5
    seed: int = 0
    replace_reference: bool = True

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        if self.guidance_scale < 1.0:
            raise ValueError("guidance_scale must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    """One line of the per-step audit log emitted by :func:`sample`."""

    step: int
    t: float
    t_next: float
    modulation_active: bool
    conditional_biased: bool
    unconditional_biased: bool


class DivergenceError(RuntimeError):
    """Raised when the running latent stops being finite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite latent at sampling step {step}")
        self.step = step


def interpolate(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Straight-path corruption ``(1 - t) z0 + t eps``."""
    z0 = np.asarray(z0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch {z0.shape} vs {eps.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return (1.0 - t) * z0 + t * eps


def target_velocity(z0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Regression target of the straight path, constant in t."""
    z0 = np.asarray(z0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch {z0.shape} vs {eps.shape}")
    return eps - z0


def cfg_combine(v_uncond: np.ndarray, v_cond: np.ndarray, guidance_scale: float) -> np.ndarray:
    """Classifier-free guidance: ``v_u + w (v_c - v_u)``."""
    if guidance_scale < 1.0:
        raise ValueError("guidance_scale must be >= 1")
    return v_uncond + guidance_scale * (v_cond - v_uncond)


def scheduler_step(z: np.ndarray, v: np.ndarray, t: float, t_next: float) -> np.ndarray:
    """Euler update ``z + (t_next - t) v`` (t decreases, so this subtracts)."""
    if t_next > t:
        raise ValueError(f"t must decrease during sampling, got {t} -> {t_next}")
    return z + (t_next - t) * v


def replace_reference_latent(z: np.ndarray, ref_latent: np.ndarray) -> np.ndarray:
    """Overwrite frame 0 of ``z`` with the clean reference latent."""
    z = np.asarray(z, dtype=float)
    ref_latent = np.asarray(ref_latent, dtype=float)
    if ref_latent.shape != z.shape[1:]:
        raise ValueError(
            f"reference latent shape {ref_latent.shape} does not match frame shape {z.shape[1:]}"
        )
    out = z.copy()
    out[0] = ref_latent
    return out


def sample(
    model,
    reference: np.ndarray | None,
    cond: Condition,
    sampler_config: SamplerConfig,
    modulation: ModulationConfig | None = None,
    capture=None,
    step_log: list[StepRecord] | None = None,
) -> np.ndarray:
    """Generate one latent video ``(F, H, W, C)``.

    ``reference`` is a pixel-space ``(H, W, C)`` frame; it is encoded with
    the fixed codec, concatenated into the model input each step and, when
    ``sampler_config.replace_reference`` is set, written back over frame 0
    after every Euler update so the reference stays clean.

    ``capture``, when provided, receives post-softmax attention from the
    conditional branch only.  A zero-strength or never-active modulation
    config takes the exact unbiased code path: the step loop then matches
    ``modulation=None`` bit for bit.
    """
    layout = model.layout
    needs_ref = getattr(model, "uses_reference", reference is not None)
    if needs_ref and reference is None:
        raise ValueError("model expects a reference frame but none was given")

    ref_latent = None
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        expected = (layout.height, layout.width, reference.shape[-1])
        if reference.shape != expected:
            raise ValueError(f"reference shape {reference.shape}, expected {expected}")
        ref_latent = toy_encode(reference)

    n = sampler_config.num_steps
    spec: BiasSpec | None = None
    if modulation is not None and modulation.gamma != 0.0:
        spec = build_bias(layout, modulation.gamma, modulation.schedule)
    bias_both = (
        modulation is not None and modulation.branch_policy is BranchPolicy.BOTH_BRANCHES
    )

    rng = stream(sampler_config.seed, "sample", "init")
    z = rng.standard_normal((layout.frames, layout.height, layout.width, model.out_channels))
    if ref_latent is not None and sampler_config.replace_reference:
        z = replace_reference_latent(z, ref_latent)

    if capture is not None:
        capture.total_steps = n

    for i in range(1, n + 1):
        t = 1.0 - (i - 1) / n
        t_next = 1.0 - i / n
        active = spec is not None and is_active(i, n, modulation.step_ratio)
        bias_c = spec if active else None
        bias_u = spec if (active and bias_both) else None

        v_u = model.forward(z, t, Condition.null(), ref_latent, bias=bias_u)
        v_c = model.forward(
            z, t, cond, ref_latent, bias=bias_c, capture=capture, step=i
        )
        v = cfg_combine(v_u, v_c, sampler_config.guidance_scale)
        z = scheduler_step(z, v, t, t_next)
        if ref_latent is not None and sampler_config.replace_reference:
            z = replace_reference_latent(z, ref_latent)
        if not np.isfinite(z).all():
            raise DivergenceError(i)
        if step_log is not None:
            step_log.append(
                StepRecord(
                    step=i,
                    t=t,
                    t_next=t_next,
                    modulation_active=active,
                    conditional_biased=bias_c is not None,
                    unconditional_biased=bias_u is not None,
                )
            )
    return z
