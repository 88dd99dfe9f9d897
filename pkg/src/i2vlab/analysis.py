"""Measurement pipeline: frame-level attention aggregation, difference
maps, JSD attention distance, motion/fidelity proxies and the gamma-sweep
harness.

All aggregation functions are pure; the sweep is deterministic given its
seed list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import AttentionCapture, frame_reduce
from .data import SpriteDatasetConfig, reference_frame, toy_decode, CLASS_MOVING
from .layout import TokenLayout
from .modulation import ModulationConfig
from .sampler import Condition, SamplerConfig, sample

__all__ = [
    "FrameAttentionMatrix",
    "SweepRow",
    "SweepResult",
    "aggregate_frame_attention",
    "average_captures",
    "attention_difference",
    "reference_attention_delta",
    "jsd",
    "t2v_i2v_distance",
    "dynamic_degree_proxy",
    "temporal_smoothness",
    "reference_fidelity",
    "gamma_sweep",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class FrameAttentionMatrix:
    """F x F attention mass between frames; every row is a distribution
    over key frames.  Provenance counts how many steps/layers/heads were
    averaged into ``values``."""

    values: np.ndarray
    steps: int = 1
    layers: int = 1
    heads: int = 1

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"frame attention must be square, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def _frame_values(a) -> np.ndarray:
    if isinstance(a, FrameAttentionMatrix):
        return a.values
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"frame attention must be square, got {a.shape}")
    return a


def aggregate_frame_attention(weights: np.ndarray, layout: TokenLayout) -> FrameAttentionMatrix:
    """Reduce token attention ``(S, S)`` to frame attention ``(F, F)``.

    Entry (a, b) is the attention mass frame ``a`` sends to frame ``b``,
    averaged over frame ``a``'s query tokens; rows stay stochastic.
    """
    weights = np.asarray(weights, dtype=float)
    s = layout.token_count
    if weights.shape != (s, s):
        raise ValueError(f"weights shape {weights.shape}, expected {(s, s)}")
    row_sums = weights.sum(axis=-1)
    worst = float(np.max(np.abs(row_sums - 1.0)))
    if worst > 1e-4:
        raise ValueError(f"input is not row-stochastic (row sum off by {worst:.2e})")
    return FrameAttentionMatrix(values=frame_reduce(weights, layout.frames, layout.frame_size))


def average_captures(capture: AttentionCapture, step_fraction: float = 0.10) -> FrameAttentionMatrix:
    """Mean frame attention over the earliest ``step_fraction`` of steps,
    across every recorded layer and head.

    Step indices are 1-based as logged by the sampler; step ``s`` falls in
    the window when ``(s - 1) < step_fraction * total_steps``, so 10% of a
    40-step run keeps steps 1-4.
    """
    if not 0.0 < step_fraction <= 1.0:
        raise ValueError("step_fraction must be in (0, 1]")
    if len(capture.records) == 0:
        raise ValueError("capture holds no records")
    total = capture.total_steps
    if total is None:
        total = max(r.step for r in capture.records)
    cutoff = step_fraction * total

    selected = []
    for rec in capture.records:
        if rec.step - 1 >= cutoff:
            continue
        m = rec.matrix
        if capture.mode == "full":
            if capture.layout is None:
                raise ValueError("full-matrix capture needs a layout to aggregate")
            m = frame_reduce(m, capture.layout.frames, capture.layout.frame_size)
        selected.append((rec, m))
    if not selected:
        raise ValueError(f"no records within the first {step_fraction:.0%} of {total} steps")

    mean = np.mean([m for _, m in selected], axis=0)
    return FrameAttentionMatrix(
        values=mean,
        steps=len({rec.step for rec, _ in selected}),
        layers=len({rec.layer for rec, _ in selected}),
        heads=len({rec.head for rec, _ in selected}),
    )


def attention_difference(a_mod, a_base) -> np.ndarray:
    """Signed F x F difference map (modulated minus baseline)."""
    x = _frame_values(a_mod)
    y = _frame_values(a_base)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return x - y


def reference_attention_delta(a_mod, a_base) -> np.ndarray:
    """|change in reference-frame attention| per non-reference query frame.

    Entry ``a - 1`` is ``|A_mod[a, 0] - A_base[a, 0]|`` for a = 1..F-1.
    """
    x = _frame_values(a_mod)
    y = _frame_values(a_base)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return np.abs(x[1:, 0] - y[1:, 0])


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with natural log, bounded by ln 2.

    Inputs must be nonnegative and sum to 1 within 1e-4; they are
    renormalized exactly before the computation.  0 * log(0/x) counts as 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"need matching vectors, got {p.shape} and {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("probabilities must be nonnegative")
    for v in (p, q):
        if abs(v.sum() - 1.0) > 1e-4:
            raise ValueError(f"vector sums to {v.sum():.6f}, not 1")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def t2v_i2v_distance(a_i2v, a_t2v) -> float:
    """Mean JSD between corresponding non-reference rows of two frame
    attention matrices; the reference query row 0 is excluded."""
    x = _frame_values(a_i2v)
    y = _frame_values(a_t2v)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    f = x.shape[0]
    if f < 2:
        raise ValueError("need at least 2 frames")
    return float(np.mean([jsd(x[a], y[a]) for a in range(1, f)]))


def dynamic_degree_proxy(video: np.ndarray, value_range: float = 1.0) -> float:
    """Motion proxy in [0, 1]: mean absolute consecutive-frame pixel
    difference over the nominal pixel range, clipped at 1."""
    video = np.asarray(video, dtype=float)
    if video.ndim < 1 or video.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    if value_range <= 0:
        raise ValueError("value_range must be positive")
    raw = float(np.mean(np.abs(np.diff(video, axis=0)))) / value_range
    return min(raw, 1.0)


def temporal_smoothness(video: np.ndarray, value_range: float = 1.0) -> float:
    """Mean absolute second difference along time (lower is smoother)."""
    video = np.asarray(video, dtype=float)
    if video.ndim < 1 or video.shape[0] < 3:
        raise ValueError("need at least 3 frames")
    second = video[2:] - 2.0 * video[1:-1] + video[:-2]
    return float(np.mean(np.abs(second))) / value_range


def reference_fidelity(video: np.ndarray, ref: np.ndarray) -> float:
    """MSE between frame 0 of the video and the reference image."""
    video = np.asarray(video, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if video.shape[1:] != ref.shape:
        raise ValueError(f"frame shape {video.shape[1:]} does not match reference {ref.shape}")
    return float(np.mean((video[0] - ref) ** 2))


@dataclass(frozen=True)
class SweepRow:
    """Aggregated metrics for one gamma value.

    Scalars aggregate across seeds (median for the motion proxy so single
    outlier runs cannot flip trends; mean elsewhere); per-seed arrays are
    kept for paired significance-free comparisons.
    """

    gamma: float
    dynamic_degree: float
    ref_fidelity: float
    d_gamma: float
    reference_mass: np.ndarray
    smoothness: float
    frame_attention: np.ndarray
    seed_dynamic_degree: np.ndarray
    seed_ref_fidelity: np.ndarray
    seed_smoothness: np.ndarray


@dataclass(frozen=True)
class SweepResult:
    rows: list[SweepRow]
    seeds: tuple[int, ...]
    frames: int

    def gammas(self) -> list[float]:
        return [row.gamma for row in self.rows]


def gamma_sweep(
    model,
    seeds,
    gammas,
    sampler_config: SamplerConfig,
    modulation_template: ModulationConfig = ModulationConfig(),
    dataset_config: SpriteDatasetConfig | None = None,
    cond: Condition | None = None,
    reference_attention=None,
) -> SweepResult:
    """Sample every (gamma, seed) grid point and collect the metric table.

    Each seed fixes both the reference frame (a seeded sprite image) and
    the sampler noise, so rows are comparable pairwise across gamma.
    ``d_gamma`` measures each gamma's frame attention against
    ``reference_attention`` when given (e.g. a text-only twin run) and
    against the sweep's own gamma=0 run otherwise; a gamma=0 reference run
    is added internally if 0 is not in ``gammas``.
    """
    gammas = [float(g) for g in gammas]
    seeds = [int(s) for s in seeds]
    if not gammas or not seeds:
        raise ValueError("need at least one gamma and one seed")
    layout = model.layout
    if dataset_config is None:
        dataset_config = SpriteDatasetConfig(
            frames=layout.frames, height=layout.height, width=layout.width
        )
    if cond is None:
        cond = Condition(CLASS_MOVING)
    refs = {s: reference_frame(s, dataset_config) for s in seeds}

    run_gammas = list(gammas)
    if reference_attention is None and 0.0 not in run_gammas:
        run_gammas.append(0.0)

    frame_attn: dict[float, np.ndarray] = {}
    metrics: dict[float, dict[str, np.ndarray]] = {}
    for gamma in run_gammas:
        mcfg = replace(modulation_template, gamma=gamma)
        dd = np.empty(len(seeds))
        fid = np.empty(len(seeds))
        smooth = np.empty(len(seeds))
        mats = []
        for i, seed in enumerate(seeds):
            capture = AttentionCapture(layout=layout, mode="frame")
            scfg = replace(sampler_config, seed=seed)
            latent = sample(model, refs[seed], cond, scfg, modulation=mcfg, capture=capture)
            video = toy_decode(latent)
            dd[i] = dynamic_degree_proxy(video)
            fid[i] = reference_fidelity(video, refs[seed])
            smooth[i] = temporal_smoothness(video)
            mats.append(average_captures(capture).values)
        frame_attn[gamma] = np.mean(mats, axis=0)
        metrics[gamma] = {"dd": dd, "fid": fid, "smooth": smooth}

    base = (
        _frame_values(reference_attention)
        if reference_attention is not None
        else frame_attn[0.0]
    )
    rows = []
    for gamma in gammas:
        mat = frame_attn[gamma]
        rows.append(
            SweepRow(
                gamma=gamma,
                dynamic_degree=float(np.median(metrics[gamma]["dd"])),
                ref_fidelity=float(np.mean(metrics[gamma]["fid"])),
                d_gamma=t2v_i2v_distance(mat, base),
                reference_mass=mat[1:, 0].copy(),
                smoothness=float(np.median(metrics[gamma]["smooth"])),
                frame_attention=mat.copy(),
                seed_dynamic_degree=metrics[gamma]["dd"].copy(),
                seed_ref_fidelity=metrics[gamma]["fid"].copy(),
                seed_smoothness=metrics[gamma]["smooth"].copy(),
            )
        )
    return SweepResult(rows=rows, seeds=tuple(seeds), frames=layout.frames)
