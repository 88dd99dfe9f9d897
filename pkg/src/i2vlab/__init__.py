"""Desk-scale image-to-video diffusion lab.

A tiny trainable space-time transformer, a flow-matching sampler with
classifier-free guidance and reference-frame conditioning, an attention
logit modulation mechanism that steers how strongly generated frames
attend to the reference frame, and the measurement pipeline (frame-level
attention aggregation, JSD attention distance, motion/fidelity proxies,
gamma sweeps) that quantifies the effect.
"""

import os as _os

# Must happen before numpy initializes its BLAS thread pools.
_threads = _os.environ.get("I2VLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .analysis import (
    FrameAttentionMatrix,
    SweepResult,
    SweepRow,
    aggregate_frame_attention,
    attention_difference,
    average_captures,
    dynamic_degree_proxy,
    gamma_sweep,
    jsd,
    reference_attention_delta,
    reference_fidelity,
    t2v_i2v_distance,
    temporal_smoothness,
)
from .attention import (
    AttentionCapture,
    AttentionConfig,
    BenchReport,
    CaptureRecord,
    attend,
    benchmark_attend,
    capture_attention,
    compute_logits,
    frame_reduce,
    naive_attend,
    softmax_rows,
)
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config, resolved_json, save_config
from .data import (
    CLASS_MOVING,
    CLASS_NAMES,
    CLASS_STATIC,
    SpriteDataset,
    SpriteDatasetConfig,
    generate_sprite_video,
    make_dataset,
    reference_frame,
    toy_decode,
    toy_encode,
)
from .fileio import (
    load_latent,
    load_weights,
    read_pgm,
    save_latent,
    save_weights,
    write_csv,
    write_matrix_csv,
    write_pgm8,
    write_pgm16,
    write_sweep_csv,
    write_sweep_detail_csv,
)
from .layout import TokenLayout
from .model import (
    ToyDiT,
    ToyDiTConfig,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    evaluate_loss,
    train,
)
from .modulation import (
    BiasSpec,
    BranchPolicy,
    ModulationConfig,
    Schedule,
    build_bias,
    is_active,
    modulate_logits,
    schedule_weight,
)
from .rng import derive_seed_sequence, stream
from .sampler import (
    Condition,
    DivergenceError,
    SamplerConfig,
    StepRecord,
    cfg_combine,
    interpolate,
    replace_reference_latent,
    sample,
    scheduler_step,
    target_velocity,
)

__version__ = "0.1.0"
