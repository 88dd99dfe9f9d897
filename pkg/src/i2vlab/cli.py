"""Command-line harness: train / sample / sweep / bench.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure
(training or sampling divergence).  All outputs are deterministic given
config plus seed, except benchmark timings.
"""

from __future__ import annotations

import argparse
import os
import sys

from .analysis import attention_difference, average_captures, gamma_sweep
from .attention import AttentionCapture, benchmark_attend
from .config import ConfigError, ExperimentConfig, load_config, resolved_json
from .data import CLASS_NAMES, make_dataset, reference_frame, toy_decode
from .fileio import (
    load_weights,
    save_latent,
    save_weights,
    write_csv,
    write_matrix_csv,
    write_pgm8,
    write_pgm16,
    write_sweep_csv,
    write_sweep_detail_csv,
)
from .model import ToyDiT, TrainingDivergedError, train
from .modulation import ModulationConfig, Schedule, schedule_weight
from .sampler import Condition, DivergenceError, SamplerConfig, sample

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="i2vlab",
        description="Desk-scale image-to-video diffusion lab with reference-frame attention modulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the reference-conditioned model and its text-only twin")
    p_train.add_argument("config", help="experiment config file")
    p_train.add_argument("--out", default="runs/train", help="output directory (default: %(default)s)")

    p_sample = sub.add_parser("sample", help="generate one video from trained weights")
    p_sample.add_argument("weights", help="weight file from the train command")
    p_sample.add_argument("out", help="output directory")
    p_sample.add_argument("--config", default=None, help="experiment config file (defaults used when omitted)")
    p_sample.add_argument("--gamma", type=float, default=0.6, help="modulation strength (default: %(default)s)")
    p_sample.add_argument(
        "--lambda",
        dest="step_ratio",
        type=float,
        default=0.2,
        help="fraction of early steps with modulation active (default: %(default)s)",
    )
    p_sample.add_argument(
        "--schedule",
        choices=[s.value for s in Schedule],
        default=Schedule.UNIFORM.value,
        help="frame-wise weighting of the bias (default: %(default)s)",
    )
    p_sample.add_argument("--steps", type=int, default=40, help="sampling steps (default: %(default)s)")
    p_sample.add_argument("--guidance", type=float, default=3.5, help="guidance scale (default: %(default)s)")
    p_sample.add_argument("--seed", type=int, default=0, help="seed for noise and reference image (default: %(default)s)")
    p_sample.add_argument(
        "--replace-ref",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="write the clean reference latent over frame 0 each step (default: on)",
    )
    p_sample.add_argument(
        "--cond",
        choices=list(CLASS_NAMES),
        default="moving",
        help="class conditioning (default: %(default)s)",
    )
    p_sample.add_argument("--capture", action="store_true", help="also export averaged frame attention")

    p_sweep = sub.add_parser("sweep", help="metric table over a gamma grid")
    p_sweep.add_argument("config", help="experiment config file")
    p_sweep.add_argument("weights", help="weight file for the reference-conditioned model")
    p_sweep.add_argument("out", help="output CSV path; companion files go next to it")
    p_sweep.add_argument(
        "--gammas",
        default=None,
        help="comma-separated grid overriding the config (e.g. '-2,-1,0,0.6,1')",
    )

    p_bench = sub.add_parser("bench", help="time the unbiased vs fused-bias attention paths")
    p_bench.add_argument("--size", type=int, default=512, help="token count (default: %(default)s)")
    p_bench.add_argument("--heads", type=int, default=4, help="attention heads (default: %(default)s)")
    p_bench.add_argument("--iters", type=int, default=30, help="timed iterations (default: %(default)s)")
    return parser


def _load_experiment(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


def _load_model(weights_path: str, config: ExperimentConfig, with_reference: bool = True) -> ToyDiT:
    model = ToyDiT(config.model_config(with_reference=with_reference))
    try:
        model.params = load_weights(weights_path, model.params)
    except OSError as exc:
        raise ConfigError(f"cannot read weights {weights_path}: {exc}") from exc
    return model


def _gamma_tag(gamma: float) -> str:
    return f"{gamma:+g}".replace("+", "p").replace("-", "m").replace(".", "_")


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.resolved.json"), "w", encoding="utf-8") as fh:
        fh.write(resolved_json(config) + "\n")

    dataset = make_dataset(config.dataset)
    for tag, with_ref in (("i2v", True), ("t2v", False)):
        model = ToyDiT(config.model_config(with_reference=with_ref), seed=config.train.seed)
        result = train(model, dataset, config.train)
        save_weights(os.path.join(args.out, f"{tag}.weights"), model.params)
        write_csv(
            os.path.join(args.out, f"{tag}_loss.csv"),
            ["step", "loss"],
            ((i + 1, repr(float(v))) for i, v in enumerate(result.losses)),
        )
        print(
            f"{tag}: {config.train.steps} steps, "
            f"loss {result.losses[0]:.4f} -> {result.final_loss:.4f}, "
            f"{model.parameter_count()} parameters"
        )
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    mcfg = ModulationConfig(gamma=args.gamma, step_ratio=args.step_ratio, schedule=args.schedule)
    scfg = SamplerConfig(
        num_steps=args.steps,
        guidance_scale=args.guidance,
        seed=args.seed,
        replace_reference=args.replace_ref,
    )
    model = _load_model(args.weights, config)
    reference = reference_frame(args.seed, config.dataset)
    cond = Condition(CLASS_NAMES.index(args.cond))
    capture = AttentionCapture(layout=model.layout, mode="frame") if args.capture else None

    os.makedirs(args.out, exist_ok=True)
    step_log = []
    latent = sample(model, reference, cond, scfg, modulation=mcfg, capture=capture, step_log=step_log)

    save_latent(os.path.join(args.out, "latent.bin"), latent)
    video = toy_decode(latent)
    for f in range(video.shape[0]):
        write_pgm8(os.path.join(args.out, f"frame_{f:02d}.pgm"), video[f])
    write_csv(
        os.path.join(args.out, "steps.csv"),
        ["step", "t", "t_next", "active", "cond_biased", "uncond_biased"],
        (
            (r.step, repr(r.t), repr(r.t_next), int(r.modulation_active),
             int(r.conditional_biased), int(r.unconditional_biased))
            for r in step_log
        ),
    )
    if capture is not None:
        mean_attn = average_captures(capture)
        write_matrix_csv(os.path.join(args.out, "frame_attention.csv"), mean_attn.values)
        write_pgm16(os.path.join(args.out, "frame_attention.pgm"), mean_attn.values, lo=0.0, hi=1.0)

    phi = [schedule_weight(mcfg.schedule, f, model.layout.frames) for f in range(model.layout.frames)]
    active = [r.step for r in step_log if r.modulation_active]
    print(f"schedule={mcfg.schedule.value} phi=[{', '.join(repr(v) for v in phi)}]")
    if active:
        print(f"modulation active on steps {active[0]}..{active[-1]} of {args.steps}")
    else:
        print(f"modulation inactive on all {args.steps} steps")
    print(f"wrote latent + {video.shape[0]} frames to {args.out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = _load_model(args.weights, config)
    if args.gammas is not None:
        try:
            gammas = [float(p) for p in args.gammas.split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(f"--gammas: {exc}") from exc
        if not gammas:
            raise ConfigError("--gammas parsed to an empty list")
    else:
        gammas = list(config.sweep_gammas)

    result = gamma_sweep(
        model,
        config.sweep_seeds,
        gammas,
        config.sampler,
        modulation_template=config.modulation,
        dataset_config=config.dataset,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_sweep_csv(args.out, result)
    stem, _ = os.path.splitext(os.path.basename(args.out))
    write_sweep_detail_csv(os.path.join(out_dir, f"{stem}_detail.csv"), result)

    baseline = min(result.rows, key=lambda row: abs(row.gamma))
    for row in result.rows:
        tag = _gamma_tag(row.gamma)
        write_matrix_csv(os.path.join(out_dir, f"{stem}_attn_{tag}.csv"), row.frame_attention)
        write_pgm16(os.path.join(out_dir, f"{stem}_attn_{tag}.pgm"), row.frame_attention, lo=0.0, hi=1.0)
        diff = attention_difference(row.frame_attention, baseline.frame_attention)
        write_matrix_csv(os.path.join(out_dir, f"{stem}_diff_{tag}.csv"), diff)
        write_pgm16(os.path.join(out_dir, f"{stem}_diff_{tag}.pgm"), diff)
        print(
            f"gamma={row.gamma:+.2f} dd={row.dynamic_degree:.4f} "
            f"ref_mse={row.ref_fidelity:.2e} D={row.d_gamma:.4f}"
        )
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    report = benchmark_attend(size=args.size, heads=args.heads, iters=args.iters)
    print(report.summary())
    return 0


_COMMANDS = {"train": cmd_train, "sample": cmd_sample, "sweep": cmd_sweep, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, TrainingDivergedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
