"""Command-line entry point.

Subcommands: gen, segment, train, eval, ablate, sweep, infer, attn.
Every run derives all randomness from --seed, writes its artifacts under
--out-dir, and drops a resolved_config.json beside them. Domain errors
exit with code 1 and a single `ErrorClass: message` line; usage errors
exit with code 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    DirectionLabel,
    Split,
    read_manifest,
    read_stream_jsonl,
    write_manifest,
    write_stream_jsonl,
)
from .errors import KickpredError
from .evaluation import (
    DEFAULT_SWEEP_THRESHOLDS,
    AblationReport,
    SweepReport,
    confusion_matrix,
    export_attention_maps,
    predict_label_indices,
    run_ablation,
    threshold_sweep,
)
from .model import ModelConfig, ModelVariant, count_parameters, load_checkpoint, restore_model, save_checkpoint
from .pipeline import KickPipeline, detection_provider
from .segmentation import ThresholdConfig, build_sample, plan_sample, read_sample_dir, write_sample_dir
from .synthgen import ParamsDistribution, generate_dataset, generate_scenario, render_scenario_frames
from .training import ManifestBundle, TrainConfig, evaluate_arrays, train, write_history_csv

PROFILES = {
    "toy": {"frame_size": 64, "n_default": 120},
    "full": {"frame_size": 224, "n_default": 755},
}


def model_config_for_profile(profile: str, variant: ModelVariant, seed: int) -> ModelConfig:
    if profile == "toy":
        return ModelConfig.toy(variant=variant, seed=seed)
    return ModelConfig(variant=variant, seed=seed)


def render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


def _write_resolved_config(args: argparse.Namespace, out_dir: Path) -> None:
    doc = {k: v for k, v in vars(args).items() if k != "func"}
    doc["version"] = __version__
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _dist_from_args(args) -> ParamsDistribution:
    base = ParamsDistribution.strong_cue() if args.strong_cue else ParamsDistribution()
    return replace(
        base,
        cue_strength=args.cue_strength if args.cue_strength is not None else base.cue_strength,
        cue_onset=args.cue_onset if args.cue_onset is not None else base.cue_onset,
        keypoint_noise_sigma=args.noise if args.noise is not None else base.keypoint_noise_sigma,
        dropout_prob=args.dropout if args.dropout is not None else base.dropout_prob,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    profile = PROFILES[args.profile]
    n = args.n if args.n is not None else profile["n_default"]
    dist = _dist_from_args(args)
    bundle = generate_dataset(
        n, args.seed, dist, threshold=args.threshold, frame_size=profile["frame_size"]
    )
    _write_resolved_config(args, out)
    for ref in bundle.manifest.samples:
        sample = bundle.samples[ref.sample_id]
        plan = bundle.plans[ref.sample_id]
        write_sample_dir(sample, plan, out / ref.path)
    write_manifest(bundle.manifest, out / "manifest.json")
    if args.streams:
        for ref in bundle.manifest.samples:
            params = bundle.scenario_params[ref.sample_id]
            scenario = generate_scenario(params, profile["frame_size"])
            render_scenario_frames(scenario)
            sdir = out / "streams" / ref.sample_id
            (sdir / "frames").mkdir(parents=True, exist_ok=True)
            import cv2

            for record in scenario.records:
                rel = f"frames/{record.frame_index:06d}.png"
                cv2.imwrite(
                    str(sdir / rel), cv2.cvtColor(record.image, cv2.COLOR_RGB2BGR)
                )
                record.image_ref = rel
            write_stream_jsonl(scenario.records, sdir / "stream.jsonl")
    print(f"wrote {n} samples under {out} (manifest.json, samples/)")
    return 0


def cmd_segment(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    stream = read_stream_jsonl(args.stream)
    base = Path(args.stream).parent
    for record in stream:
        if record.image_ref is not None and not Path(record.image_ref).is_absolute():
            record.image_ref = str(base / record.image_ref)
    cfg = ThresholdConfig(ratio=args.threshold)
    label = DirectionLabel.from_string(args.label)
    plan = plan_sample(stream, cfg)
    sample, _ = build_sample(stream, cfg, label, sample_id=Path(args.stream).parent.name)
    write_sample_dir(sample, plan, out / "sample")
    print(f"endpoint frame {plan.endpoint_frame}, indices {plan.chosen_indices}, "
          f"repairs {plan.repairs}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    manifest = read_manifest(args.data)
    bundle = ManifestBundle(manifest, Path(args.data).parent)
    variant = ModelVariant(args.variant)
    model_cfg = model_config_for_profile(args.profile, variant, args.seed)
    train_cfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )
    ckpt = train(bundle, model_cfg, train_cfg)
    save_checkpoint(ckpt, out / "checkpoint.pt")
    write_history_csv(ckpt.history, out / "history.csv")
    best = ckpt.history[ckpt.best_epoch - 1]
    print(
        f"trained {variant.value} for {len(ckpt.history)} epochs; "
        f"best epoch {ckpt.best_epoch} (val_loss {best['val_loss']:.4f}, "
        f"val_acc {100 * best['val_acc']:.2f}%)"
    )
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    ckpt = load_checkpoint(args.ckpt)
    manifest = read_manifest(args.data)
    bundle = ManifestBundle(manifest, Path(args.data).parent)
    split = Split(args.split)
    model = restore_model(ckpt)
    frames, kps, labels = bundle.arrays_for_split(split)
    loss, acc = evaluate_arrays(model, frames, kps, labels)
    preds = predict_label_indices(model, frames, kps)
    cm = confusion_matrix(labels, preds)
    cm.to_csv(out / f"confusion_{split.value}.csv")
    print(f"{split.value}: loss {loss:.4f}, accuracy {100 * acc:.2f}% "
          f"({cm.n_correct}/{cm.total})")
    return 0


def _write_ablation_csv(report: AblationReport, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_configuration", "test_accuracy_percent", "n_parameters",
                    "epochs_trained", "wall_clock_s", "error"])
        for r in report.rows:
            w.writerow([
                r.variant.value,
                "" if r.test_accuracy is None else repr(r.test_accuracy),
                r.n_parameters,
                r.epochs_trained,
                repr(r.wall_clock_s),
                r.error or "",
            ])


def cmd_ablate(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    manifest = read_manifest(args.data)
    bundle = ManifestBundle(manifest, Path(args.data).parent)
    base_cfg = model_config_for_profile(args.profile, ModelVariant.FULL, args.seed)
    train_cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, max_epochs=args.epochs,
        patience=args.patience, seed=args.seed,
    )
    report = run_ablation(bundle, base_cfg, train_cfg)
    _write_ablation_csv(report, out / "ablation.csv")
    rows = [
        [
            r.variant.value,
            "failed" if r.test_accuracy is None else f"{r.test_accuracy:.2f}",
        ]
        for r in report.rows
    ]
    print(render_table(["Model configuration", "Test accuracy (%)"], rows))
    return 0


def _write_sweep_csv(report: SweepReport, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance_threshold", "training_iterations", "testing_accuracy_percent", "error"])
        for r in report.rows:
            w.writerow([
                repr(r.threshold),
                r.epochs_trained,
                "" if r.test_accuracy is None else repr(r.test_accuracy),
                r.error or "",
            ])


def cmd_sweep(args) -> int:
    out = Path(args.out_dir)
    profile = PROFILES[args.profile]
    _write_resolved_config(args, out)
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    n = args.n if args.n is not None else profile["n_default"]
    dist = _dist_from_args(args)
    model_cfg = model_config_for_profile(args.profile, ModelVariant.FULL, args.seed)
    train_cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, max_epochs=args.epochs,
        patience=args.patience, seed=args.seed,
    )
    report = threshold_sweep(
        thresholds, n, args.seed, dist, model_cfg, train_cfg, profile["frame_size"]
    )
    _write_sweep_csv(report, out / "sweep.csv")
    rows = [
        [
            f"{r.threshold:.2f}",
            str(r.epochs_trained),
            "failed" if r.test_accuracy is None else f"{r.test_accuracy:.2f}",
        ]
        for r in report.rows
    ]
    print(render_table(
        ["Distance threshold (Normalised ratio)", "Training iterations", "Testing accuracy (%)"],
        rows,
    ))
    return 0


def cmd_infer(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    ckpt = load_checkpoint(args.ckpt)
    pipeline = KickPipeline(ckpt, ThresholdConfig(ratio=args.threshold))
    provider = detection_provider(args.stream)
    result = pipeline.run(provider)
    if result is None:
        print("stream ended without reaching the threshold; no prediction", file=sys.stderr)
        return 1
    (out / "prediction.json").write_text(result.to_json() + "\n")
    print(result.to_json())
    return 0


def cmd_attn(args) -> int:
    out = Path(args.out_dir)
    _write_resolved_config(args, out)
    ckpt = load_checkpoint(args.ckpt)
    sample = read_sample_dir(args.sample)
    maps, _ = export_attention_maps(ckpt, sample, out_dir=out / "attention")
    print(f"wrote 8 attention maps to {out / 'attention'} "
          f"(range {maps.min():.3f}..{maps.max():.3f})")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    p.add_argument("--out-dir", default="out", help="directory for artifacts")
    p.add_argument("--profile", choices=("toy", "full"), default="toy",
                   help="toy: 64px frames / 3-stage backbone; full: 224px / 5 stages")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=None, help="corpus size (default: per profile)")
    p.add_argument("--cue-strength", type=float, default=None)
    p.add_argument("--cue-onset", type=float, default=None)
    p.add_argument("--noise", type=float, default=None, help="keypoint noise sigma (224-px pixels)")
    p.add_argument("--dropout", type=float, default=None, help="pose-dropout probability")
    p.add_argument("--strong-cue", action="store_true", help="high-signal generator preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kickpred",
                                     description="Penalty-kick direction prediction toolkit")
    parser.add_argument("--version", action="version", version=f"kickpred {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p); _add_gen_flags(p)
    p.add_argument("--threshold", type=float, default=0.15)
    p.add_argument("--streams", action="store_true",
                   help="also write full per-scenario stream JSONL + frame rasters")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("segment", help="cut one stream file into a sample")
    _add_common(p)
    p.add_argument("--stream", required=True)
    p.add_argument("--threshold", type=float, default=0.15)
    p.add_argument("--label", required=True, choices=("left", "middle", "right"))
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train one variant on a manifest")
    _add_common(p); _add_train_flags(p)
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--variant", default="full",
                   choices=[v.value for v in ModelVariant])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all four variants")
    _add_common(p); _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="threshold sweep over regenerated datasets")
    _add_common(p); _add_train_flags(p); _add_gen_flags(p)
    p.add_argument("--thresholds", default=",".join(str(t) for t in DEFAULT_SWEEP_THRESHOLDS))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("infer", help="stream a file through the live pipeline")
    _add_common(p)
    p.add_argument("--stream", required=True, help="stream JSONL file or per-frame JSON dir")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--threshold", type=float, default=0.15)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("attn", help="export pose-guided attention maps for a sample")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True, help="sample directory")
    p.set_defaults(func=cmd_attn)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KickpredError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
