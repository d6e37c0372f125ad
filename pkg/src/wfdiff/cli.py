"""Command-line surface.

Subcommands: gen-synth, train, eval, sample, diagnose, plot. Every run
resolves its configuration (file keys overridden by flags), writes the
resolved config and a manifest with the config hash and seed into the output
directory, and maps failures to distinct exit codes: 2 usage, 3 data errors,
4 numeric failures.

The environment variable WFDIFF_OUT_ROOT, when set, anchors relative output
directories.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataFormatError, emit_dataset, ingest_dataset
from .diagnostics import branch_agreement, feature_dispersion, grad_decomposition, pearson_correlation
from .diffusion import make_schedule
from .evaluation import (
    ddim_sample_windows,
    denoiser_invocations,
    predict_split,
    stream_features,
)
from .experiment import desk_grammar
from .heads import NonFiniteValueError
from .metrics import (
    anticipation_metrics,
    read_predictions_csv,
    recognition_metrics,
    smooth_metric,
    write_predictions_csv,
    write_report,
    write_report_csv,
)
from .model import TrainConfig
from .plots import plot_anticipation, plot_dispersion_bars, plot_envelope, plot_phase_bars
from .synth import ProcedureGrammar
from .training import (
    CheckpointError,
    NonFiniteLossError,
    checkpoint_digest,
    fit,
    load_checkpoint,
    prepare_videos,
)
from .workflow import decode_remaining

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get("WFDIFF_OUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, command: str, config_hash: str, seed: int, inputs: dict) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "inputs": inputs,
        "version": __version__,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_train_config(args) -> TrainConfig:
    values: dict = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(EXIT_USAGE)
        key, raw = item.split("=", 1)
        values[key] = json.loads(raw) if raw and raw[0] in "[{-0123456789tfn\"" else raw
    if args.seed is not None:
        values["seed"] = args.seed
    if args.epochs is not None:
        values["epochs"] = args.epochs
    if args.no_ddpm:
        values["with_ddpm"] = False
    if args.no_task:
        values["with_task"] = False
    return TrainConfig.from_dict(values)


def cmd_gen_synth(args) -> int:
    out = _out_dir(args.out)
    if args.grammar == "default":
        grammar = desk_grammar(sigma_obs=args.sigma_obs)
    else:
        grammar = ProcedureGrammar.from_dict(json.loads(Path(args.grammar).read_text()))
    ratios = tuple(float(x) for x in args.ratios.split(","))
    manifest = emit_dataset(grammar, args.n_videos, ratios, args.seed, out)
    _write_manifest(out, "gen-synth", grammar.hash(), args.seed, {"grammar": args.grammar})
    print(f"wrote {args.n_videos} videos to {out} (manifest hash {manifest.hash()})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args.out)
    dataset = ingest_dataset(Path(args.data))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "train", cfg.hash(), cfg.seed, {"data": str(args.data)})
    result = fit(
        dataset,
        cfg,
        out,
        resume_from=Path(args.resume) if args.resume else None,
        eval_split="val" if "val" in dataset.manifest.splits else None,
        checkpoint_name=f"checkpoint-{cfg.hash()[:8]}.pt",
    )
    digest = checkpoint_digest(result.checkpoint_path)
    print(f"checkpoint {result.checkpoint_path} digest {digest}")
    return EXIT_OK


def _per_horizon_report(preds, videos, horizon_trained, horizons):
    report = {}
    for h in horizons:
        if h > horizon_trained + 1e-12:
            raise DataFormatError(
                f"evaluation horizon {h} exceeds the trained horizon {horizon_trained}"
            )
        all_p, all_y, smooth_vals = [], [], []
        for video in videos:
            p = np.minimum(preds[video.video_id], h)
            y = np.minimum(video.remaining_min, h)
            all_p.append(p)
            all_y.append(y)
            smooth_vals.append(smooth_metric(p, y, h))
        ev = anticipation_metrics(np.concatenate(all_p), np.concatenate(all_y), h)
        report[f"h={h:g}"] = {
            "anticipation": ev.to_dict(),
            "smooth_mean": float(np.nanmean(np.concatenate(smooth_vals))),
            "smooth_segment_aware": False,
        }
    return report


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    if args.from_csv:
        preds, labels = read_predictions_csv(Path(args.from_csv))
        horizon = float(args.horizons.split(",")[0]) if args.horizons else float(labels.max())
        ev = anticipation_metrics(preds, labels, horizon)
        report = {"h=%g" % horizon: {"anticipation": ev.to_dict()}}
        tag = hashlib.sha256(str(args.from_csv).encode()).hexdigest()[:8]
        write_report(out / f"report-{tag}.json", report)
        write_report_csv(out / f"report-{tag}.csv", report)
        _write_manifest(out, "eval", tag, 0, {"from_csv": args.from_csv})
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK

    model, _, cfg, _ = load_checkpoint(Path(args.checkpoint))
    dataset = ingest_dataset(Path(args.data))
    videos = prepare_videos(dataset, cfg, args.split)
    sched = make_schedule(cfg.schedule, cfg.diffusion_steps)
    calls_before = denoiser_invocations(model)
    t0 = time.perf_counter()
    preds = predict_split(
        model, videos, cfg, branch=args.branch, sched=sched, steps=args.steps, seed=args.sample_seed
    )
    elapsed = time.perf_counter() - t0
    calls_after = denoiser_invocations(model)

    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    report: dict = {
        "split": args.split,
        "branch": args.branch,
        "denoiser_invocations": calls_after - calls_before,
    }
    if args.timing:
        frames = sum(v.num_frames for v in videos)
        report["frames_per_second"] = frames / elapsed if elapsed > 0 else None
    if cfg.task == "anticipation":
        horizons = (
            [float(x) for x in args.horizons.split(",")] if args.horizons else [cfg.horizon]
        )
        report.update(_per_horizon_report(preds, videos, cfg.horizon, horizons))
        for video in videos:
            write_predictions_csv(
                pred_dir / f"{video.video_id}.csv", preds[video.video_id], video.remaining_min
            )
    else:
        ev = recognition_metrics(
            [preds[v.video_id] for v in videos],
            [v.phase_ids.numpy() for v in videos],
            num_phases=len(dataset.phase_names),
        )
        report["recognition"] = ev.to_dict()
        for video in videos:
            write_predictions_csv(
                pred_dir / f"{video.video_id}.csv",
                preds[video.video_id].astype(float),
                video.phase_ids.numpy().astype(float),
            )
    h8 = cfg.hash()[:8]
    write_report(out / f"report-{h8}.json", report)
    write_report_csv(out / f"report-{h8}.csv", report)
    _write_manifest(out, "eval", cfg.hash(), cfg.seed, {"checkpoint": args.checkpoint})
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sample(args) -> int:
    out = _out_dir(args.out)
    model, _, cfg, _ = load_checkpoint(Path(args.checkpoint))
    dataset = ingest_dataset(Path(args.data))
    videos = {v.video_id: v for v in prepare_videos(dataset, cfg, args.split)}
    if args.video not in videos:
        raise DataFormatError(f"video {args.video!r} not in split {args.split!r}")
    video = videos[args.video]
    sched = make_schedule(cfg.schedule, cfg.diffusion_steps)

    samples = []
    for s in range(args.seeds):
        windows = ddim_sample_windows(model, video, sched, steps=args.steps, seed=s)
        samples.append(windows.numpy())
    stacked = np.stack(samples)  # (seeds, T, C, lam)
    np.save(out / f"{args.video}_windows.npy", stacked)
    anchors = np.clip(stacked[:, :, :, -1], -1.0, 1.0)
    if cfg.task == "anticipation":
        decoded = decode_remaining(anchors, cfg.horizon)
        write_predictions_csv(
            out / f"{args.video}_mean.csv", decoded.mean(axis=0), video.remaining_min
        )
    _write_manifest(out, "sample", cfg.hash(), cfg.seed, {"video": args.video})
    print(f"wrote {args.seeds} sampled window sets for {args.video} to {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out = _out_dir(args.out)
    model, _, cfg, _ = load_checkpoint(Path(args.checkpoint))
    dataset = ingest_dataset(Path(args.data))
    videos = prepare_videos(dataset, cfg, args.split)
    sched = make_schedule(cfg.schedule, cfg.diffusion_steps)

    features = np.concatenate([stream_features(model, v.obs).numpy() for v in videos])
    phase_ids = np.concatenate(
        [dataset.videos[v.video_id].timeline.phase_of for v in videos]
    )
    stats = feature_dispersion(features, class_ids=phase_ids)
    report: dict = {"dispersion": stats.to_dict()}

    report["grad_decomposition"] = grad_decomposition(model, videos[0], cfg, sched)

    if cfg.task == "anticipation":
        video = videos[0]
        agreement = branch_agreement(model, video, cfg, sched, n_seeds=args.seeds, steps=args.steps)
        corr = pearson_correlation(agreement["task"], agreement["ddim_mean"])
        report["branch_agreement"] = {"video": video.video_id, "pearson": corr}
        plot_envelope(
            out / f"{video.video_id}_envelope-{cfg.hash()[:8]}.svg",
            agreement,
            video.remaining_min,
            cfg.horizon,
            channel_names=list(dataset.tool_names),
            title=video.video_id,
        )

    if args.baseline:
        base_model, _, base_cfg, _ = load_checkpoint(Path(args.baseline))
        base_videos = prepare_videos(dataset, base_cfg, args.split)
        base_features = np.concatenate(
            [stream_features(base_model, v.obs).numpy() for v in base_videos]
        )
        base_stats = feature_dispersion(base_features)
        report["baseline_dispersion"] = base_stats.to_dict()
        plot_dispersion_bars(
            out / f"dispersion-{cfg.hash()[:8]}.svg",
            {
                "checkpoint": stats.mean_pairwise_distance,
                "baseline": base_stats.mean_pairwise_distance,
            },
        )

    write_report(out / f"diagnostics-{cfg.hash()[:8]}.json", report)
    _write_manifest(out, "diagnose", cfg.hash(), cfg.seed, {"checkpoint": args.checkpoint})
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_plot(args) -> int:
    out = _out_dir(args.out)
    preds, labels = read_predictions_csv(Path(args.pred_csv))
    stem = Path(args.pred_csv).stem
    tag = hashlib.sha256(str(args.pred_csv).encode()).hexdigest()[:8]
    svg_path = out / f"{stem}-{tag}.svg"
    if args.kind == "anticipation":
        horizon = args.horizon if args.horizon else float(labels.max())
        plot_anticipation(svg_path, preds, labels, horizon, title=stem)
    else:
        plot_phase_bars(svg_path, preds[:, 0].astype(int), labels[:, 0].astype(int), title=stem)
    _write_manifest(out, "plot", tag, 0, {"pred_csv": args.pred_csv})
    print(f"wrote {svg_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--grammar", default="default", help="grammar JSON path, or 'default'")
    p.add_argument("--out", required=True)
    p.add_argument("--n-videos", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.667,0.333")
    p.add_argument("--sigma-obs", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-ddpm", action="store_true")
    p.add_argument("--no-task", action="store_true")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or prediction CSVs)")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--branch", choices=("task", "ddim"), default="task")
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--horizons", help="comma-separated horizons in minutes")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--from-csv", help="score a prediction CSV instead of a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="inspect stochastic-branch outputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="feature and gradient diagnostics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", help="second checkpoint to compare dispersion against")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--steps", type=int, default=16)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plot", help="SVG plots from prediction CSVs")
    p.add_argument("--pred-csv", required=True)
    p.add_argument("--kind", choices=("anticipation", "recognition"), default="anticipation")
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not args.from_csv and not (args.checkpoint and args.data):
        parser.error("eval needs --checkpoint and --data (or --from-csv)")
    try:
        return args.func(args)
    except (DataFormatError, CheckpointError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, NonFiniteValueError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
