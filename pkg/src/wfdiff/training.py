"""Co-training loop, optimizer, learning-rate schedule and checkpointing.

The total objective is the unit-weighted sum of the task loss over every
clip frame and the denoising loss over the clip's anchor windows; gradients
from both flow into the shared encoder. Everything consumed by training is
drawn from explicit generators so runs are bit-reproducible and resumable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .diffusion import DiffusionSchedule, ddpm_loss_given, make_schedule
from .encoder import TemporalState
from .heads import task_loss
from .model import ModelDims, TrainConfig, WorkflowModel, build_model, subseed
from .workflow import (
    encode_phases,
    encode_remaining,
    presence_labels,
    remaining_time_labels,
)

CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class CheckpointError(RuntimeError):
    """Raised on checkpoint version mismatch, corruption, or config conflicts."""


@dataclass
class LabeledVideo:
    """Observations plus every label view a training/eval pass needs."""

    video_id: str
    obs: torch.Tensor  # (T, obs_dim) float64
    window_src: torch.Tensor  # (T, C) signal-encoded labels in [-1, 1]
    longtail: bool
    target_norm: torch.Tensor | None = None  # (T, C) remaining/h in [0, 1]
    presence: torch.Tensor | None = None  # (T, C) long
    remaining_min: np.ndarray | None = None  # (T, C) minutes
    phase_ids: torch.Tensor | None = None  # (T,) long

    @property
    def num_frames(self) -> int:
        return int(self.obs.shape[0])


def anticipation_channels(dataset: Dataset, cfg: TrainConfig) -> list[tuple[str, int]]:
    if cfg.anticipation_targets == "tools":
        return [("tool", j) for j in range(len(dataset.tool_names))]
    return [("phase", p) for p in range(len(dataset.phase_names))]


def model_dims(dataset: Dataset, cfg: TrainConfig) -> ModelDims:
    if cfg.task == "anticipation":
        channels = len(anticipation_channels(dataset, cfg))
    else:
        channels = len(dataset.phase_names)
    return ModelDims(obs_dim=dataset.observation_dim, channels=channels)


def prepare_videos(dataset: Dataset, cfg: TrainConfig, split: str) -> list[LabeledVideo]:
    """Derive per-video label tensors for one split, in manifest order."""
    out: list[LabeledVideo] = []
    for vid in dataset.split(split):
        record = dataset.videos[vid]
        timeline = record.timeline
        obs = torch.from_numpy(np.ascontiguousarray(record.observations, dtype=np.float64))
        longtail = dataset.manifest.longtail[vid]
        if cfg.task == "anticipation":
            remaining = np.stack(
                [
                    remaining_time_labels(timeline, target, cfg.horizon, cfg.minutes_per_frame)
                    for target in anticipation_channels(dataset, cfg)
                ],
                axis=1,
            )
            presence = np.stack(
                [presence_labels(remaining[:, c], cfg.horizon) for c in range(remaining.shape[1])],
                axis=1,
            )
            out.append(
                LabeledVideo(
                    video_id=vid,
                    obs=obs,
                    window_src=torch.from_numpy(encode_remaining(remaining, cfg.horizon)),
                    longtail=longtail,
                    target_norm=torch.from_numpy(remaining / cfg.horizon),
                    presence=torch.from_numpy(presence),
                    remaining_min=remaining,
                )
            )
        else:
            phase_ids = torch.from_numpy(timeline.phase_of.copy())
            encoded = encode_phases(timeline.phase_of, timeline.num_phases)
            out.append(
                LabeledVideo(
                    video_id=vid,
                    obs=obs,
                    window_src=torch.from_numpy(encoded),
                    longtail=longtail,
                    phase_ids=phase_ids,
                )
            )
    return out


def window_batch(window_src: torch.Tensor, anchors: torch.Tensor, lam: int) -> torch.Tensor:
    """Stack lam-frame history windows for a batch of anchor frames.

    Indices before frame 0 repeat frame 0. Returns (batch, channels, lam).
    """
    offsets = torch.arange(-lam + 1, 1)
    idx = torch.clamp(anchors[:, None] + offsets[None, :], min=0)
    return window_src[idx].permute(0, 2, 1)


class DecoupledAdamW(torch.optim.Optimizer):
    """Adam moments with multiplicative weight decay decoupled from the
    learning rate: the decay shrinks parameters by (1 - wd) every step the
    parameter receives a gradient, even at lr = 0."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(p.grad, alpha=1.0 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1.0 - beta2)
                if group["weight_decay"]:
                    p.mul_(1.0 - group["weight_decay"])
                bias1 = 1.0 - beta1 ** state["step"]
                bias2 = 1.0 - beta2 ** state["step"]
                denom = (v / bias2).sqrt_().add_(group["eps"])
                p.addcdiv_(m, denom, value=-group["lr"] / bias1)
        return loss


def lr_schedule(step: int, total_steps: int, peak_lr: float, warmup_frac: float) -> float:
    """Linear ramp to the peak over the warmup span, then cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return 0.0
    warmup = int(round(warmup_frac * total_steps))
    if warmup > 0 and step <= warmup:
        return peak_lr * step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_step(
    model: WorkflowModel,
    video: LabeledVideo,
    start: int,
    length: int,
    optimizer: torch.optim.Optimizer,
    sched: DiffusionSchedule,
    cfg: TrainConfig,
    diff_gen: torch.Generator,
    state: TemporalState | None = None,
) -> tuple[dict[str, float], TemporalState]:
    """One optimizer update on a single-video clip; returns the loss breakdown.

    A non-finite total aborts before backward, leaving parameters untouched.
    """
    end = min(start + length, video.num_frames)
    obs_clip = video.obs[start:end]
    features, end_state = model.encoder.encode_clip(obs_clip, state)

    zero = torch.zeros((), dtype=torch.float64)
    loss_task = zero
    if cfg.with_task:
        outputs = model.head(features)
        if cfg.task == "anticipation":
            labels = (video.target_norm[start:end], video.presence[start:end])
        else:
            labels = video.phase_ids[start:end]
        loss_task = task_loss(outputs, labels, model.head.cfg)

    loss_ddpm = zero
    if cfg.with_ddpm:
        anchors = torch.arange(start, end, cfg.anchor_stride)
        windows = window_batch(video.window_src, anchors, cfg.lam)
        cond = features[anchors - start]
        k = torch.randint(1, sched.num_steps + 1, (windows.shape[0],), generator=diff_gen)
        eps = torch.randn(windows.shape, dtype=windows.dtype, generator=diff_gen)
        loss_ddpm = ddpm_loss_given(model.denoiser, windows, cond, k, eps, sched)

    total = cfg.task_weight * loss_task + cfg.ddpm_weight * loss_ddpm
    if not torch.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss at clip [{start}, {end}) of {video.video_id}: "
            f"task={float(loss_task)}, ddpm={float(loss_ddpm)}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    breakdown = {
        "task": float(loss_task.detach()),
        "ddpm": float(loss_ddpm.detach()),
        "total": float(total.detach()),
    }
    return breakdown, end_state.detached()


def _clip_plan_recognition(videos: list[LabeledVideo], cfg: TrainConfig) -> int:
    return sum(math.ceil(v.num_frames / cfg.clip_len) for v in videos)


def _default_epoch_eval(model: WorkflowModel, dataset: Dataset, split: str, cfg: TrainConfig) -> dict:
    """Task-branch metrics on a held-out split, logged once per epoch."""
    from .evaluation import predict_split  # deferred: evaluation imports this module
    from .metrics import anticipation_metrics, recognition_metrics

    videos = prepare_videos(dataset, cfg, split)
    preds = predict_split(model, videos, cfg, branch="task")
    if cfg.task == "anticipation":
        p = np.concatenate([preds[v.video_id] for v in videos])
        y = np.concatenate([v.remaining_min for v in videos])
        ev = anticipation_metrics(p, y, cfg.horizon)
        return {k: (None if math.isnan(v) else v) for k, v in ev.means.items()}
    ev = recognition_metrics(
        [preds[v.video_id] for v in videos],
        [v.phase_ids.numpy() for v in videos],
        num_phases=len(dataset.phase_names),
    )
    return ev.to_dict()


def total_training_steps(videos: list[LabeledVideo], cfg: TrainConfig) -> int:
    if cfg.task == "anticipation":
        return cfg.epochs * len(videos)
    return cfg.epochs * _clip_plan_recognition(videos, cfg)


@dataclass
class FitResult:
    checkpoint_path: Path
    log_path: Path
    model: WorkflowModel
    history: list[dict] = field(default_factory=list)


def fit(
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir: Path,
    resume_from: Path | None = None,
    stop_after_epochs: int | None = None,
    eval_split: str | None = None,
    eval_fn=None,
    checkpoint_name: str = "checkpoint.pt",
) -> FitResult:
    """Train per the task protocol; bit-deterministic under a fixed seed.

    Anticipation draws one random clip from one random video per iteration;
    recognition walks each video in sequential non-overlapping clips with the
    temporal state threaded across clips when ``cfg.carry_state`` is set.
    With ``eval_split`` set, task-branch metrics on that split are appended to
    the log once per epoch. ``stop_after_epochs`` ends the run early
    (checkpoint included) so it can be resumed later with ``resume_from``.
    """
    videos = prepare_videos(dataset, cfg, "train")
    if not videos:
        raise ValueError("training split is empty")
    if cfg.num_threads:
        torch.set_num_threads(cfg.num_threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dims = model_dims(dataset, cfg)
    sched = make_schedule(cfg.schedule, cfg.diffusion_steps)

    if resume_from is not None:
        model, optimizer, loaded_cfg, extras = load_checkpoint(resume_from)
        if loaded_cfg != cfg:
            raise CheckpointError("resume config does not match the checkpoint's config")
        data_gen = torch.Generator()
        data_gen.set_state(extras["rng"]["data"])
        diff_gen = torch.Generator()
        diff_gen.set_state(extras["rng"]["diffusion"])
        torch.set_rng_state(extras["rng"]["torch"])
        start_epoch = extras["progress"]["epoch"]
        global_step = extras["progress"]["global_step"]
    else:
        model = build_model(cfg, dims)
        optimizer = DecoupledAdamW(
            model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
        )
        data_gen = torch.Generator()
        data_gen.manual_seed(subseed(cfg.seed, "data"))
        diff_gen = torch.Generator()
        diff_gen.manual_seed(subseed(cfg.seed, "diffusion"))
        start_epoch = 0
        global_step = 0

    total_steps = total_training_steps(videos, cfg)
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / checkpoint_name
    history: list[dict] = []
    mode = "a" if resume_from is not None else "w"

    def run_step(fh, video, start, length, state=None):
        nonlocal global_step
        lr = lr_schedule(global_step, total_steps, cfg.learning_rate, cfg.warmup_frac)
        for group in optimizer.param_groups:
            group["lr"] = lr
        breakdown, end_state = train_step(
            model, video, start, length, optimizer, sched, cfg, diff_gen, state
        )
        record = {
            "kind": "step",
            "step": global_step,
            "loss_task": breakdown["task"],
            "loss_ddpm": breakdown["ddpm"],
            "loss_total": breakdown["total"],
            "lr": lr,
        }
        fh.write(json.dumps(record) + "\n")
        history.append(record)
        global_step += 1
        return end_state

    epochs_this_run = 0
    with open(log_path, mode) as fh:
        for epoch in range(start_epoch, cfg.epochs):
            if cfg.task == "anticipation":
                for _ in range(len(videos)):
                    vi = int(torch.randint(len(videos), (1,), generator=data_gen))
                    video = videos[vi]
                    max_start = max(0, video.num_frames - cfg.clip_len)
                    start = int(torch.randint(max_start + 1, (1,), generator=data_gen))
                    run_step(fh, video, start, cfg.clip_len)
            else:
                order = torch.randperm(len(videos), generator=data_gen).tolist()
                for vi in order:
                    video = videos[vi]
                    state = None
                    for start in range(0, video.num_frames, cfg.clip_len):
                        end_state = run_step(fh, video, start, cfg.clip_len, state)
                        state = end_state if cfg.carry_state else None
            if eval_split is not None:
                if eval_fn is not None:
                    metrics = eval_fn(model, dataset, eval_split)
                else:
                    metrics = _default_epoch_eval(model, dataset, eval_split, cfg)
                record = {"kind": "epoch", "epoch": epoch, "metrics": metrics}
                fh.write(json.dumps(record) + "\n")
                history.append(record)
            epochs_this_run += 1
            save_checkpoint(
                ckpt_path, model, optimizer, cfg,
                progress={"epoch": epoch + 1, "global_step": global_step},
                rng={"data": data_gen.get_state(), "diffusion": diff_gen.get_state(),
                     "torch": torch.get_rng_state()},
            )
            if stop_after_epochs is not None and epochs_this_run >= stop_after_epochs:
                break
        if cfg.epochs == 0 or (start_epoch == cfg.epochs):
            save_checkpoint(
                ckpt_path, model, optimizer, cfg,
                progress={"epoch": start_epoch, "global_step": global_step},
                rng={"data": data_gen.get_state(), "diffusion": diff_gen.get_state(),
                     "torch": torch.get_rng_state()},
            )
    return FitResult(checkpoint_path=ckpt_path, log_path=log_path, model=model, history=history)


def save_checkpoint(
    path: Path,
    model: WorkflowModel,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    progress: dict,
    rng: dict,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "dims": {"obs_dim": model.dims.obs_dim, "channels": model.dims.channels},
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "progress": dict(progress),
        "rng": dict(rng),
    }
    torch.save(payload, path)


def load_checkpoint(path: Path):
    """Restore (model, optimizer, config, extras) bit-exactly from disk."""
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {payload['format_version']} != {CHECKPOINT_VERSION}"
        )
    try:
        cfg = TrainConfig.from_dict(payload["config"])
        dims = ModelDims(**payload["dims"])
        model = build_model(cfg, dims)
        model.load_state_dict(payload["model"], strict=True)
        optimizer = DecoupledAdamW(
            model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
        )
        optimizer.load_state_dict(payload["optimizer"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: checkpoint inconsistent with its config: {exc}") from exc
    extras = {"progress": payload["progress"], "rng": payload["rng"]}
    return model, optimizer, cfg, extras


def checkpoint_digest(path: Path) -> str:
    """Canonical digest of a checkpoint's content (parameters, moments, rng,
    config), independent of file-container byte layout."""
    payload = torch.load(path, weights_only=True)
    hasher = hashlib.sha256()
    hasher.update(json.dumps(payload["config"], sort_keys=True).encode())
    hasher.update(json.dumps(payload["dims"], sort_keys=True).encode())
    hasher.update(json.dumps(payload["progress"], sort_keys=True).encode())

    def _update(prefix: str, value):
        if isinstance(value, torch.Tensor):
            t = value.detach().contiguous()
            hasher.update(f"{prefix}|{t.dtype}|{tuple(t.shape)}".encode())
            hasher.update(t.numpy().tobytes())
        elif isinstance(value, dict):
            for key in sorted(value, key=str):
                _update(f"{prefix}/{key}", value[key])
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                _update(f"{prefix}[{i}]", item)
        else:
            hasher.update(f"{prefix}={value!r}".encode())

    _update("model", payload["model"])
    _update("optimizer", payload["optimizer"])
    _update("rng", payload["rng"])
    return hasher.hexdigest()
