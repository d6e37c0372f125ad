"""Anticipation and recognition metrics.

Anticipation metrics are frame-based MAEs over label regions: outMAE on
frames whose label sits at the horizon, inMAE strictly inside (0, h), eMAE
on labels within (0, 0.1h], and wMAE as the unweighted mean of inMAE and
outMAE. Each is computed per channel first, then averaged over the channels
where the region is populated; an empty region yields NaN ("absent").

The steadiness metric is the mean absolute first difference of one video's
prediction sequence restricted to out-of-horizon frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ANTICIPATION_METRIC_NAMES = ("wMAE", "inMAE", "outMAE", "eMAE", "MAE")


@dataclass(frozen=True)
class AnticipationEval:
    horizon: float
    per_channel: dict[str, np.ndarray]  # metric -> (channels,) with NaN for absent
    means: dict[str, float]  # metric -> channel average (NaN if all absent)
    region_counts: dict[str, np.ndarray]  # region -> frames per channel

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "per_channel": {k: [_none_if_nan(x) for x in v] for k, v in self.per_channel.items()},
            "means": {k: _none_if_nan(v) for k, v in self.means.items()},
            "region_counts": {k: [int(x) for x in v] for k, v in self.region_counts.items()},
        }


@dataclass(frozen=True)
class RecognitionEval:
    accuracy_mean: float
    accuracy_std: float
    precision: float
    recall: float
    jaccard: float

    def to_dict(self) -> dict:
        return {
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "precision": self.precision,
            "recall": self.recall,
            "jaccard": self.jaccard,
        }


def _none_if_nan(x: float):
    x = float(x)
    return None if np.isnan(x) else x


def _as_2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _region_mean(err: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(err[mask])) if mask.any() else float("nan")


def anticipation_metrics(preds: np.ndarray, labels: np.ndarray, horizon: float) -> AnticipationEval:
    """MAE variants over (frames, channels) arrays of minutes."""
    preds = _as_2d(preds)
    labels = _as_2d(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > horizon):
        raise ValueError(f"labels outside [0, {horizon}]")
    channels = labels.shape[1]
    err = np.abs(preds - labels)
    per_channel = {name: np.empty(channels) for name in ANTICIPATION_METRIC_NAMES}
    counts = {region: np.zeros(channels, dtype=np.int64) for region in ("present", "in", "out", "early")}
    for c in range(channels):
        y = labels[:, c]
        e = err[:, c]
        out_mask = y == horizon
        in_mask = (y > 0) & (y < horizon)
        early_mask = (y > 0) & (y <= 0.1 * horizon)
        counts["present"][c] = int(np.sum(y == 0))
        counts["in"][c] = int(in_mask.sum())
        counts["out"][c] = int(out_mask.sum())
        counts["early"][c] = int(early_mask.sum())
        in_mae = _region_mean(e, in_mask)
        out_mae = _region_mean(e, out_mask)
        per_channel["inMAE"][c] = in_mae
        per_channel["outMAE"][c] = out_mae
        per_channel["wMAE"][c] = (in_mae + out_mae) / 2.0
        per_channel["eMAE"][c] = _region_mean(e, early_mask)
        per_channel["MAE"][c] = float(np.mean(e)) if e.size else float("nan")
    means = {
        name: float(np.nanmean(values)) if not np.isnan(values).all() else float("nan")
        for name, values in per_channel.items()
    }
    return AnticipationEval(
        horizon=horizon, per_channel=per_channel, means=means, region_counts=counts
    )


def smooth_metric(
    preds: np.ndarray,
    labels: np.ndarray,
    horizon: float,
    segment_aware: bool = False,
) -> np.ndarray:
    """Per-channel steadiness of one video's out-of-horizon predictions.

    NaN where fewer than two out-of-horizon frames exist. With
    ``segment_aware`` set, differences are taken only inside contiguous
    out-of-horizon segments instead of across gaps.
    """
    preds = _as_2d(preds)
    labels = _as_2d(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    channels = labels.shape[1]
    out = np.empty(channels)
    for c in range(channels):
        mask = labels[:, c] == horizon
        series = preds[mask, c]
        if series.shape[0] < 2:
            out[c] = float("nan")
            continue
        if segment_aware:
            idx = np.flatnonzero(mask)
            same_segment = np.diff(idx) == 1
            diffs = np.abs(np.diff(series))[same_segment]
            out[c] = float(np.mean(diffs)) if diffs.size else float("nan")
        else:
            out[c] = float(np.mean(np.abs(np.diff(series))))
    return out


def recognition_metrics(
    preds: list[np.ndarray], labels: list[np.ndarray], num_phases: int
) -> RecognitionEval:
    """Accuracy mean +- std over videos; macro precision/recall/Jaccard
    averaged over ground-truth-present phases per video, then videos (%)."""
    if len(preds) != len(labels) or not preds:
        raise ValueError("need the same non-zero number of pred and label videos")
    accuracies = []
    precisions = []
    recalls = []
    jaccards = []
    for p, y in zip(preds, labels):
        p = np.asarray(p, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if p.shape != y.shape:
            raise ValueError("pred/label length mismatch within a video")
        for arr, name in ((p, "prediction"), (y, "label")):
            if arr.size and (arr.min() < 0 or arr.max() >= num_phases):
                raise ValueError(f"unknown phase id in {name}s")
        accuracies.append(float(np.mean(p == y)) * 100.0)
        video_p, video_r, video_j = [], [], []
        for phase in range(num_phases):
            tp = int(np.sum((p == phase) & (y == phase)))
            fp = int(np.sum((p == phase) & (y != phase)))
            fn = int(np.sum((p != phase) & (y == phase)))
            if tp + fn == 0:  # phase absent from this video's ground truth
                continue
            video_p.append(tp / (tp + fp) if tp + fp else 0.0)
            video_r.append(tp / (tp + fn))
            video_j.append(tp / (tp + fp + fn))
        precisions.append(float(np.mean(video_p)) * 100.0)
        recalls.append(float(np.mean(video_r)) * 100.0)
        jaccards.append(float(np.mean(video_j)) * 100.0)
    return RecognitionEval(
        accuracy_mean=float(np.mean(accuracies)),
        accuracy_std=float(np.std(accuracies)),
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        jaccard=float(np.mean(jaccards)),
    )


def write_predictions_csv(path: Path, preds: np.ndarray, labels: np.ndarray) -> None:
    """One row per (frame, channel): frame,channel,pred,label."""
    preds = _as_2d(preds)
    labels = _as_2d(labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "channel", "pred", "label"])
        for t in range(preds.shape[0]):
            for c in range(preds.shape[1]):
                writer.writerow([t, c, repr(float(preds[t, c])), repr(float(labels[t, c]))])


def read_predictions_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    frames: dict[tuple[int, int], tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "channel", "pred", "label"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            frames[(int(row[0]), int(row[1]))] = (float(row[2]), float(row[3]))
    if not frames:
        raise ValueError(f"{path}: no prediction rows")
    n_t = max(t for t, _ in frames) + 1
    n_c = max(c for _, c in frames) + 1
    preds = np.zeros((n_t, n_c))
    labels = np.zeros((n_t, n_c))
    for (t, c), (p, y) in frames.items():
        preds[t, c] = p
        labels[t, c] = y
    return preds, labels


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_report_csv(path: Path, report: dict) -> None:
    """Flatten a (possibly nested) report dict into key,value rows."""

    def _flatten(prefix: str, value, rows: list[tuple[str, str]]):
        if isinstance(value, dict):
            for key in sorted(value, key=str):
                _flatten(f"{prefix}.{key}" if prefix else str(key), value[key], rows)
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                _flatten(f"{prefix}[{i}]", item, rows)
        else:
            rows.append((prefix, "" if value is None else repr(value)))

    rows: list[tuple[str, str]] = []
    _flatten("", report, rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerows(rows)
