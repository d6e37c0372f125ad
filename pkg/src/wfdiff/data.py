"""Dataset layout, emission and ingestion.

On disk a dataset is::

    <root>/meta.txt              key=value sidecar (phase/tool vocabulary, dims)
    <root>/manifest.json         splits, per-video variant membership, seeds
    <root>/videos/<id>.csv       timeline: frame,phase_id,tool_0,...,tool_{M-1}
    <root>/videos/<id>_obs.npy   observations, shape (num_frames, observation_dim)

Timelines are at 1 frame/sec with booleans written as 0/1.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synth import ProcedureGrammar, render_video, sample_procedure_with_variant, video_seed
from .workflow import WorkflowTimeline


class DataFormatError(ValueError):
    """Raised when dataset files violate the declared layout or invariants."""


_SPLIT_NAMES = {2: ("train", "test"), 3: ("train", "val", "test")}


@dataclass(frozen=True)
class DatasetManifest:
    splits: dict[str, list[str]]
    variant_of: dict[str, int]
    longtail: dict[str, bool]
    seeds: dict[str, int]
    grammar_hash: str
    dataset_seed: int

    def to_dict(self) -> dict:
        return {
            "splits": self.splits,
            "variant_of": self.variant_of,
            "longtail": self.longtail,
            "seeds": self.seeds,
            "grammar_hash": self.grammar_hash,
            "dataset_seed": self.dataset_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            splits={k: list(v) for k, v in data["splits"].items()},
            variant_of={k: int(v) for k, v in data["variant_of"].items()},
            longtail={k: bool(v) for k, v in data["longtail"].items()},
            seeds={k: int(v) for k, v in data["seeds"].items()},
            grammar_hash=data["grammar_hash"],
            dataset_seed=int(data["dataset_seed"]),
        )

    def video_ids(self) -> list[str]:
        out: list[str] = []
        for split in self.splits.values():
            out.extend(split)
        return out

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def write_timeline_csv(timeline: WorkflowTimeline, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame", "phase_id"] + [f"tool_{j}" for j in range(timeline.num_tools)]
        )
        for t in range(timeline.num_frames):
            writer.writerow(
                [t, int(timeline.phase_of[t])]
                + [int(timeline.tool_active[t, j]) for j in range(timeline.num_tools)]
            )


def read_timeline_csv(
    path: Path, video_id: str, phase_names: tuple[str, ...], tool_names: tuple[str, ...]
) -> WorkflowTimeline:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty timeline file") from None
        expected = ["frame", "phase_id"] + [f"tool_{j}" for j in range(len(tool_names))]
        if header != expected:
            raise DataFormatError(f"{path}: header {header} != {expected}")
        phases: list[int] = []
        tools: list[list[bool]] = []
        for row in reader:
            if len(row) != len(expected):
                raise DataFormatError(f"{path}: row {len(phases)} has {len(row)} fields")
            if int(row[0]) != len(phases):
                raise DataFormatError(f"{path}: frame indices not contiguous at row {len(phases)}")
            phases.append(int(row[1]))
            tools.append([bool(int(v)) for v in row[2:]])
    if not phases:
        raise DataFormatError(f"{path}: no frames")
    if max(phases) >= len(phase_names) or min(phases) < 0:
        raise DataFormatError(f"{path}: phase id outside the declared vocabulary")
    return WorkflowTimeline(
        video_id=video_id,
        phase_of=np.array(phases, dtype=np.int64),
        tool_active=np.array(tools, dtype=bool),
        phase_names=phase_names,
        tool_names=tool_names,
    )


def write_meta(grammar: ProcedureGrammar, path: Path) -> None:
    lines = [f"num_phases={len(grammar.phase_names)}", f"num_tools={len(grammar.tool_names)}"]
    lines += [f"phase_{i}={name}" for i, name in enumerate(grammar.phase_names)]
    lines += [f"tool_{i}={name}" for i, name in enumerate(grammar.tool_names)]
    lines += [f"observation_dim={grammar.observation_dim}", f"sigma_obs={grammar.sigma_obs}"]
    path.write_text("\n".join(lines) + "\n")


def read_meta(path: Path) -> dict[str, str]:
    meta: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    for required in ("num_phases", "num_tools", "observation_dim"):
        if required not in meta:
            raise DataFormatError(f"{path}: missing key {required!r}")
    return meta


def _split_counts(n: int, ratios: tuple[float, ...]) -> list[int]:
    # largest-remainder apportionment so counts always sum to n
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    remainder = n - sum(counts)
    order = np.argsort([c - x for c, x in zip(counts, raw)])
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def _stratified_split(
    groups: list[list[str]], ratios: tuple[float, ...], split_names: tuple[str, ...], rng
) -> dict[str, list[str]]:
    """Per-group apportionment that still hits the exact global split counts.

    Each group (variant stratum) contributes its floor share to every split;
    the leftover videos fill whichever splits still have a deficit, largest
    fractional share first, so small strata land in every split when they can.
    """
    n = sum(len(g) for g in groups)
    global_counts = dict(zip(split_names, _split_counts(n, ratios)))
    splits: dict[str, list[str]] = {name: [] for name in split_names}
    leftovers: list[tuple[list[float], str]] = []
    for group in groups:
        group = list(group)
        rng.shuffle(group)
        floors = [int(np.floor(len(group) * r)) for r in ratios]
        at = 0
        for name, count in zip(split_names, floors):
            splits[name].extend(group[at : at + count])
            at += count
        remainders = [len(group) * r - f for r, f in zip(ratios, floors)]
        for vid in group[at:]:
            leftovers.append((remainders, vid))
    for remainders, vid in leftovers:
        for j in np.argsort([-r for r in remainders], kind="stable"):
            name = split_names[j]
            if len(splits[name]) < global_counts[name]:
                splits[name].append(vid)
                break
    return splits


def emit_dataset(
    grammar: ProcedureGrammar,
    n_videos: int,
    split_ratios: tuple[float, ...],
    seed: int,
    out_dir: Path,
    stratify: bool = True,
) -> DatasetManifest:
    """Generate, render and write a dataset; returns (and writes) its manifest.

    Splits are stratified by variant by default so the long-tail stratum is
    represented in every split whenever it has enough videos.
    """
    if abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    if len(split_ratios) not in _SPLIT_NAMES:
        raise ValueError("2 (train/test) or 3 (train/val/test) split ratios are supported")
    out_dir = Path(out_dir)
    videos_dir = out_dir / "videos"
    videos_dir.mkdir(parents=True, exist_ok=True)

    ids: list[str] = []
    variant_of: dict[str, int] = {}
    longtail: dict[str, bool] = {}
    seeds: dict[str, int] = {}
    dominant = grammar.dominant_variant
    for i in range(n_videos):
        vseed = video_seed(seed, i)
        timeline, variant = sample_procedure_with_variant(grammar, vseed)
        vid = f"v{i:04d}"
        timeline = WorkflowTimeline(
            video_id=vid,
            phase_of=timeline.phase_of,
            tool_active=timeline.tool_active,
            phase_names=timeline.phase_names,
            tool_names=timeline.tool_names,
        )
        obs = render_video(timeline, grammar, vseed)
        write_timeline_csv(timeline, videos_dir / f"{vid}.csv")
        np.save(videos_dir / f"{vid}_obs.npy", obs)
        ids.append(vid)
        variant_of[vid] = variant
        longtail[vid] = variant != dominant
        seeds[vid] = vseed

    split_names = _SPLIT_NAMES[len(split_ratios)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x53504C54]))
    groups = (
        [[v for v in ids if variant_of[v] == k] for k in range(len(grammar.variants))]
        if stratify
        else [list(ids)]
    )
    splits = _stratified_split(groups, split_ratios, split_names, rng)
    for name in split_names:
        splits[name].sort()

    manifest = DatasetManifest(
        splits=splits,
        variant_of=variant_of,
        longtail=longtail,
        seeds=seeds,
        grammar_hash=grammar.hash(),
        dataset_seed=seed,
    )
    write_meta(grammar, out_dir / "meta.txt")
    (out_dir / "grammar.json").write_text(json.dumps(grammar.to_dict(), indent=2, sort_keys=True))
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


@dataclass(frozen=True)
class VideoRecord:
    timeline: WorkflowTimeline
    observations: np.ndarray


@dataclass(frozen=True)
class Dataset:
    root: Path
    manifest: DatasetManifest
    phase_names: tuple[str, ...]
    tool_names: tuple[str, ...]
    observation_dim: int
    videos: dict[str, VideoRecord]

    def split(self, name: str) -> list[str]:
        if name not in self.manifest.splits:
            raise KeyError(f"split {name!r} not in manifest (has {sorted(self.manifest.splits)})")
        return list(self.manifest.splits[name])

    def longtail_ids(self, split: str) -> list[str]:
        return [v for v in self.split(split) if self.manifest.longtail[v]]


def ingest_dataset(root: Path) -> Dataset:
    """Load and validate a dataset directory, collecting per-file diagnostics."""
    root = Path(root)
    if not root.is_dir():
        raise DataFormatError(f"{root}: not a directory")
    meta_path = root / "meta.txt"
    manifest_path = root / "manifest.json"
    if not meta_path.exists() or not manifest_path.exists():
        raise DataFormatError(f"{root}: missing meta.txt or manifest.json")
    meta = read_meta(meta_path)
    n_phases = int(meta["num_phases"])
    n_tools = int(meta["num_tools"])
    obs_dim = int(meta["observation_dim"])
    phase_names = tuple(meta.get(f"phase_{i}", f"phase_{i}") for i in range(n_phases))
    tool_names = tuple(meta.get(f"tool_{i}", f"tool_{i}") for i in range(n_tools))
    try:
        manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataFormatError(f"{manifest_path}: {exc}") from exc

    videos: dict[str, VideoRecord] = {}
    problems: list[str] = []
    for vid in manifest.video_ids():
        csv_path = root / "videos" / f"{vid}.csv"
        obs_path = root / "videos" / f"{vid}_obs.npy"
        try:
            if not csv_path.exists():
                raise DataFormatError(f"{csv_path}: missing timeline")
            if not obs_path.exists():
                raise DataFormatError(f"{obs_path}: missing observations")
            timeline = read_timeline_csv(csv_path, vid, phase_names, tool_names)
            obs = np.load(obs_path)
            if obs.ndim != 2 or obs.shape[1] != obs_dim:
                raise DataFormatError(f"{obs_path}: shape {obs.shape}, expected (*, {obs_dim})")
            if obs.shape[0] != timeline.num_frames:
                raise DataFormatError(
                    f"{vid}: {obs.shape[0]} observation rows vs {timeline.num_frames} label rows"
                )
            videos[vid] = VideoRecord(timeline=timeline, observations=obs)
        except (DataFormatError, ValueError) as exc:
            problems.append(f"{vid}: {exc}")
    if problems:
        raise DataFormatError("dataset validation failed:\n" + "\n".join(problems))
    if not videos:
        raise DataFormatError(f"{root}: dataset contains no videos")
    return Dataset(
        root=root,
        manifest=manifest,
        phase_names=phase_names,
        tool_names=tool_names,
        observation_dim=obs_dim,
        videos=videos,
    )
