"""End-to-end episode execution and dataset generation.

Simulates sampled episodes, renders labeled dash-cam frames from the
properly-driving agent, and writes a byte-deterministic dataset tree:
``frames.csv`` + ``episodes.csv`` manifests, one PGM per frame, and a
``_SUCCESS`` sentinel written last (its absence marks corrupt output).
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Outcome, OutcomeKind, classify_outcome, clearance_lower_bound, min_clearance
from .render import CameraModel, Image, RenderProfile, render_frame
from .rng import derive_stream
from .sampling import ParameterSample, SamplingConfig, sample_parameters
from .scenarios import EpisodeSetup, ScenarioTemplate, default_templates, instantiate

FRAMES_HEADER = ["episode_id", "frame_index", "t_s", "image_path", "steering_deg", "speed_mps", "contact"]
EPISODES_HEADER = [
    "episode_id", "scenario_id", "episode_index", "outcome", "min_clearance_m",
    "mass_kg", "speed_mps", "fog_density", "brake_decel", "lane_change_m", "vertical_offset_m",
]
SUCCESS_SENTINEL = "_SUCCESS"
DT_S = 0.02
STEPS_PER_EPISODE = 500  # 10 s at 50 Hz physics


class ManifestError(Exception):
    pass


class EmptyManifestError(ManifestError):
    pass


class ParseError(ManifestError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class InsufficientEpisodesError(ManifestError):
    pass


class IoError(Exception):
    def __init__(self, path, cause):
        super().__init__(f"write failed for {path}: {cause}")
        self.path = path


def fmt(value: float) -> str:
    """Decimal formatting used in all manifests: 6 significant digits."""
    return f"{value:.6g}"


@dataclass(frozen=True)
class RunConfig:
    frame_rate_hz: int = 5
    near_miss_threshold_m: float = 1.0
    exclude_post_contact: bool = True
    scenario_weights: dict[str, int] | None = None
    include_rear_end: bool = False
    workers: int = 1
    render_profile: str = "default"
    dt_s: float = field(default=DT_S, init=False)

    def __post_init__(self):
        if not (1 <= self.frame_rate_hz <= 50 and 50 % self.frame_rate_hz == 0):
            raise ValueError("frame_rate_hz must be in 1..50 and divide 50")
        if self.near_miss_threshold_m <= 0:
            raise ValueError("near_miss_threshold_m must be positive")


@dataclass
class Frame:
    t: float
    image_path: str
    steering_label_deg: float
    speed_mps: float
    contact_flag: bool
    image: Image | None = None  # populated in memory, dropped after writing


@dataclass
class EpisodeRecord:
    episode_id: int
    scenario_id: str
    master_seed: int
    episode_index: int
    params: ParameterSample
    outcome: Outcome
    frames: list[Frame]


def run_episode(
    setup: EpisodeSetup,
    params: ParameterSample,
    config: RunConfig,
    rng,
    episode_id: int = 0,
    camera: CameraModel | None = None,
    profile: RenderProfile | None = None,
    render: bool = True,
) -> EpisodeRecord:
    """Simulate one 10 s episode at 50 Hz and record frames at the configured rate."""
    camera = camera or CameraModel()
    profile = profile or RenderProfile.default()
    ego, adversary = setup.make_agents(params.mass_kg)
    steps_per_frame = int(round(1.0 / (config.frame_rate_hz * config.dt_s)))

    clearance_trace: list[float] = []
    frames: list[Frame] = []
    contact_seen = False
    lowest = math.inf
    for step in range(STEPS_PER_EPISODE):
        ego_fp = ego.state.footprint()
        adv_fp = adversary.state.footprint()
        bound = clearance_lower_bound(ego_fp, adv_fp)
        if bound >= lowest and bound > config.near_miss_threshold_m:
            clearance = bound
        else:
            clearance = min_clearance(ego_fp, adv_fp)
        lowest = min(lowest, clearance)
        clearance_trace.append(clearance)
        if clearance == 0.0:
            contact_seen = True

        if step % steps_per_frame == 0:
            t = step * config.dt_s
            frame_index = len(frames)
            image = None
            if render:
                image = render_frame(
                    ego.state, adv_fp, setup.road_geometry, camera, profile,
                    params.fog_density_per_m, rng,
                )
            frames.append(
                Frame(
                    t=t,
                    image_path=f"images/ep{episode_id:06d}/f{frame_index:03d}.pgm",
                    steering_label_deg=math.degrees(ego.state.steer),
                    speed_mps=ego.state.speed,
                    contact_flag=contact_seen,
                    image=image,
                )
            )

        ego.step(config.dt_s)
        adversary.step(config.dt_s)

    outcome = classify_outcome(clearance_trace, config.near_miss_threshold_m)
    return EpisodeRecord(
        episode_id=episode_id,
        scenario_id=setup.scenario_id,
        master_seed=0,
        episode_index=episode_id,
        params=params,
        outcome=outcome,
        frames=frames,
    )


@dataclass(frozen=True)
class StatsSummary:
    n_episodes: int
    counts: dict[str, int]  # outcome kind -> count
    per_scenario: dict[str, dict[str, int]]

    @property
    def contact_rate(self) -> float:
        return self.counts.get("collision", 0) / self.n_episodes

    @property
    def near_miss_rate(self) -> float:
        return self.counts.get("near_miss", 0) / self.n_episodes

    def lines(self) -> list[str]:
        out = [f"episodes: {self.n_episodes}"]
        for kind in ("collision", "near_miss", "pass"):
            count = self.counts.get(kind, 0)
            out.append(f"{kind}: {count} ({fmt(count / self.n_episodes * 100)}%)")
        out.append("per-scenario collision rates:")
        for scenario_id in sorted(self.per_scenario):
            sc = self.per_scenario[scenario_id]
            total = sum(sc.values())
            out.append(
                f"  {scenario_id}: {sc.get('collision', 0)}/{total} "
                f"({fmt(sc.get('collision', 0) / total * 100)}%)"
            )
        return out


def _episode_schedule(templates: list[ScenarioTemplate], weights: dict[str, int] | None) -> list[ScenarioTemplate]:
    """Round-robin cycle, expanded by integer weights when provided."""
    if not weights:
        return list(templates)
    cycle = []
    for template in templates:
        cycle.extend([template] * int(weights.get(template.id, 1)))
    if not cycle:
        raise ValueError("scenario weights removed every template")
    return cycle


def _simulate_one(args) -> EpisodeRecord:
    (index, template, master_seed, sampling_config, run_config, camera, profile) = args
    stream = derive_stream(master_seed, index)
    params = sample_parameters(template, sampling_config, stream)
    setup = instantiate(template, params, stream)
    record = run_episode(
        setup, params, run_config, stream, episode_id=index, camera=camera, profile=profile
    )
    record.master_seed = master_seed
    return record


def generate_dataset(
    n_episodes: int,
    master_seed: int,
    out_dir: str | Path,
    sampling_config: SamplingConfig | None = None,
    run_config: RunConfig | None = None,
    templates: list[ScenarioTemplate] | None = None,
    camera: CameraModel | None = None,
    profile: RenderProfile | None = None,
) -> StatsSummary:
    """Generate `n_episodes` episodes deterministically into `out_dir`.

    Output bytes depend only on the arguments, never on worker count:
    episodes are simulated in parallel but committed in episode-index order.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    sampling_config = sampling_config or SamplingConfig.defaults()
    run_config = run_config or RunConfig()
    camera = camera or CameraModel()
    profile = profile or RenderProfile.default()
    if templates is None:
        templates = default_templates(run_config.include_rear_end)
    cycle = _episode_schedule(templates, run_config.scenario_weights)

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        sentinel = out / SUCCESS_SENTINEL
        if sentinel.exists():
            sentinel.unlink()

        jobs = [
            (i, cycle[i % len(cycle)], master_seed, sampling_config, run_config, camera, profile)
            for i in range(n_episodes)
        ]
        frames_buf = io.StringIO()
        episodes_buf = io.StringIO()
        frames_csv = csv.writer(frames_buf, lineterminator="\n")
        episodes_csv = csv.writer(episodes_buf, lineterminator="\n")
        frames_csv.writerow(FRAMES_HEADER)
        episodes_csv.writerow(EPISODES_HEADER)

        if run_config.workers > 1:
            executor = ProcessPoolExecutor(max_workers=run_config.workers)
            records = executor.map(_simulate_one, jobs, chunksize=4)
        else:
            records = map(_simulate_one, jobs)

        counts: dict[str, int] = {}
        per_scenario: dict[str, dict[str, int]] = {}
        for record in records:
            episode_dir = out / "images" / f"ep{record.episode_index:06d}"
            episode_dir.mkdir(parents=True, exist_ok=True)
            for frame_index, frame in enumerate(record.frames):
                frame.image.write(out / frame.image_path)
                frames_csv.writerow(
                    [
                        record.episode_id,
                        frame_index,
                        fmt(frame.t),
                        frame.image_path,
                        fmt(frame.steering_label_deg),
                        fmt(frame.speed_mps),
                        int(frame.contact_flag),
                    ]
                )
                frame.image = None
            p = record.params
            episodes_csv.writerow(
                [
                    record.episode_id,
                    record.scenario_id,
                    record.episode_index,
                    record.outcome.kind.value,
                    fmt(record.outcome.min_clearance_m),
                    fmt(p.mass_kg),
                    fmt(p.speed_mps),
                    fmt(p.fog_density_per_m),
                    fmt(p.brake_decel_mps2),
                    fmt(p.lane_change_distance_m),
                    fmt(p.vertical_offset_m),
                ]
            )
            kind = record.outcome.kind.value
            counts[kind] = counts.get(kind, 0) + 1
            per_scenario.setdefault(record.scenario_id, {})
            per_scenario[record.scenario_id][kind] = per_scenario[record.scenario_id].get(kind, 0) + 1

        if run_config.workers > 1:
            executor.shutdown()

        (out / "frames.csv").write_text(frames_buf.getvalue(), encoding="utf-8")
        (out / "episodes.csv").write_text(episodes_buf.getvalue(), encoding="utf-8")
        stats = StatsSummary(n_episodes, counts, per_scenario)
        (out / "stats.txt").write_text("\n".join(stats.lines()) + "\n", encoding="utf-8")
        (out / SUCCESS_SENTINEL).write_text("", encoding="utf-8")
        return stats
    except OSError as exc:
        raise IoError(out, exc) from exc


def _read_csv(path: Path, header: list[str]) -> list[dict[str, str]]:
    if not path.exists():
        raise ManifestError(f"missing manifest {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if first != header:
            raise ParseError(path, 1, f"bad header {first!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            rows.append(dict(zip(header, row)))
    return rows


def collision_stats(dataset_dir: str | Path) -> StatsSummary:
    """Recompute outcome statistics from a dataset's episode manifest."""
    dataset_dir = Path(dataset_dir)
    rows = _read_csv(dataset_dir / "episodes.csv", EPISODES_HEADER)
    if not rows:
        raise EmptyManifestError(f"{dataset_dir / 'episodes.csv'} has no episodes")
    counts: dict[str, int] = {}
    per_scenario: dict[str, dict[str, int]] = {}
    for lineno, row in enumerate(rows, start=2):
        kind = row["outcome"]
        if kind not in (k.value for k in OutcomeKind):
            raise ParseError(dataset_dir / "episodes.csv", lineno, f"unknown outcome {kind!r}")
        counts[kind] = counts.get(kind, 0) + 1
        per_scenario.setdefault(row["scenario_id"], {})
        per_scenario[row["scenario_id"]][kind] = per_scenario[row["scenario_id"]].get(kind, 0) + 1
    return StatsSummary(len(rows), counts, per_scenario)


def _largest_remainder_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    raw = [n * r for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(remainder):
        counts[order[i % 3]] += 1
    return counts


def split_dataset(
    dataset_dir: str | Path,
    ratios: tuple[float, float, float],
    seed: int,
    exclude_post_contact: bool = True,
) -> dict[str, Path]:
    """Write train/val/test manifests under the dataset directory.

    The split is by episode (never by frame) with a seeded shuffle; image
    paths in the split manifests are relative to each split directory.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    dataset_dir = Path(dataset_dir)
    episode_rows = _read_csv(dataset_dir / "episodes.csv", EPISODES_HEADER)
    frame_rows = _read_csv(dataset_dir / "frames.csv", FRAMES_HEADER)
    if not episode_rows:
        raise EmptyManifestError(f"{dataset_dir} has no episodes")

    episode_ids = [row["episode_id"] for row in episode_rows]
    stream = derive_stream(seed, 0)
    order = list(range(len(episode_ids)))
    for i in range(len(order) - 1, 0, -1):  # Fisher-Yates
        j = stream.next_raw() % (i + 1)
        order[i], order[j] = order[j], order[i]

    counts = _largest_remainder_counts(len(order), ratios)
    if any(c == 0 for c in counts):
        raise InsufficientEpisodesError(
            f"{len(order)} episodes cannot fill splits with ratios {ratios}"
        )
    names = ("train", "val", "test")
    assignment: dict[str, str] = {}
    at = 0
    for name, count in zip(names, counts):
        for k in order[at : at + count]:
            assignment[episode_ids[k]] = name
        at += count

    by_split_frames: dict[str, list[dict[str, str]]] = {n: [] for n in names}
    for row in frame_rows:
        if exclude_post_contact and row["contact"] == "1":
            continue
        by_split_frames[assignment[row["episode_id"]]].append(row)
    by_split_episodes: dict[str, list[dict[str, str]]] = {n: [] for n in names}
    for row in episode_rows:
        by_split_episodes[assignment[row["episode_id"]]].append(row)

    result = {}
    for name in names:
        split_dir = dataset_dir / name
        split_dir.mkdir(exist_ok=True)
        with (split_dir / "frames.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(FRAMES_HEADER)
            for row in by_split_frames[name]:
                row = dict(row)
                row["image_path"] = "../" + row["image_path"]
                writer.writerow([row[c] for c in FRAMES_HEADER])
        with (split_dir / "episodes.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(EPISODES_HEADER)
            for row in by_split_episodes[name]:
                writer.writerow([row[c] for c in EPISODES_HEADER])
        result[name] = split_dir
    return result


def load_frames(data_dir: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Load a manifest directory into (images uint8 [N,H,W], steering degrees [N])."""
    data_dir = Path(data_dir)
    rows = _read_csv(data_dir / "frames.csv", FRAMES_HEADER)
    if not rows:
        raise EmptyManifestError(f"{data_dir} has no frames")
    images = []
    labels = []
    for row in rows:
        image = Image.read((data_dir / row["image_path"]).resolve())
        images.append(image.pixels)
        labels.append(float(row["steering_deg"]))
    return np.stack(images), np.array(labels)
