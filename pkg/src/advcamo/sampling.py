"""Dataset manifest and the weighted viewpoint sampler.

The capture grid is deliberately lopsided toward shallow pitch: most real
observations of a vehicle come from near-horizontal viewpoints, so shallow
views get three times the draw weight of each steeper class. Within a
pitch class, (distance, yaw) cells are drawn uniformly, then a variant
uniformly inside the cell, all with replacement.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyPitchClass, FormatError, MissingFile
from .geometry import YAW_LABELS
from .transforms import DEFAULT_SCHEDULE, sample_transform

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "SamplingPolicy",
    "DEFAULT_PITCH_WEIGHTS",
    "load_manifest",
    "save_manifest",
    "sample_batch",
    "epoch_draw_count",
]

GRID_DISTANCES = (5.0, 10.0)
GRID_PITCHES = (22.5, 45.0, 67.5)

DEFAULT_PITCH_WEIGHTS = {22.5: 3.0, 45.0: 1.0, 67.5: 1.0}

_REQUIRED_KEYS = (
    "sample_id",
    "background_path",
    "uv_map_path",
    "mask_path",
    "distance_m",
    "pitch_deg",
    "yaw_label",
)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    background_path: str
    uv_map_path: str
    mask_path: str
    distance_m: float
    pitch_deg: float
    yaw_label: str

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in _REQUIRED_KEYS}


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def by_pitch(self) -> dict[float, list[ManifestEntry]]:
        groups: dict[float, list[ManifestEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.pitch_deg, []).append(e)
        return groups


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [json.dumps(e.to_json(), sort_keys=True) for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, validate_grid: bool = True) -> DatasetManifest:
    """Read a JSONL manifest. With ``validate_grid`` every entry must sit on
    the standard capture grid (distances, pitches, compass yaws)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        missing = [k for k in _REQUIRED_KEYS if k not in rec]
        if missing:
            raise FormatError(f"{path}:{lineno}: missing keys {missing}")
        entry = ManifestEntry(
            sample_id=str(rec["sample_id"]),
            background_path=str(rec["background_path"]),
            uv_map_path=str(rec["uv_map_path"]),
            mask_path=str(rec["mask_path"]),
            distance_m=float(rec["distance_m"]),
            pitch_deg=float(rec["pitch_deg"]),
            yaw_label=str(rec["yaw_label"]),
        )
        if validate_grid:
            if entry.distance_m not in GRID_DISTANCES:
                raise FormatError(f"{path}:{lineno}: distance {entry.distance_m} off the grid {GRID_DISTANCES}")
            if entry.pitch_deg not in GRID_PITCHES:
                raise FormatError(f"{path}:{lineno}: pitch {entry.pitch_deg} off the grid {GRID_PITCHES}")
            if entry.yaw_label not in YAW_LABELS:
                raise FormatError(f"{path}:{lineno}: unknown yaw label {entry.yaw_label!r}")
        entries.append(entry)
    if not entries:
        raise FormatError(f"{path}: manifest is empty")
    return DatasetManifest(root=path.parent, entries=entries)


@dataclass
class SamplingPolicy:
    """Pitch-class weights plus the batch size; weights need not be
    normalized. ``seed`` starts the default stream when the caller does
    not hand sample_batch its own generator."""

    pitch_weights: dict[float, float] = field(default_factory=lambda: dict(DEFAULT_PITCH_WEIGHTS))
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise FormatError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.pitch_weights:
            raise FormatError("pitch_weights must not be empty")
        for pitch, w in self.pitch_weights.items():
            if w < 0 or not math.isfinite(w):
                raise FormatError(f"pitch weight for {pitch} must be finite and nonnegative, got {w}")
        if sum(self.pitch_weights.values()) <= 0:
            raise FormatError("pitch weights sum to zero")

    def probabilities(self) -> dict[float, float]:
        total = sum(self.pitch_weights.values())
        return {p: w / total for p, w in self.pitch_weights.items()}


def sample_batch(
    manifest: DatasetManifest,
    policy: SamplingPolicy,
    schedule=DEFAULT_SCHEDULE,
    rng: np.random.Generator | None = None,
    loader=None,
):
    """Draw ``policy.batch_size`` (sample, transform) pairs with replacement.

    Pitch class is drawn by weight, the (distance, yaw) cell uniformly
    within the class, a variant uniformly within the cell, and an
    independent multi-scale transform per draw. ``loader`` maps a manifest
    entry to a loaded scene sample; when omitted the raw entry is returned
    in its place so callers that only need pose metadata skip the file IO.
    """
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    groups = manifest.by_pitch()
    pitches = sorted(policy.pitch_weights)
    for p in pitches:
        if policy.pitch_weights[p] > 0 and p not in groups:
            raise EmptyPitchClass(f"manifest has no entries at pitch {p}")
    probs = policy.probabilities()
    pvec = np.array([probs[p] for p in pitches])

    cells: dict[float, list[list[ManifestEntry]]] = {}
    for p, entries in groups.items():
        bucket: dict[tuple[float, str], list[ManifestEntry]] = {}
        for e in entries:
            bucket.setdefault((e.distance_m, e.yaw_label), []).append(e)
        cells[p] = [bucket[k] for k in sorted(bucket)]

    batch = []
    for _ in range(policy.batch_size):
        pitch = pitches[int(rng.choice(len(pitches), p=pvec))]
        cell = cells[pitch][int(rng.integers(len(cells[pitch])))]
        entry = cell[int(rng.integers(len(cell)))]
        params = sample_transform(rng, schedule)
        batch.append((entry if loader is None else loader(entry), params))
    return batch


def epoch_draw_count(manifest_size: int, batch_size: int) -> int:
    """Batches per epoch: enough draws to cover the manifest once in
    expectation, rounded up."""
    if manifest_size < 1 or batch_size < 1:
        raise FormatError("manifest size and batch size must be positive")
    return math.ceil(manifest_size / batch_size)
