"""Scene dataset construction.

A dataset is a grid of camera poses around the vehicle times a handful of
background variants per pose. Geometry is rasterized once per pose (the UV
lookup map and mask depend only on the pose), and every variant of that
pose references the same UV and mask files with its own procedurally drawn
background. Backgrounds are crude road scenes: sky gradient, ground plane,
a horizon strip of box buildings; enough variation that the attack cannot
overfit one backdrop.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DegeneratePose, FormatError
from .geometry import YAW_LABELS, CameraPose, Mesh
from .rendering import (
    SceneSample,
    load_image_png,
    load_mask_png,
    load_uv_png,
    rasterize_uv,
    render,
    save_image_png,
    save_mask_png,
    save_uv_png,
)
from .sampling import DatasetManifest, ManifestEntry, save_manifest
from .texture import TextureMap

log = logging.getLogger(__name__)

__all__ = [
    "GridSpec",
    "DEFAULT_GRID",
    "random_background",
    "generate_dataset",
    "load_scene_sample",
    "preview",
]


@dataclass(frozen=True)
class GridSpec:
    distances: tuple[float, ...] = (5.0, 10.0)
    pitches: tuple[float, ...] = (22.5, 45.0, 67.5)
    yaw_labels: tuple[str, ...] = YAW_LABELS
    variants_per_pose: int = 10
    image_size: tuple[int, int] = (224, 224)

    def __post_init__(self):
        if self.variants_per_pose < 1:
            raise FormatError("variants_per_pose must be at least 1")
        for y in self.yaw_labels:
            if y not in YAW_LABELS:
                raise FormatError(f"unknown yaw label {y!r}")

    @property
    def pose_count(self) -> int:
        return len(self.distances) * len(self.pitches) * len(self.yaw_labels)

    @property
    def sample_count(self) -> int:
        return self.pose_count * self.variants_per_pose


DEFAULT_GRID = GridSpec()


def random_background(size: tuple[int, int], rng: np.random.Generator) -> torch.Tensor:
    """One procedural road scene, (H, W, 3) float32 in [0, 1]."""
    h, w = size
    img = np.zeros((h, w, 3), dtype=np.float64)

    horizon = int(h * (0.40 + 0.15 * rng.random()))
    sky_top = np.array([0.35, 0.55, 0.80]) + rng.uniform(-0.08, 0.12, 3)
    sky_bot = sky_top + np.array([0.15, 0.12, 0.08])
    t = (np.arange(horizon) / max(horizon - 1, 1))[:, None, None]
    img[:horizon] = sky_top * (1 - t) + sky_bot * t

    ground = np.array([0.38, 0.37, 0.36]) + rng.uniform(-0.06, 0.06, 3)
    img[horizon:] = ground
    # coarse ground speckle so the floor is not flat
    speckle = rng.uniform(-0.03, 0.03, (h - horizon, w, 1))
    img[horizon:] += speckle

    # box buildings along the horizon
    for _ in range(int(rng.integers(3, 7))):
        bw = int(rng.integers(w // 12, w // 4))
        bh = int(rng.integers(h // 10, h // 3))
        x0 = int(rng.integers(0, max(w - bw, 1)))
        color = np.array([0.45, 0.42, 0.40]) + rng.uniform(-0.12, 0.12, 3)
        img[max(horizon - bh, 0) : horizon, x0 : x0 + bw] = color

    # lane marking strip on the ground
    if rng.random() < 0.7:
        y0 = horizon + int((h - horizon) * rng.uniform(0.3, 0.7))
        img[y0 : min(y0 + 2, h)] = [0.85, 0.83, 0.75]

    np.clip(img, 0.0, 1.0, out=img)
    return torch.from_numpy(img).to(torch.float32)


def generate_dataset(
    mesh: Mesh,
    grid: GridSpec = DEFAULT_GRID,
    out_dir=None,
    seed: int = 0,
) -> DatasetManifest:
    """Rasterize the full pose grid and write the dataset under ``out_dir``.

    Layout: uv/ and masks/ hold one file per pose, backgrounds/ one per
    sample, manifest.jsonl lists every sample with paths relative to
    ``out_dir``. Poses from which the mesh is invisible are skipped with a
    warning rather than aborting the whole grid.
    """
    if out_dir is None:
        raise FormatError("generate_dataset needs an output directory")
    out_dir = Path(out_dir)
    for sub in ("backgrounds", "uv", "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    skipped = 0
    poses = list(itertools.product(grid.distances, grid.pitches, grid.yaw_labels))
    for pose_idx, (dist, pitch, yaw) in enumerate(poses):
        pose = CameraPose(distance_m=dist, pitch_deg=pitch, yaw_label=yaw)
        pose_tag = f"d{dist:g}_p{pitch:g}_{yaw}"
        try:
            uv_map, mask = rasterize_uv(mesh, pose, grid.image_size)
        except DegeneratePose as exc:
            skipped += 1
            log.warning("skipping pose %s: %s", pose_tag, exc)
            continue
        uv_rel = f"uv/{pose_tag}.png"
        mask_rel = f"masks/{pose_tag}.png"
        save_uv_png(torch.from_numpy(uv_map), out_dir / uv_rel)
        save_mask_png(torch.from_numpy(mask), out_dir / mask_rel)

        for variant in range(grid.variants_per_pose):
            # one independent stream per sample, stable under grid order
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(pose_idx, variant))
            )
            bg = random_background(grid.image_size, rng)
            sid = f"{pose_tag}_v{variant:02d}"
            bg_rel = f"backgrounds/{sid}.png"
            save_image_png(bg, out_dir / bg_rel)
            entries.append(
                ManifestEntry(
                    sample_id=sid,
                    background_path=bg_rel,
                    uv_map_path=uv_rel,
                    mask_path=mask_rel,
                    distance_m=dist,
                    pitch_deg=pitch,
                    yaw_label=yaw,
                )
            )
        log.info("rasterized pose %s (%d/%d)", pose_tag, pose_idx + 1, len(poses))
    if skipped:
        log.warning("skipped %d of %d poses with no visible geometry", skipped, len(poses))

    manifest = DatasetManifest(root=out_dir, entries=entries)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def load_scene_sample(manifest: DatasetManifest, entry: ManifestEntry) -> SceneSample:
    sample = SceneSample(
        sample_id=entry.sample_id,
        background=load_image_png(manifest.resolve(entry.background_path)),
        uv_map=load_uv_png(manifest.resolve(entry.uv_map_path)),
        mask=load_mask_png(manifest.resolve(entry.mask_path)),
        pose=CameraPose(
            distance_m=entry.distance_m,
            pitch_deg=entry.pitch_deg,
            yaw_label=entry.yaw_label,
        ),
    )
    sample.validate()
    return sample


def preview(sample: SceneSample, texture: TextureMap, out_path=None) -> torch.Tensor:
    """Composite the textured vehicle into the sample's background.

    With ``out_path`` the composite is also written out as a PNG for
    eyeballing checkpoints.
    """
    with torch.no_grad():
        image = render(sample, texture)
    if out_path is not None:
        save_image_png(image, out_path)
    return image


class SampleStore:
    """Loads scene samples with caching.

    UV maps and masks are shared across the variants of a pose, so they are
    cached per file; backgrounds are cached as uint8 to keep a full grid in
    memory without multiplying its PNG footprint by eight.
    """

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._uv: dict[str, torch.Tensor] = {}
        self._mask: dict[str, torch.Tensor] = {}
        self._bg: dict[str, torch.Tensor] = {}

    def load(self, entry: ManifestEntry) -> SceneSample:
        if entry.uv_map_path not in self._uv:
            self._uv[entry.uv_map_path] = load_uv_png(self.manifest.resolve(entry.uv_map_path))
        if entry.mask_path not in self._mask:
            self._mask[entry.mask_path] = load_mask_png(self.manifest.resolve(entry.mask_path))
        if entry.background_path not in self._bg:
            bg = load_image_png(self.manifest.resolve(entry.background_path))
            self._bg[entry.background_path] = (bg * 255.0).round().to(torch.uint8)
        sample = SceneSample(
            sample_id=entry.sample_id,
            background=self._bg[entry.background_path].to(torch.float32) / 255.0,
            uv_map=self._uv[entry.uv_map_path],
            mask=self._mask[entry.mask_path],
            pose=CameraPose(
                distance_m=entry.distance_m,
                pitch_deg=entry.pitch_deg,
                yaw_label=entry.yaw_label,
            ),
        )
        sample.validate()
        return sample
