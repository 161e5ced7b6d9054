"""Image-space transforms applied between the renderer and the victim.

The attack averages its loss over a small family of crop-then-rescale
transforms so the learned texture survives framing changes. One draw from
the schedule produces a parameter set that is applied identically to the
clean and the adversarial branch of the same sample.

Cropping keeps the central window; when the leftover is odd the start
index is floored, putting the extra pixel on the bottom/right. Rescaling
is bilinear with the align-corners-off convention (half-pixel centers),
which keeps same-size rescaling an exact identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CropTooLarge, EmptySchedule, ShapeError, ShapeMismatch

__all__ = [
    "TransformParams",
    "ScheduleEntry",
    "DEFAULT_SCHEDULE",
    "center_crop",
    "rescale",
    "apply_phi",
    "sample_transform",
]


@dataclass(frozen=True)
class TransformParams:
    """One concrete transform draw: keep the central ``crop_fraction`` of
    the image, then rescale to ``output_size`` (H, W). ``scale_label``
    names the schedule entry the draw came from."""

    crop_fraction: float
    output_size: tuple[int, int]
    scale_label: str = ""


@dataclass(frozen=True)
class ScheduleEntry:
    crop_fraction: float
    weight: float
    output_size: tuple[int, int] = (224, 224)
    label: str = ""

    @property
    def scale_label(self) -> str:
        return self.label or f"crop{self.crop_fraction:g}"


# Two scales mirroring the two capture distances: the full frame as
# rendered, and the central half upsampled (a 10 m view cropped this way
# frames the vehicle like a 5 m view).
DEFAULT_SCHEDULE = (
    ScheduleEntry(crop_fraction=1.0, weight=0.5, label="10m"),
    ScheduleEntry(crop_fraction=0.5, weight=0.5, label="5m"),
)


def center_crop(image: torch.Tensor, w: int, h: int) -> torch.Tensor:
    """Central (h, w) window of an (H, W, C) image.

    Start indices are floor((W - w) / 2) and floor((H - h) / 2); for even
    differences that is the exact centered window, for odd ones the extra
    pixel lands on the bottom/right.
    """
    if image.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) image, got {tuple(image.shape)}")
    H, W = image.shape[0], image.shape[1]
    if w > W or h > H:
        raise CropTooLarge(f"crop {h}x{w} exceeds image {H}x{W}")
    if w < 1 or h < 1:
        raise CropTooLarge(f"crop size must be positive, got {h}x{w}")
    y0 = (H - h) // 2
    x0 = (W - w) // 2
    return image[y0 : y0 + h, x0 : x0 + w]


def rescale(image: torch.Tensor, output_size: tuple[int, int]) -> torch.Tensor:
    """Bilinear rescale (align-corners off) to (H, W); differentiable in the
    input pixels. Same-size input is returned unchanged."""
    if image.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) image, got {tuple(image.shape)}")
    th, tw = int(output_size[0]), int(output_size[1])
    if th < 1 or tw < 1:
        raise ShapeError(f"rescale target must be positive, got {output_size}")
    h, w = image.shape[0], image.shape[1]
    if (h, w) == (th, tw):
        return image
    batched = image.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(batched, size=(th, tw), mode="bilinear", align_corners=False)
    return out.squeeze(0).permute(1, 2, 0)


def crop_size(dim: int, fraction: float) -> int:
    """Pixel extent of a fractional crop; at least one pixel."""
    if not 0.0 < fraction <= 1.0:
        raise CropTooLarge(f"crop fraction must be in (0, 1], got {fraction}")
    return max(1, int(round(fraction * dim)))


def apply_phi(image: torch.Tensor, params: TransformParams) -> torch.Tensor:
    """Crop then rescale; the composition the attack expectation runs over."""
    h, w = image.shape[0], image.shape[1]
    ch = crop_size(h, params.crop_fraction)
    cw = crop_size(w, params.crop_fraction)
    return rescale(center_crop(image, cw, ch), params.output_size)


def sample_transform(rng: np.random.Generator, schedule) -> TransformParams:
    """Draw one entry from ``schedule`` proportionally to its weight."""
    entries = list(schedule)
    if not entries:
        raise EmptySchedule("transform schedule has no entries")
    weights = np.array([e.weight for e in entries], dtype=np.float64)
    if np.any(weights <= 0) or not np.isfinite(weights).all():
        raise EmptySchedule("schedule weights must be positive and finite")
    probs = weights / weights.sum()
    idx = int(rng.choice(len(entries), p=probs))
    e = entries[idx]
    return TransformParams(
        crop_fraction=e.crop_fraction,
        output_size=tuple(e.output_size),
        scale_label=e.scale_label,
    )
