"""Learnable UV texture map and its PNG import/export."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, IoError

__all__ = ["TextureMap", "export_texture", "import_texture"]


@dataclass
class TextureMap:
    """Full-surface RGB texture, the optimization variable of an attack run.

    ``texels`` is an (H, W, 3) float tensor with values in [0, 1]. The
    resolution is fixed for the lifetime of a run; the optimizer clamps
    texels back into range after every update.
    """

    texels: torch.Tensor

    def __post_init__(self):
        if not isinstance(self.texels, torch.Tensor):
            self.texels = torch.as_tensor(self.texels)
        if self.texels.ndim != 3 or self.texels.shape[2] != 3:
            raise FormatError(f"texture must be (H, W, 3), got {tuple(self.texels.shape)}")
        if not self.texels.dtype.is_floating_point:
            raise FormatError(f"texture must be floating point, got {self.texels.dtype}")

    @property
    def resolution(self) -> tuple[int, int]:
        return int(self.texels.shape[0]), int(self.texels.shape[1])

    def validate(self) -> None:
        t = self.texels.detach()
        if torch.any(t < 0) or torch.any(t > 1):
            raise FormatError("texture values outside [0, 1]")

    def clamp_(self) -> "TextureMap":
        with torch.no_grad():
            self.texels.clamp_(0.0, 1.0)
        return self

    def copy(self) -> "TextureMap":
        return TextureMap(self.texels.detach().clone())

    def to(self, dtype: torch.dtype) -> "TextureMap":
        return TextureMap(self.texels.detach().to(dtype))


def export_texture(texture: TextureMap, path) -> None:
    """Write the texture as an 8-bit RGB PNG (row-major, row 0 on top)."""
    t = texture.texels.detach().cpu().numpy()
    arr = np.clip(np.round(t * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write texture to {path}: {exc}") from exc


def import_texture(path, dtype: torch.dtype = torch.float32) -> TextureMap:
    """Read a texture PNG back into [0, 1] floats.

    Round trip through :func:`export_texture` preserves every texel to the
    8-bit quantization bound (max per-channel error 1/510).
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise FormatError(f"not a readable raster image: {path}") from exc
    except OSError as exc:
        if path.exists():
            raise FormatError(f"not a readable raster image: {path}") from exc
        raise IoError(f"cannot read texture from {path}: {exc}") from exc
    return TextureMap(torch.from_numpy(arr / 255.0).to(dtype))
