"""Two-stage renderer used by the attack.

Stage one (``rasterize_uv``) is plain geometry: project the mesh through a
pinhole camera and record, per pixel, which texture coordinate the surface
shows there. It runs in numpy, is not differentiable, and is computed once
per scene sample.

Stage two (``render``) is a texture lookup: bilinearly sample the texture at
the recorded UVs over the foreground mask and composite over a background.
It is a torch op, so gradients flow from image-space losses back into the
texels the view actually shows. Texels no pixel references receive exactly
zero gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DegeneratePose, FormatError, IoError, ShapeMismatch
from .geometry import CameraPose, Mesh
from .texture import TextureMap

__all__ = [
    "FOV_DEG",
    "NEAR_M",
    "FAR_M",
    "SceneSample",
    "rasterize_uv",
    "render",
    "save_image_png",
    "load_image_png",
    "save_mask_png",
    "load_mask_png",
    "save_uv_png",
    "load_uv_png",
]

FOV_DEG = 60.0   # horizontal field of view of the pinhole camera
NEAR_M = 0.1
FAR_M = 100.0


@dataclass
class SceneSample:
    """One pre-rendered viewpoint: everything ``render`` needs except the texture."""

    sample_id: str
    background: torch.Tensor   # (H, W, 3) float in [0, 1]
    uv_map: torch.Tensor       # (H, W, 2) float in [0, 1], valid under mask
    mask: torch.Tensor         # (H, W) bool, True where the vehicle is visible
    pose: CameraPose

    def validate(self) -> None:
        h, w = self.mask.shape
        if self.background.shape != (h, w, 3):
            raise ShapeMismatch(f"background {tuple(self.background.shape)} vs mask {(h, w)}")
        if self.uv_map.shape != (h, w, 2):
            raise ShapeMismatch(f"uv_map {tuple(self.uv_map.shape)} vs mask {(h, w)}")
        if self.mask.dtype != torch.bool:
            raise ShapeMismatch("mask must be boolean")


def _camera_basis(pose: CameraPose, target: np.ndarray):
    eye = pose.eye_position(target)
    forward = np.asarray(target, dtype=np.float64) - eye
    dist = np.linalg.norm(forward)
    if dist < 1e-9:
        raise DegeneratePose("camera eye coincides with target")
    forward /= dist
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise DegeneratePose("view direction parallel to world up")
    right /= nr
    true_up = np.cross(right, forward)
    return eye, right, true_up, forward


def rasterize_uv(
    mesh: Mesh,
    pose: CameraPose,
    image_size: tuple[int, int] = (224, 224),
) -> tuple[np.ndarray, np.ndarray]:
    """Project ``mesh`` through the camera at ``pose`` aimed at the mesh center.

    Returns ``(uv_map, mask)``: uv_map is (H, W, 2) float64 with the texture
    coordinate visible at each pixel (zeros outside the mask), mask is
    (H, W) bool. Depth resolution uses a z-buffer with perspective-correct
    UV interpolation. Triangles with any corner outside [NEAR_M, FAR_M] are
    dropped; the capture ring keeps the vehicle well inside that range.
    """
    mesh.validate()
    h, w = image_size
    eye, right, true_up, forward = _camera_basis(pose, mesh.center)

    rel = mesh.vertices - eye
    cam = np.stack([rel @ right, rel @ true_up, rel @ forward], axis=1)

    focal = (w / 2.0) / math.tan(math.radians(FOV_DEG) / 2.0)
    cx, cy = w / 2.0, h / 2.0

    uv_map = np.zeros((h, w, 2), dtype=np.float64)
    mask = np.zeros((h, w), dtype=bool)
    zbuf = np.full((h, w), np.inf)

    for face in mesh.faces:
        vidx = face[:, 0]
        tidx = face[:, 1]
        pc = cam[vidx]                       # (3, 3) camera-space corners
        z = pc[:, 2]
        if np.any(z < NEAR_M) or np.any(z > FAR_M):
            continue
        px = cx + focal * pc[:, 0] / z
        py = cy - focal * pc[:, 1] / z
        uv = mesh.uv_coords[tidx]            # (3, 2)

        x0 = max(int(math.floor(px.min() - 0.5)), 0)
        x1 = min(int(math.ceil(px.max() + 0.5)), w - 1)
        y0 = max(int(math.floor(py.min() - 0.5)), 0)
        y1 = min(int(math.ceil(py.max() + 0.5)), h - 1)
        if x0 > x1 or y0 > y1:
            continue

        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)

        # signed areas for barycentric coordinates in screen space
        ax, ay = px[0], py[0]
        bx, by = px[1], py[1]
        cx2, cy2 = px[2], py[2]
        area = (bx - ax) * (cy2 - ay) - (by - ay) * (cx2 - ax)
        if abs(area) < 1e-12:
            continue
        w0 = ((bx - gx) * (cy2 - gy) - (by - gy) * (cx2 - gx)) / area
        w1 = ((cx2 - gx) * (ay - gy) - (cy2 - gy) * (ax - gx)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        # perspective-correct interpolation: weight barycentrics by 1/z
        iz = w0 / z[0] + w1 / z[1] + w2 / z[2]
        depth = 1.0 / np.where(iz > 0, iz, np.inf)
        u_px = (w0 * uv[0, 0] / z[0] + w1 * uv[1, 0] / z[1] + w2 * uv[2, 0] / z[2]) / np.where(iz > 0, iz, 1.0)
        v_px = (w0 * uv[0, 1] / z[0] + w1 * uv[1, 1] / z[1] + w2 * uv[2, 1] / z[2]) / np.where(iz > 0, iz, 1.0)

        tile = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (depth < tile)
        tile[win] = depth[win]
        mask[y0 : y1 + 1, x0 : x1 + 1][win] = True
        uv_map[y0 : y1 + 1, x0 : x1 + 1, 0][win] = u_px[win]
        uv_map[y0 : y1 + 1, x0 : x1 + 1, 1][win] = v_px[win]

    if not mask.any():
        raise DegeneratePose(
            f"mesh invisible from {pose.yaw_label} at {pose.distance_m} m, pitch {pose.pitch_deg}"
        )
    np.clip(uv_map, 0.0, 1.0, out=uv_map)
    return uv_map, mask


def render(sample: SceneSample, texture: TextureMap) -> torch.Tensor:
    """Differentiable texture lookup: bilinear sample at the sample's UVs
    over its mask, background elsewhere. Returns (H, W, 3) in the texture
    dtype. Gradient flows only into texels inside the bilinear footprints
    of masked pixels."""
    uv_map, mask, background = sample.uv_map, sample.mask, sample.background
    tex = texture.texels
    th, tw = tex.shape[0], tex.shape[1]
    if uv_map.shape[:2] != mask.shape or background.shape[:2] != mask.shape:
        raise ShapeMismatch("uv_map, mask, and background disagree on image size")

    u = uv_map[..., 0].to(tex.dtype)
    v = uv_map[..., 1].to(tex.dtype)
    x = u * (tw - 1)
    y = v * (th - 1)
    x0 = torch.clamp(x.floor().long(), 0, tw - 1)
    y0 = torch.clamp(y.floor().long(), 0, th - 1)
    x1 = torch.clamp(x0 + 1, max=tw - 1)
    y1 = torch.clamp(y0 + 1, max=th - 1)
    fx = (x - x0.to(tex.dtype)).unsqueeze(-1)
    fy = (y - y0.to(tex.dtype)).unsqueeze(-1)

    c00 = tex[y0, x0]
    c01 = tex[y0, x1]
    c10 = tex[y1, x0]
    c11 = tex[y1, x1]
    top = c00 * (1 - fx) + c01 * fx
    bot = c10 * (1 - fx) + c11 * fx
    sampled = top * (1 - fy) + bot * fy

    bg = background.to(tex.dtype)
    return torch.where(mask.unsqueeze(-1), sampled, bg)


# ---------------------------------------------------------------------------
# Image persistence
# ---------------------------------------------------------------------------


def save_image_png(image: torch.Tensor, path) -> None:
    """8-bit RGB PNG from an (H, W, 3) float tensor in [0, 1]."""
    arr = image.detach().cpu().clamp(0, 1).numpy()
    data = np.round(arr * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="RGB").save(Path(path))
    except OSError as exc:
        raise IoError(f"cannot write image to {path}: {exc}") from exc


def load_image_png(path, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise IoError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr).to(dtype)


def save_mask_png(mask: torch.Tensor, path) -> None:
    data = np.where(mask.detach().cpu().numpy(), 255, 0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="L").save(Path(path))
    except OSError as exc:
        raise IoError(f"cannot write mask to {path}: {exc}") from exc


def load_mask_png(path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise IoError(f"mask not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except OSError as exc:
        raise FormatError(f"cannot decode mask {path}: {exc}") from exc
    return torch.from_numpy(arr >= 128)


def save_uv_png(uv_map, path) -> None:
    """16-bit grayscale PNG holding both UV channels, u plane stacked above
    the v plane (2H, W). Quantization error is at most 1/131070 per channel."""
    arr = np.asarray(uv_map.detach().cpu().numpy() if torch.is_tensor(uv_map) else uv_map)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ShapeMismatch(f"uv_map must be (H, W, 2), got {arr.shape}")
    q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    stacked = np.concatenate([q[..., 0], q[..., 1]], axis=0)
    try:
        Image.fromarray(stacked).save(Path(path))
    except OSError as exc:
        raise IoError(f"cannot write uv map to {path}: {exc}") from exc


def load_uv_png(path, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise IoError(f"uv map not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.uint16)
    except OSError as exc:
        raise FormatError(f"cannot decode uv map {path}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[0] % 2 != 0:
        raise FormatError(f"uv png must stack two equal planes, got {arr.shape}")
    h = arr.shape[0] // 2
    uv = np.stack([arr[:h], arr[h:]], axis=-1).astype(np.float64) / 65535.0
    return torch.from_numpy(uv).to(dtype)
