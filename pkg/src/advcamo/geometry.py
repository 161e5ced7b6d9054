"""Mesh assets, camera poses, and the OBJ subset used for asset exchange.

Meshes use indexed triangles where every face corner references a vertex
and a UV coordinate independently (OBJ ``v/vt`` style). The shipped assets
(a unit test cube and a low-poly toy car) are built procedurally from
axis-aligned boxes whose faces each own one cell of a regular UV atlas, so
the whole [0,1]^2 texture is visible on the object surface.

World frame: x east, y north, z up; the ground plane is z = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, IoError
from .texture import TextureMap

__all__ = [
    "YAW_LABELS",
    "CameraPose",
    "Mesh",
    "load_obj",
    "save_obj",
    "build_unit_cube",
    "build_toy_car",
    "toy_car_paint",
]

# Compass labels in circle order so that yaw_deg = 45 * index is the true
# bearing from north, measured clockwise.
YAW_LABELS = (
    "north",
    "northeast",
    "east",
    "southeast",
    "south",
    "southwest",
    "west",
    "northwest",
)


@dataclass(frozen=True)
class CameraPose:
    """One viewpoint on the capture ring around the vehicle."""

    distance_m: float
    pitch_deg: float
    yaw_label: str

    def __post_init__(self):
        if self.distance_m <= 0:
            raise FormatError(f"distance must be positive, got {self.distance_m}")
        if not 0.0 < self.pitch_deg < 90.0:
            raise FormatError(f"pitch must be in (0, 90) degrees, got {self.pitch_deg}")
        if self.yaw_label not in YAW_LABELS:
            raise FormatError(f"unknown yaw label {self.yaw_label!r}")

    @property
    def yaw_deg(self) -> float:
        return 45.0 * YAW_LABELS.index(self.yaw_label)

    def eye_position(self, target: np.ndarray) -> np.ndarray:
        """Camera position: on the ring at ``distance_m`` from ``target``,
        elevated by ``pitch_deg`` above the horizontal."""
        yaw = math.radians(self.yaw_deg)
        pitch = math.radians(self.pitch_deg)
        horiz = self.distance_m * math.cos(pitch)
        offset = np.array(
            [horiz * math.sin(yaw), horiz * math.cos(yaw), self.distance_m * math.sin(pitch)]
        )
        return np.asarray(target, dtype=np.float64) + offset


@dataclass
class Mesh:
    """Indexed triangle mesh with independent vertex and UV indexing.

    faces has shape (F, 3, 2): faces[f, k] = (vertex_index, uv_index) for
    corner k of triangle f.
    """

    vertices: np.ndarray
    uv_coords: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.uv_coords = np.asarray(self.uv_coords, dtype=np.float64).reshape(-1, 2)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3, 2)

    def validate(self) -> None:
        vi = self.faces[:, :, 0]
        ti = self.faces[:, :, 1]
        if vi.size == 0:
            raise FormatError("mesh has no faces")
        if vi.min() < 0 or vi.max() >= len(self.vertices):
            raise FormatError("face vertex index out of range")
        if ti.min() < 0 or ti.max() >= len(self.uv_coords):
            raise FormatError("face uv index out of range")
        if np.any(self.uv_coords < 0.0) or np.any(self.uv_coords > 1.0):
            raise FormatError("uv coordinates outside [0, 1]^2")

    @property
    def center(self) -> np.ndarray:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (lo + hi) / 2.0


def load_obj(path) -> Mesh:
    """Parse the supported OBJ subset: ``v``, ``vt``, and triangular ``f``
    records with ``v/vt`` indexing. Anything else is rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read mesh from {path}: {exc}") from exc
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[tuple[int, int]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "v":
                if len(parts) != 4:
                    raise ValueError("expected 3 coordinates")
                verts.append([float(p) for p in parts[1:]])
            elif kind == "vt":
                if len(parts) != 3:
                    raise ValueError("expected 2 coordinates")
                uvs.append([float(p) for p in parts[1:]])
            elif kind == "f":
                if len(parts) != 4:
                    raise ValueError("only triangular faces are supported")
                corners = []
                for p in parts[1:]:
                    bits = p.split("/")
                    if len(bits) != 2 or not bits[0] or not bits[1]:
                        raise ValueError("face corners must use v/vt indexing")
                    corners.append((int(bits[0]) - 1, int(bits[1]) - 1))
                faces.append(corners)
            else:
                raise ValueError(f"unsupported record {kind!r}")
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not faces:
        raise FormatError(f"{path}: no faces found")
    mesh = Mesh(np.array(verts), np.array(uvs), np.array(faces))
    mesh.validate()
    return mesh


def save_obj(mesh: Mesh, path) -> None:
    mesh.validate()
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}")
    for t in mesh.uv_coords:
        lines.append(f"vt {t[0]:.8g} {t[1]:.8g}")
    for f in mesh.faces:
        corners = " ".join(f"{int(vi) + 1}/{int(ti) + 1}" for vi, ti in f)
        lines.append(f"f {corners}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write mesh to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Procedural assets
# ---------------------------------------------------------------------------

# Corner offsets (in half-size units) for the six faces of a box, each listed
# in a consistent order so corner k maps to UV rect corner k.
_BOX_FACES = (
    (( 1, -1, -1), ( 1,  1, -1), ( 1,  1,  1), ( 1, -1,  1)),   # +x
    ((-1,  1, -1), (-1, -1, -1), (-1, -1,  1), (-1,  1,  1)),   # -x
    (( 1,  1, -1), (-1,  1, -1), (-1,  1,  1), ( 1,  1,  1)),   # +y
    ((-1, -1, -1), ( 1, -1, -1), ( 1, -1,  1), (-1, -1,  1)),   # -y
    ((-1, -1,  1), ( 1, -1,  1), ( 1,  1,  1), (-1,  1,  1)),   # +z
    ((-1, -1, -1), (-1,  1, -1), ( 1,  1, -1), ( 1, -1, -1)),   # -z
)


def _atlas_rect(cell: int, grid: int, margin: float) -> tuple[float, float, float, float]:
    row, col = divmod(cell, grid)
    u0 = (col + margin) / grid
    u1 = (col + 1 - margin) / grid
    v0 = (row + margin) / grid
    v1 = (row + 1 - margin) / grid
    return u0, u1, v0, v1


def _add_box(verts, uvs, faces, center, size, first_cell, grid, margin=0.05):
    cx, cy, cz = center
    hx, hy, hz = size[0] / 2, size[1] / 2, size[2] / 2
    for face_idx, corners in enumerate(_BOX_FACES):
        u0, u1, v0, v1 = _atlas_rect(first_cell + face_idx, grid, margin)
        rect = ((u0, v0), (u1, v0), (u1, v1), (u0, v1))
        base_v = len(verts)
        base_t = len(uvs)
        for sx, sy, sz in corners:
            verts.append([cx + sx * hx, cy + sy * hy, cz + sz * hz])
        uvs.extend(rect)
        for a, b, c in ((0, 1, 2), (0, 2, 3)):
            faces.append([(base_v + a, base_t + a), (base_v + b, base_t + b), (base_v + c, base_t + c)])


def build_unit_cube() -> Mesh:
    """Axis-aligned unit cube centered at the origin; 6 faces on a 3x2 atlas."""
    verts: list = []
    uvs: list = []
    faces: list = []
    cx, cy, cz = 0.0, 0.0, 0.0
    for face_idx, corners in enumerate(_BOX_FACES):
        row, col = divmod(face_idx, 3)
        u0 = (col + 0.05) / 3
        u1 = (col + 0.95) / 3
        v0 = (row + 0.05) / 2
        v1 = (row + 0.95) / 2
        rect = ((u0, v0), (u1, v0), (u1, v1), (u0, v1))
        base = len(verts)
        for sx, sy, sz in corners:
            verts.append([cx + sx * 0.5, cy + sy * 0.5, cz + sz * 0.5])
        uvs.extend(rect)
        for a, b, c in ((0, 1, 2), (0, 2, 3)):
            faces.append([(base + a, base + a), (base + b, base + b), (base + c, base + c)])
    mesh = Mesh(np.array(verts), np.array(uvs), np.array(faces))
    mesh.validate()
    return mesh


# Box layout of the toy car: (center, size, atlas cells 6i..6i+5).
_CAR_BOXES = (
    ((0.0, 0.0, 0.70), (4.2, 1.8, 0.70)),      # body
    ((-0.2, 0.0, 1.29), (1.6, 1.5, 0.52)),     # cabin, slightly sunk into the body
    ((1.35, 0.80, 0.35), (0.70, 0.25, 0.70)),  # wheels
    ((1.35, -0.80, 0.35), (0.70, 0.25, 0.70)),
    ((-1.35, 0.80, 0.35), (0.70, 0.25, 0.70)),
    ((-1.35, -0.80, 0.35), (0.70, 0.25, 0.70)),
)

_CAR_ATLAS_GRID = 6


def build_toy_car() -> Mesh:
    """Low-poly toy car (~4.2 m long): body, cabin, four wheels.

    Each of the 36 box faces owns one cell of a 6x6 UV atlas, so an attack
    on the texture reaches every visible surface.
    """
    verts: list = []
    uvs: list = []
    faces: list = []
    for i, (center, size) in enumerate(_CAR_BOXES):
        _add_box(verts, uvs, faces, center, size, first_cell=6 * i, grid=_CAR_ATLAS_GRID)
    mesh = Mesh(np.array(verts), np.array(uvs), np.array(faces))
    mesh.validate()
    return mesh


def toy_car_paint(resolution: tuple[int, int] = (512, 512), dtype: torch.dtype = torch.float32) -> TextureMap:
    """Deterministic factory paint for the toy car: blue body, light cabin,
    dark wheels, with a contrast stripe across the body cells."""
    h, w = resolution
    tex = np.zeros((h, w, 3), dtype=np.float64)
    colors = {
        0: (0.20, 0.35, 0.75),   # body
        1: (0.85, 0.88, 0.90),   # cabin
    }
    wheel_color = (0.12, 0.12, 0.14)
    grid = _CAR_ATLAS_GRID
    for box in range(len(_CAR_BOXES)):
        color = colors.get(box, wheel_color)
        for face in range(6):
            cell = 6 * box + face
            row, col = divmod(cell, grid)
            r0, r1 = round(row * h / grid), round((row + 1) * h / grid)
            c0, c1 = round(col * w / grid), round((col + 1) * w / grid)
            tex[r0:r1, c0:c1] = color
            if box == 0:
                # stripe through the middle of each body cell
                sr0 = r0 + (r1 - r0) * 2 // 5
                sr1 = r0 + (r1 - r0) * 3 // 5
                tex[sr0:sr1, c0:c1] = (0.92, 0.92, 0.95)
    return TextureMap(torch.from_numpy(tex).to(dtype))
