"""Camera pose arithmetic, mesh validation, OBJ I/O, built-in meshes."""
import math

import numpy as np
import pytest
import torch

from advcamo.errors import FormatError
from advcamo.geometry import (
    YAW_LABELS,
    CameraPose,
    Mesh,
    build_toy_car,
    build_unit_cube,
    load_obj,
    save_obj,
    toy_car_paint,
)


def test_yaw_labels_are_compass_order():
    assert YAW_LABELS == (
        "north",
        "northeast",
        "east",
        "southeast",
        "south",
        "southwest",
        "west",
        "northwest",
    )
    assert CameraPose(5.0, 45.0, "north").yaw_deg == 0.0
    assert CameraPose(5.0, 45.0, "east").yaw_deg == 90.0
    assert CameraPose(5.0, 45.0, "southwest").yaw_deg == 225.0


def test_pose_validation():
    with pytest.raises(FormatError):
        CameraPose(0.0, 45.0, "north")
    with pytest.raises(FormatError):
        CameraPose(-3.0, 45.0, "north")
    with pytest.raises(FormatError):
        CameraPose(5.0, 0.0, "north")
    with pytest.raises(FormatError):
        CameraPose(5.0, 90.0, "north")
    with pytest.raises(FormatError):
        CameraPose(5.0, 45.0, "up")


def test_eye_position_geometry():
    target = np.array([1.0, 2.0, 0.5])
    for label in YAW_LABELS:
        for dist in (5.0, 10.0):
            for pitch in (22.5, 45.0, 67.5):
                pose = CameraPose(dist, pitch, label)
                eye = pose.eye_position(target)
                # on the sphere of radius dist around the target
                assert np.linalg.norm(eye - target) == pytest.approx(dist, rel=1e-12)
                # elevation angle matches the pitch
                dz = eye[2] - target[2]
                assert math.degrees(math.asin(dz / dist)) == pytest.approx(pitch, rel=1e-9)
    # north looks along +y from the target, so the eye sits north of it
    eye = CameraPose(10.0, 22.5, "north").eye_position(np.zeros(3))
    assert eye[1] > 0 and abs(eye[0]) < 1e-12
    eye = CameraPose(10.0, 22.5, "east").eye_position(np.zeros(3))
    assert eye[0] > 0 and abs(eye[1]) < 1e-12


def test_mesh_validation():
    verts = np.zeros((3, 3))
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    ok = Mesh(verts, uvs, [[(0, 0), (1, 1), (2, 2)]])
    ok.validate()
    with pytest.raises(FormatError):
        Mesh(verts, uvs, np.zeros((0, 3, 2))).validate()
    with pytest.raises(FormatError):
        Mesh(verts, uvs, [[(0, 0), (1, 1), (3, 2)]]).validate()  # vertex oob
    with pytest.raises(FormatError):
        Mesh(verts, uvs, [[(0, 0), (1, 1), (2, 5)]]).validate()  # uv oob
    with pytest.raises(FormatError):
        Mesh(verts, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.5]]),
             [[(0, 0), (1, 1), (2, 2)]]).validate()


def test_mesh_center_is_bbox_center():
    m = Mesh(
        np.array([[0.0, 0.0, 0.0], [2.0, 4.0, 6.0], [1.0, 1.0, 1.0]]),
        np.array([[0.0, 0.0]]),
        [[(0, 0), (1, 0), (2, 0)]],
    )
    assert np.allclose(m.center, [1.0, 2.0, 3.0])


def test_unit_cube():
    cube = build_unit_cube()
    cube.validate()
    assert len(cube.faces) == 12
    # extents are one unit on each axis
    span = cube.vertices.max(axis=0) - cube.vertices.min(axis=0)
    assert np.allclose(span, 1.0)


def test_toy_car_mesh():
    car = build_toy_car()
    car.validate()
    # six boxes (body, cabin, four wheels), twelve triangles each
    assert len(car.faces) == 72
    # wheels touch the ground plane
    assert car.vertices[:, 2].min() == pytest.approx(0.0)
    # about 4.2 m long, car-like proportions
    span = car.vertices.max(axis=0) - car.vertices.min(axis=0)
    assert span[0] == pytest.approx(4.2, abs=0.3)
    assert span[0] > span[1] > 0
    assert np.all(car.uv_coords >= 0.0) and np.all(car.uv_coords <= 1.0)


def test_toy_car_uv_islands_disjoint():
    """Each box face owns its own atlas cell, so UV triangles never share
    area. A cheap proxy: all face-cell bounding boxes are pairwise disjoint
    or identical (two triangles per quad share one cell)."""
    car = build_toy_car()
    rects = []
    for face in car.faces:
        pts = car.uv_coords[face[:, 1]]
        rects.append((pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max()))
    cells = {}
    for (x0, x1, y0, y1) in rects:
        key = (round(x0 * 6 - 0.5 + 1e-6), round(y0 * 6 - 0.5 + 1e-6))
        cells.setdefault(key, 0)
        cells[key] += 1
    # 36 cells, two triangles each
    assert len(cells) == 36
    assert all(v == 2 for v in cells.values())


def test_toy_car_paint():
    paint = toy_car_paint((48, 48))
    assert paint.resolution == (48, 48)
    paint.validate()
    t = paint.texels
    # more than one color in there
    assert len(torch.unique(t.reshape(-1, 3), dim=0)) >= 3


def test_obj_round_trip(tmp_path):
    car = build_toy_car()
    p = tmp_path / "car.obj"
    save_obj(car, p)
    back = load_obj(p)
    back.validate()
    assert np.allclose(back.vertices, car.vertices, atol=1e-6)
    assert np.allclose(back.uv_coords, car.uv_coords, atol=1e-6)
    assert np.array_equal(back.faces, car.faces)


def test_obj_rejects_quads(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
        "f 1/1 2/2 3/3 4/4\n"
    )
    with pytest.raises(FormatError, match="triangular"):
        load_obj(p)


def test_obj_rejects_missing_uv(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(FormatError, match="v/vt"):
        load_obj(p)


def test_obj_error_names_the_line(tmp_path):
    p = tmp_path / "bad2.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n")
    with pytest.raises(FormatError, match=":5:"):
        load_obj(p)
