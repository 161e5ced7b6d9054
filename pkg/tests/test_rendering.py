"""Rasterizer and differentiable texture lookup."""
import numpy as np
import pytest
import torch

from advcamo.errors import DegeneratePose, ShapeMismatch
from advcamo.geometry import CameraPose, build_toy_car, build_unit_cube, toy_car_paint
from advcamo.rendering import (
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
from advcamo.texture import TextureMap


def _sample(uv_map, mask, background, sid="s"):
    return SceneSample(
        sample_id=sid,
        background=background,
        uv_map=uv_map,
        mask=mask,
        pose=CameraPose(5.0, 45.0, "north"),
    )


def test_rasterize_cube_basic():
    uv, mask = rasterize_uv(build_unit_cube(), CameraPose(3.0, 45.0, "north"), (64, 64))
    assert uv.shape == (64, 64, 2) and uv.dtype == np.float64
    assert mask.shape == (64, 64) and mask.dtype == bool
    assert mask.any(), "cube should be visible from the ring"
    assert not mask.all(), "cube should not fill the frame at 3 m"
    # uv zero outside the mask, inside [0,1] on it
    assert np.all(uv[~mask] == 0.0)
    assert uv[mask].min() >= 0.0 and uv[mask].max() <= 1.0
    # silhouette is centered-ish: mask centroid within the middle third
    ys, xs = np.nonzero(mask)
    assert 64 / 3 < ys.mean() < 128 / 3
    assert 64 / 3 < xs.mean() < 128 / 3


def test_rasterize_car_all_ring_poses(car_mesh):
    from advcamo.geometry import YAW_LABELS

    for yaw in YAW_LABELS:
        uv, mask = rasterize_uv(car_mesh, CameraPose(10.0, 22.5, yaw), (96, 96))
        assert mask.sum() > 50, f"car invisible from {yaw}"


def test_rasterize_closer_means_bigger(car_mesh):
    _, near = rasterize_uv(car_mesh, CameraPose(5.0, 22.5, "east"), (96, 96))
    _, far = rasterize_uv(car_mesh, CameraPose(10.0, 22.5, "east"), (96, 96))
    assert near.sum() > far.sum() * 1.5


def test_rasterize_degenerate_pose():
    # a mesh far below pixel scale covers no pixel center
    speck = build_unit_cube()
    speck.vertices = speck.vertices * 1e-6
    with pytest.raises(DegeneratePose):
        rasterize_uv(speck, CameraPose(5.0, 45.0, "north"), (32, 32))


def test_rasterize_deterministic(car_mesh):
    pose = CameraPose(5.0, 45.0, "southwest")
    uv1, m1 = rasterize_uv(car_mesh, pose, (64, 64))
    uv2, m2 = rasterize_uv(car_mesh, pose, (64, 64))
    assert np.array_equal(uv1, uv2) and np.array_equal(m1, m2)


def test_render_composites_over_background():
    uv = torch.zeros(4, 4, 2)
    mask = torch.zeros(4, 4, dtype=torch.bool)
    mask[1, 1] = True
    uv[1, 1] = torch.tensor([0.0, 0.0])
    bg = torch.full((4, 4, 3), 0.25)
    tex = TextureMap(torch.ones(8, 8, 3))
    out = render(_sample(uv, mask, bg), tex)
    assert out.shape == (4, 4, 3)
    assert torch.allclose(out[1, 1], torch.ones(3))
    off = out[~mask]
    assert torch.allclose(off, torch.full_like(off, 0.25))


def test_render_bilinear_midpoint():
    """u halfway between texel columns 0 and 1 blends them equally."""
    tex = torch.zeros(2, 2, 3)
    tex[:, 1, :] = 1.0  # right column white
    uv = torch.zeros(1, 1, 2)
    uv[0, 0, 0] = 0.5  # x = u*(W-1) = 0.5
    uv[0, 0, 1] = 0.0
    mask = torch.ones(1, 1, dtype=torch.bool)
    out = render(_sample(uv, mask, torch.zeros(1, 1, 3)), TextureMap(tex))
    assert torch.allclose(out[0, 0], torch.full((3,), 0.5))


def test_render_gradient_only_into_referenced_texels():
    uv = torch.zeros(2, 2, 2)
    mask = torch.zeros(2, 2, dtype=torch.bool)
    mask[0, 0] = True
    uv[0, 0] = torch.tensor([0.0, 0.0])  # exactly texel (0,0)
    tex = TextureMap(torch.rand(4, 4, 3))
    tex.texels.requires_grad_(True)
    out = render(_sample(uv, mask, torch.zeros(2, 2, 3)), tex)
    out.sum().backward()
    g = tex.texels.grad
    assert g is not None
    assert torch.all(g[0, 0] == 1.0)
    rest = g.clone()
    rest[0, 0] = 0.0
    assert torch.all(rest == 0.0)


def test_render_shape_mismatch():
    uv = torch.zeros(4, 4, 2)
    mask = torch.zeros(3, 3, dtype=torch.bool)
    bg = torch.zeros(4, 4, 3)
    sample = SceneSample("x", bg, uv, mask, CameraPose(5.0, 45.0, "north"))
    with pytest.raises(ShapeMismatch):
        render(sample, TextureMap(torch.rand(4, 4, 3)))


def test_image_png_round_trip(tmp_path):
    img = torch.rand(9, 7, 3)
    p = tmp_path / "img.png"
    save_image_png(img, p)
    back = load_image_png(p)
    assert back.shape == (9, 7, 3)
    assert (back - img).abs().max() <= 1.0 / 510 + 1e-6


def test_mask_png_round_trip(tmp_path):
    mask = torch.rand(16, 16) > 0.5
    p = tmp_path / "m.png"
    save_mask_png(mask, p)
    back = load_mask_png(p)
    assert back.dtype == torch.bool
    assert torch.equal(back, mask)


def test_uv_png_round_trip(tmp_path):
    uv = torch.rand(12, 10, 2)
    p = tmp_path / "uv.png"
    save_uv_png(uv, p)
    back = load_uv_png(p)
    assert back.shape == (12, 10, 2)
    # 16-bit storage keeps better than 1e-4 absolute error
    assert (back - uv).abs().max() < 1.0 / 65535 + 1e-9


def test_full_scene_render(car_mesh):
    uv, mask = rasterize_uv(car_mesh, CameraPose(5.0, 22.5, "north"), (96, 96))
    paint = toy_car_paint((64, 64))
    sample = SceneSample(
        sample_id="full",
        background=torch.zeros(96, 96, 3),
        uv_map=torch.from_numpy(uv),
        mask=torch.from_numpy(mask),
        pose=CameraPose(5.0, 22.5, "north"),
    )
    img = render(sample, paint)
    assert img.shape == (96, 96, 3)
    fg = img[sample.mask]
    assert fg.max() > 0.1  # painted pixels present
