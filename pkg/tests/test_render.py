import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from styledistill.render.camera import Camera, CameraError, CameraPolicy, orbit_cameras, sample_camera
from styledistill.render.io import export_turntable, load_png, load_scene, save_png, save_scene
from styledistill.render.scenes import Canvas2D, RadianceGrid
from styledistill.render.volume import (BACKGROUND, UnsupportedModeError, composite_weights, render,
                                        render_normals)

F64 = torch.float64


def random_grid(n=4, seed=0, scale=2.0, dtype=F64):
    g = torch.Generator().manual_seed(seed)
    return RadianceGrid(n, dtype=dtype,
                        density_logits=torch.randn(n, n, n, generator=g, dtype=dtype) * scale,
                        color_logits=torch.randn(3, n, n, n, generator=g, dtype=dtype))


# ---------------------------------------------------------------- canvas
def test_canvas_render_range_and_gradient():
    c = Canvas2D(8, init=torch.randn(3, 8, 8) * 5)
    img = render(c, Camera())  # camera ignored
    assert img.shape == (3, 8, 8) and img.min() > 0 and img.max() < 1
    img.sum().backward()
    assert torch.isfinite(c.logits.grad).all() and (c.logits.grad != 0).all()
    with pytest.raises(UnsupportedModeError):
        render_normals(c, Camera())


# ---------------------------------------------------------------- grid rendering
def test_empty_grid_renders_background_exactly():
    n = 4
    grid = RadianceGrid(n, dtype=F64, density_logits=torch.full((n, n, n), -math.inf, dtype=F64))
    for cam in orbit_cameras(3, resolution=8):
        img = render(grid, cam)
        assert torch.equal(img, torch.tensor(BACKGROUND, dtype=F64).view(3, 1, 1).expand_as(img))


def test_grid_requires_camera():
    with pytest.raises(CameraError):
        render(RadianceGrid(4))


def test_opaque_voxel_on_central_ray():
    n = 5
    dens = torch.full((n, n, n), -math.inf, dtype=F64)
    dens[2, 2, 2] = 1e5
    color = torch.tensor([2.0, -1.0, 0.5], dtype=F64).view(3, 1, 1, 1).expand(3, n, n, n)
    grid = RadianceGrid(n, dtype=F64, density_logits=dens, color_logits=color)
    cam = Camera(azimuth=0.0, elevation=0.0, resolution=9, fov=40.0)
    res = render(grid, cam, return_aux=True, num_samples=256)
    centre = res.image[:, 4, 4]
    assert torch.allclose(centre, torch.sigmoid(color[:, 0, 0, 0]), atol=1e-3)
    assert res.alpha[4, 4] > 1 - 1e-3
    assert res.alpha[0, 0] == 0.0  # corner rays miss the voxel's support


def test_finite_difference_gradients_4cubed():
    grid = random_grid(4, seed=1)
    cam = Camera(azimuth=37.0, elevation=21.0, resolution=6)
    w = torch.randn(3, 6, 6, generator=torch.Generator().manual_seed(2), dtype=F64)

    def loss():
        return (render(grid, cam, num_samples=32) * w).sum()

    grid.zero_grad()
    loss().backward()
    for p in (grid.density_logits, grid.color_logits):
        analytic = p.grad.clone()
        fd = torch.zeros_like(p)
        h = 1e-6
        flat, fdf = p.data.view(-1), fd.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss().item()
                flat[i] = old - h
                dn = loss().item()
                flat[i] = old
                fdf[i] = (up - dn) / (2 * h)
        assert fd.norm() > 0
        assert (analytic - fd).norm() / fd.norm() < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 20.0), st.floats(0, 360), st.floats(-10, 45))
def test_weights_nonnegative_and_bounded(seed, scale, az, el):
    grid = random_grid(4, seed, scale)
    res = render(grid, Camera(azimuth=az, elevation=el, resolution=6), return_aux=True)
    assert (res.weights >= 0).all()
    assert (res.weights.sum(1) <= 1 + 1e-12).all()
    assert res.image.min() >= 0 and res.image.max() <= 1


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=20), st.floats(1e-3, 1.0))
def test_composite_weights_property(sigmas, delta):
    s = torch.tensor([sigmas], dtype=F64)
    w = composite_weights(s, torch.full_like(s, delta))
    assert (w >= 0).all() and w.sum() <= 1 + 1e-12


def test_render_deterministic_and_gradient_flows():
    grid = random_grid(6, seed=3, dtype=torch.float32)
    cam = Camera(azimuth=10.0, resolution=8)
    a, b = render(grid, cam), render(grid, cam)
    assert torch.equal(a, b)
    a.sum().backward()
    for name, p in grid.named_parameters():
        assert p.grad.abs().max() > 0, name


def test_jitter_is_seeded():
    grid = random_grid(4, seed=4)
    cam = Camera(resolution=6)
    a = render(grid, cam, jitter=torch.Generator().manual_seed(0))
    b = render(grid, cam, jitter=torch.Generator().manual_seed(0))
    c = render(grid, cam, jitter=torch.Generator().manual_seed(1))
    assert torch.equal(a, b) and not torch.equal(a, c)


# ---------------------------------------------------------------- normals
def test_uniform_density_gives_neutral_normals():
    n = 6
    grid = RadianceGrid(n, dtype=F64, density_logits=torch.full((n, n, n), 3.0, dtype=F64))
    normals, fg = render_normals(grid, Camera(azimuth=20.0, resolution=8))
    assert not fg.any() and torch.equal(normals, torch.zeros_like(normals))


def test_step_density_normals_face_minus_x():
    n = 16
    c = torch.linspace(-1, 1, n, dtype=F64)
    _, _, x = torch.meshgrid(c, c, c, indexing="ij")
    dens = torch.where(x > 0, torch.tensor(8.0, dtype=F64), torch.tensor(-math.inf, dtype=F64))
    grid = RadianceGrid(n, dtype=F64, density_logits=dens)
    cam = Camera(azimuth=180.0, elevation=0.0, resolution=12, fov=20.0)  # on the -x side
    normals, fg = render_normals(grid, cam)
    assert fg.sum() > 50
    v = normals[:, fg].T
    assert torch.allclose(v.norm(dim=1), torch.ones(len(v), dtype=F64), atol=1e-4)
    cos = (v @ torch.tensor([-1.0, 0.0, 0.0], dtype=F64)).clamp(-1, 1)
    assert torch.rad2deg(torch.acos(cos)).max() < 5.0


def test_foreground_normals_unit_length():
    grid = RadianceGrid.blob(12, dtype=F64)
    normals, fg = render_normals(grid, Camera(azimuth=50.0, elevation=30.0, resolution=10))
    assert fg.any()
    assert torch.allclose(normals[:, fg].norm(dim=0), torch.ones(int(fg.sum()), dtype=F64), atol=1e-4)
    assert (normals[:, ~fg] == 0).all()


# ---------------------------------------------------------------- cameras
def test_sample_camera_uniform_azimuth_and_bounds():
    rng = np.random.default_rng(1)
    cams = [sample_camera(rng) for _ in range(10_000)]
    az = np.array([c.azimuth for c in cams])
    el = np.array([c.elevation for c in cams])
    counts, _ = np.histogram(az, bins=36, range=(0, 360))
    assert stats.chisquare(counts).pvalue > 0.01
    assert el.min() >= -10 and el.max() <= 45


def test_sample_camera_deterministic_and_errors():
    a = [sample_camera(np.random.default_rng(5)) for _ in range(1)]
    b = [sample_camera(np.random.default_rng(5)) for _ in range(1)]
    assert a == b
    with pytest.raises(CameraError):
        sample_camera(np.random.default_rng(0), CameraPolicy(elevation_range=(10.0, 0.0)))
    with pytest.raises(CameraError):
        Camera(radius=0.0)


def test_camera_rays_unit_and_centered():
    cam = Camera(azimuth=90.0, elevation=0.0, resolution=5)
    o, d = cam.rays(F64)
    assert torch.allclose(d.norm(dim=1), torch.ones(25, dtype=F64))
    centre = d[12]
    expect = -torch.from_numpy(cam.position()) / np.linalg.norm(cam.position())
    assert torch.allclose(centre, expect, atol=1e-9)


# ---------------------------------------------------------------- io
def test_scene_checkpoint_roundtrip(tmp_path):
    grid = random_grid(4, seed=6, dtype=torch.float32)
    save_scene(grid, tmp_path / "s.pt", iteration=7, prompt="cube")
    loaded, blob = load_scene(tmp_path / "s.pt")
    assert blob["iteration"] == 7 and blob["meta"]["prompt"] == "cube"
    assert torch.equal(loaded.density_logits, grid.density_logits)
    canvas = Canvas2D(8, init=torch.randn(3, 8, 8))
    save_scene(canvas, tmp_path / "c.pt")
    assert torch.equal(load_scene(tmp_path / "c.pt")[0].logits, canvas.logits)


def test_png_roundtrip_and_turntable(tmp_path):
    img = torch.rand(3, 8, 8)
    save_png(img, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    assert (back - img).abs().max() <= 0.5 / 255 + 1e-6
    strip = export_turntable(RadianceGrid.blob(8), tmp_path / "tt", n_views=4, resolution=8)
    assert load_png(strip).shape == (3, 8, 32)
    assert (tmp_path / "tt" / "turntable.gif").exists()
