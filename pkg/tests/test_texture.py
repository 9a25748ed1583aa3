import math
from dataclasses import replace

import numpy as np
import pytest

from carve.core_io.io_core import Camera, ImageKind, ImagePlane, TriMesh, ViewTag
from carve.core_io.primitives import icosphere
from carve.errors import ShapeMismatchError, ValidationError
from carve.raster.raster_core import TextureAtlas
from carve.texture.texture_core import (
    INIT_MODES,
    PreparedView,
    TexConfig,
    TexConfigValidator,
    TextureView,
    bake,
    fill_unobserved,
    init_texels,
    make_views,
    psnr,
    recon_loss,
    render_views,
    replace_view,
    tv_loss,
    tv_loss_and_grad,
    view_weight,
)
from carve.unwrap.unwrap_core import AtlasLayout

from .conftest import finite_difference


def front_quad(half=0.6):
    verts = np.array([[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]])
    uvs = (verts[:, :2] / half + 1.0) / 2.0
    return TriMesh(verts, [[0, 1, 2], [0, 2, 3]], uvs=uvs)


def front_camera(size=32, tag=ViewTag.FRONT):
    return Camera((0, 0, 3), (0, 0, 0), width=size, height=size, view_tag=tag)


# ============================================================================
# TOTAL VARIATION
# ============================================================================

def test_tv_of_a_constant_atlas_is_zero():
    loss, grad = tv_loss_and_grad(TextureAtlas.filled(8, 0.4))
    assert loss == 0.0
    assert not grad.any()


def test_tv_of_a_step_edge():
    texels = np.zeros((4, 4, 3))
    texels[:, 2:] = 1.0
    # one unit jump per row and channel, averaged over all 48 entries
    assert tv_loss(texels) == pytest.approx(4 * 3 / 48)


def test_tv_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    texels = rng.uniform(size=(5, 5, 3))
    _, grad = tv_loss_and_grad(texels)
    np.testing.assert_allclose(grad, finite_difference(tv_loss, texels), atol=1e-8)


# ============================================================================
# RECONSTRUCTION
# ============================================================================

def test_constant_color_offset_gives_mse_of_offset_squared():
    mesh = front_quad()
    views = render_views(mesh, TextureAtlas.filled(8, 0.3), [front_camera()])
    assert recon_loss(mesh, TextureAtlas.filled(8, 0.4), views) == pytest.approx(0.01)
    assert recon_loss(mesh, TextureAtlas.filled(8, 0.3), views) == pytest.approx(0.0, abs=1e-24)


def test_side_views_weigh_less():
    mesh = front_quad()
    cam = front_camera(tag=ViewTag.OTHER)
    views = render_views(mesh, TextureAtlas.filled(8, 0.3), [cam])
    assert recon_loss(mesh, TextureAtlas.filled(8, 0.4), views) == pytest.approx(0.2 * 0.01)
    assert view_weight(front_camera(tag=ViewTag.BACK)) == 1.0
    assert view_weight(cam, TexConfig(w_other=0.5)) == 0.5


def test_reconstruction_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    mesh = front_quad()
    target = TextureAtlas(8, rng.uniform(size=(8, 8, 3)))
    view = render_views(mesh, target, [front_camera(16)])[0]
    pv = PreparedView(mesh, view, 8, 1.0)
    texels = rng.uniform(size=(8, 8, 3))
    _, grad = pv.mse_and_grad(texels)
    np.testing.assert_allclose(grad, finite_difference(lambda t: pv.mse_and_grad(t)[0], texels), atol=1e-9)


def test_observed_texels_come_from_visible_pixels():
    mesh = front_quad()
    view = render_views(mesh, TextureAtlas.filled(8, 0.3), [front_camera(32)])[0]
    assert PreparedView(mesh, view, 8, 1.0).observed().all()
    far = render_views(mesh, TextureAtlas.filled(8, 0.3), [Camera((0, 0, 6), (0, 0, 0), width=8, height=8)])[0]
    observed = PreparedView(mesh, far, 64, 1.0).observed()
    assert 0 < observed.sum() < 64 * 64


# ============================================================================
# PSNR
# ============================================================================

def test_psnr_values():
    mask = np.ones((4, 4), dtype=bool)
    a = np.full((4, 4, 3), 0.5)
    assert psnr(a, a, mask) == math.inf
    assert psnr(a + 0.1, a, mask) == pytest.approx(20.0)
    with pytest.raises(ValidationError, match="empty mask"):
        psnr(a, a, np.zeros((4, 4)))
    with pytest.raises(ShapeMismatchError):
        psnr(a, np.zeros((4, 5, 3)), mask)


def test_psnr_only_looks_inside_the_mask():
    a = np.full((2, 2, 3), 0.5)
    b = a.copy()
    b[0, 0] = 0.0
    mask = ImagePlane(np.array([[[0.0], [1.0]], [[1.0], [1.0]]]), ImageKind.SILHOUETTE)
    assert psnr(ImagePlane(a), ImagePlane(b), mask) == math.inf


# ============================================================================
# CONFIGURATION, VIEWS AND FILL
# ============================================================================

@pytest.mark.parametrize("changes, fragment", [
    (dict(iters=-1), "iters"),
    (dict(lr=0.0), "lr"),
    (dict(lambda_tv=-0.1), "lambda_tv"),
    (dict(w_other=-1.0), "weights"),
    (dict(init="noise"), "init"),
    (dict(atlas_size=0), "atlas_size"),
])
def test_config_validator(changes, fragment):
    is_valid, message = TexConfigValidator.validate(replace(TexConfig(), **changes))
    assert not is_valid
    assert fragment in message


def test_init_modes():
    assert INIT_MODES == ("zero", "mid-gray", "uniform")
    assert not init_texels(4, TexConfig(init="zero")).any()
    np.testing.assert_array_equal(init_texels(4, TexConfig(init="mid-gray")), 0.5)
    a = init_texels(4, TexConfig(init="uniform", seed=2))
    np.testing.assert_array_equal(a, init_texels(4, TexConfig(init="uniform", seed=2)))
    assert not np.array_equal(a, init_texels(4, TexConfig(init="uniform", seed=3)))
    assert 0.0 <= a.min() and a.max() <= 1.0


def test_view_bookkeeping():
    cams = [front_camera(8), front_camera(8, ViewTag.OTHER)]
    image = ImagePlane(np.zeros((8, 8, 3)))
    mask = ImagePlane(np.ones((8, 8, 1)), ImageKind.SILHOUETTE)
    views = make_views(cams, [image, image], [mask, mask])
    with pytest.raises(ValidationError):
        make_views(cams, [image], [mask, mask])
    with pytest.raises(ShapeMismatchError):
        TextureView(cams[0], ImagePlane(np.zeros((4, 8, 3))), mask).check()

    edited = ImagePlane(np.full((8, 8, 3), 0.9))
    swapped = replace_view(views, 1, edited)
    assert swapped[1].image is edited
    assert views[1].image is image
    with pytest.raises(ValidationError, match="out of range"):
        replace_view(views, 2, edited)


def test_fill_stays_inside_each_chart():
    texels = np.zeros((8, 8, 3))
    observed = np.zeros((8, 8), dtype=bool)
    texels[1, 1] = 0.8
    observed[1, 1] = True
    boxes = ((0, 0, 4, 4), (4, 4, 4, 4))
    out, filled = fill_unobserved(texels, observed, boxes)
    assert filled == 15
    np.testing.assert_allclose(out[:4, :4], 0.8)
    assert not out[4:, 4:].any()
    assert not out[:4, 4:].any()


# ============================================================================
# BAKING
# ============================================================================

def test_zero_iterations_keep_the_initial_atlas():
    mesh = front_quad()
    views = render_views(mesh, TextureAtlas.filled(8, 0.2), [front_camera(16)])
    atlas, report = bake(mesh, views, TexConfig(iters=0, atlas_size=8))
    np.testing.assert_array_equal(atlas.texels, 0.5)
    assert report.losses == []
    assert report.filled_texels == 0
    assert [s['type'] for s in report.steps] == ['init', 'complete']


def test_bake_needs_uvs_and_views():
    with pytest.raises(ValidationError, match="UVs"):
        bake(icosphere(1), [], TexConfig(iters=1))
    with pytest.raises(ValidationError, match="at least one view"):
        bake(front_quad(), [], TexConfig(iters=1, atlas_size=8))


def test_bake_recovers_a_pattern_seen_head_on():
    mesh = front_quad()
    ys, xs = np.mgrid[0:16, 0:16] / 15.0
    truth = np.stack([0.2 + 0.6 * xs, 0.2 + 0.6 * ys, np.full_like(xs, 0.5)], axis=-1)
    rig = [front_camera(48), front_camera(48, ViewTag.BACK)]
    views = render_views(mesh, TextureAtlas(16, truth), rig)
    layout = AtlasLayout(16, 0, ((0, 0, 16, 16),), (0,))
    atlas, report = bake(mesh, views, TexConfig(iters=300, lr=0.01, lambda_tv=0.001, record_every=100), layout)
    assert report.losses[-1] < 0.05 * report.losses[0]
    assert all(v["psnr"] is None or v["psnr"] > 30.0 for v in report.view_psnr)
    assert [v["tag"] for v in report.view_psnr] == ["front", "back"]
    assert report.observed_fraction == 1.0
    assert atlas.chart_boxes == ((0, 0, 16, 16),)
    assert [s['type'] for s in report.steps] == ['init', 'iterate', 'iterate', 'iterate', 'complete']


def test_psnr_uses_the_same_pixels_as_the_loss():
    mesh = front_quad(0.3)
    cam = front_camera(32)
    rendered = render_views(mesh, TextureAtlas.filled(8, 0.3), [cam])[0]
    covered = rendered.mask.mask()
    image = np.where(covered[:, :, None], rendered.image.data, 1.0)
    full = ImagePlane(np.ones((32, 32, 1)), ImageKind.SILHOUETTE)
    view = TextureView(cam, ImagePlane(image, ImageKind.COLOR), full)
    assert not covered.all()
    np.testing.assert_array_equal(PreparedView(mesh, view, 8, 1.0).loss_mask(), covered)
    _, report = bake(mesh, [view], TexConfig(iters=200, lr=0.01, lambda_tv=0.0, atlas_size=8))
    assert report.view_psnr[0]["exact"] or report.view_psnr[0]["psnr"] > 30.0


def test_doubling_a_view_weight_doubles_its_contribution():
    mesh = front_quad()
    views = render_views(mesh, TextureAtlas.filled(8, 0.3), [front_camera(tag=ViewTag.OTHER)])
    atlas = TextureAtlas.filled(8, 0.45)
    single = recon_loss(mesh, atlas, views, TexConfig(w_other=0.2))
    double = recon_loss(mesh, atlas, views, TexConfig(w_other=0.4))
    assert single > 0.0
    assert double == 2.0 * single


def test_huge_tv_weight_gives_a_flat_atlas():
    mesh = front_quad()
    ys, xs = np.mgrid[0:16, 0:16] / 15.0
    truth = np.stack([0.2 + 0.6 * xs, 0.2 + 0.6 * ys, np.full_like(xs, 0.5)], axis=-1)
    views = render_views(mesh, TextureAtlas(16, truth), [front_camera(48)])
    layout = AtlasLayout(16, 0, ((0, 0, 16, 16),), (0,))
    flat, _ = bake(mesh, views, TexConfig(iters=100, lr=0.01, lambda_tv=1e6), layout)
    sharp, _ = bake(mesh, views, TexConfig(iters=100, lr=0.01, lambda_tv=0.0), layout)
    assert flat.texels.std(axis=(0, 1)).max() < 0.05
    assert sharp.texels.std(axis=(0, 1)).max() > 0.1
