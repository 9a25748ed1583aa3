"""
Software Rasterizer Core Logic
Deterministic z-buffered rendering of normals, silhouettes and UV-textured
color, with analytic backward passes for texels and vertex positions.
"""

import logging
from dataclasses import dataclass

import numpy as np

from carve.core_io.io_core import ImageKind, ImagePlane
from carve.errors import ShapeMismatchError, ValidationError
from carve.parallel import ordered_map

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 2_000_000
NEAR = 1e-6
GUTTER = 2


# ============================================================================
# TEXTURE ATLAS
# ============================================================================

@dataclass(frozen=True, eq=False)
class TextureAtlas:
    """
    Square RGB texture with one chart rectangle per part.

    texels: (size, size, 3), row 0 is the top (v = 1)
    chart_boxes: tuple of integer texel rectangles (x0, y0, w, h)
    """

    size: int
    texels: np.ndarray
    chart_boxes: tuple = ()

    def __post_init__(self):
        texels = np.clip(np.array(self.texels, dtype=np.float64), 0.0, 1.0)
        if texels.shape != (self.size, self.size, 3):
            raise ShapeMismatchError(
                f"texels have shape {texels.shape}, expected ({self.size}, {self.size}, 3)"
            )
        object.__setattr__(self, "texels", texels)
        object.__setattr__(self, "chart_boxes", tuple(tuple(int(x) for x in b) for b in self.chart_boxes))

    @property
    def channels(self):
        return 3

    @classmethod
    def filled(cls, size, value=0.5, chart_boxes=()):
        return cls(size, np.full((size, size, 3), value, dtype=np.float64), chart_boxes)

    def with_texels(self, texels):
        return TextureAtlas(self.size, texels, self.chart_boxes)

    def check(self):
        is_valid, message = TextureAtlasValidator.validate(self)
        if not is_valid:
            raise ValidationError(message)
        return self


def box_gap(a, b):
    """Texel gap between two (x0, y0, w, h) boxes; negative when they overlap"""
    gap_x = max(b[0] - (a[0] + a[2]), a[0] - (b[0] + b[2]))
    gap_y = max(b[1] - (a[1] + a[3]), a[1] - (b[1] + b[3]))
    return max(gap_x, gap_y)


class TextureAtlasValidator:
    """Validates atlas chart layout"""

    @staticmethod
    def validate(atlas):
        for i, (x0, y0, w, h) in enumerate(atlas.chart_boxes):
            if w < 1 or h < 1:
                return False, f"chart {i} is empty"
            if x0 < 0 or y0 < 0 or x0 + w > atlas.size or y0 + h > atlas.size:
                return False, f"chart {i} leaves the atlas"
        boxes = atlas.chart_boxes
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if box_gap(boxes[i], boxes[j]) < GUTTER:
                    return False, f"charts {i} and {j} are closer than {GUTTER} texels"
        return True, "Atlas is valid"


def bilinear_taps(uv, size):
    """
    Bilinear texel taps with clamp-to-edge addressing

    Texel (row, col) has its center at u = (col + 0.5) / size, v = 1 - (row + 0.5) / size.

    Returns:
        (flat texel indices (P, 4), weights (P, 4))
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    tx = uv[:, 0] * size - 0.5
    ty = (1.0 - uv[:, 1]) * size - 0.5
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = np.clip(x0, 0, size - 1), np.clip(x0 + 1, 0, size - 1)
    ya, yb = np.clip(y0, 0, size - 1), np.clip(y0 + 1, 0, size - 1)
    idx = np.stack([ya * size + xa, ya * size + xb, yb * size + xa, yb * size + xb], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


def sample_atlas(texels, uv):
    size = texels.shape[0]
    idx, w = bilinear_taps(uv, size)
    flat = texels.reshape(-1, texels.shape[2])
    return np.einsum("pk,pkc->pc", w, flat[idx])


# ============================================================================
# FRAME BUNDLE
# ============================================================================

@dataclass(frozen=True, eq=False)
class Coverage:
    """Per covered pixel (sorted by flat pixel index): face, barycentrics, depth"""

    pixels: np.ndarray
    faces: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return len(self.pixels)


@dataclass(frozen=True, eq=False)
class FrameBundle:
    silhouette: ImagePlane
    coverage: Coverage
    normal: ImagePlane = None
    color: ImagePlane = None

    @property
    def height(self):
        return self.silhouette.height

    @property
    def width(self):
        return self.silhouette.width

    def check(self):
        is_valid, message = FrameBundleValidator.validate(self)
        if not is_valid:
            raise ValidationError(message)
        return self


class FrameBundleValidator:
    """Coverage and silhouette consistency"""

    @staticmethod
    def validate(bundle):
        cov = bundle.coverage
        mask = bundle.silhouette.data[:, :, 0].ravel()
        if not np.array_equal(np.flatnonzero(mask > 0.5), cov.pixels):
            return False, "silhouette does not match coverage"
        if len(cov):
            if cov.bary.min() < 0 or np.abs(cov.bary.sum(axis=1) - 1).max() > 1e-6:
                return False, "barycentrics must be non-negative and sum to 1"
            if cov.depth.min() <= 0:
                return False, "depths must be positive"
        return True, "Frame is valid"


# ============================================================================
# RASTERIZATION
# ============================================================================

def _chunk_faces(counts, budget):
    """Split face indices into consecutive runs holding about budget candidates each"""
    bounds = [0]
    total = 0
    for i, c in enumerate(counts.tolist()):
        if total and total + c > budget:
            bounds.append(i)
            total = 0
        total += c
    bounds.append(len(counts))
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def _nearest_per_pixel(pix, depth, face):
    """Keep the closest fragment per pixel; ties go to the lower face index"""
    order = np.lexsort((face, depth, pix))
    pix = pix[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    return order[first]


def rasterize(mesh, camera):
    """
    Visibility pass: one sample per pixel center, no antialiasing

    Returns:
        Coverage with perspective-correct barycentrics
    """
    w, h = camera.width, camera.height
    sx, sy, z = camera.project(mesh.vertices)
    faces = mesh.faces
    fz = z[faces]
    x = sx[faces]
    y = sy[faces]
    area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    usable = np.all(fz > NEAR, axis=1) & (np.abs(area) > 1e-12)

    c0 = np.ceil(x.min(axis=1) - 0.5)
    c1 = np.floor(x.max(axis=1) - 0.5)
    r0 = np.ceil(y.min(axis=1) - 0.5)
    r1 = np.floor(y.max(axis=1) - 0.5)
    c0, c1 = np.clip(c0, 0, w - 1), np.clip(c1, 0, w - 1)
    r0, r1 = np.clip(r0, 0, h - 1), np.clip(r1, 0, h - 1)
    usable &= (c1 >= c0) & (r1 >= r0) & (x.max(axis=1) >= 0) & (x.min(axis=1) <= w)
    usable &= (y.max(axis=1) >= 0) & (y.min(axis=1) <= h)
    fid = np.flatnonzero(usable)
    bw = (c1[fid] - c0[fid] + 1).astype(np.int64)
    bh = (r1[fid] - r0[fid] + 1).astype(np.int64)
    counts = bw * bh

    def run(span):
        lo, hi = span
        f = fid[lo:hi]
        cnt = counts[lo:hi]
        total = int(cnt.sum())
        if total == 0:
            return None
        rep = np.repeat(np.arange(len(f)), cnt)
        local = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        col = c0[f][rep].astype(np.int64) + local % bw[lo:hi][rep]
        row = r0[f][rep].astype(np.int64) + local // bw[lo:hi][rep]
        face = f[rep]
        px = col + 0.5
        py = row + 0.5
        xf, yf = x[face], y[face]
        a = area[face]
        l0 = ((xf[:, 1] - px) * (yf[:, 2] - py) - (xf[:, 2] - px) * (yf[:, 1] - py)) / a
        l1 = ((xf[:, 2] - px) * (yf[:, 0] - py) - (xf[:, 0] - px) * (yf[:, 2] - py)) / a
        l2 = 1.0 - l0 - l1
        lam = np.stack([l0, l1, l2], axis=1)
        inside = np.all(lam >= 0.0, axis=1)
        lam = lam[inside]
        face = face[inside]
        pix = (row * w + col)[inside]
        persp = lam / fz[face]
        inv_depth = persp.sum(axis=1)
        depth = 1.0 / inv_depth
        bary = persp / inv_depth[:, None]
        keep = _nearest_per_pixel(pix, depth, face)
        return pix[keep], depth[keep], face[keep], bary[keep]

    parts = [p for p in ordered_map(run, _chunk_faces(counts, MAX_CANDIDATES)) if p is not None]
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return Coverage(empty, empty, np.zeros((0, 3)), np.zeros(0))
    pix, depth, face, bary = (np.concatenate(c) for c in zip(*parts))
    keep = _nearest_per_pixel(pix, depth, face)
    bary = np.clip(bary[keep], 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return Coverage(pix[keep], face[keep], bary, depth[keep])


# ============================================================================
# VERTEX NORMALS
# ============================================================================

def _scatter(index, values, n):
    """Deterministic scatter-add of (M, k) values into (n, k)"""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty((n, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = np.bincount(index, weights=values[:, k], minlength=n)
    return out


def _normal_terms(vertices, faces):
    """Intermediates of the angle-weighted vertex normal computation"""
    p = vertices[faces]
    c = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    c_len = np.linalg.norm(c, axis=1)
    safe = np.where(c_len > 0, c_len, 1.0)
    c_hat = c / safe[:, None]
    c_hat[c_len == 0] = 0.0

    theta = np.empty((len(faces), 3))
    for j in range(3):
        u = p[:, (j + 1) % 3] - p[:, j]
        w = p[:, (j + 2) % 3] - p[:, j]
        theta[:, j] = np.arctan2(np.linalg.norm(np.cross(u, w), axis=1), np.einsum("ij,ij->i", u, w))

    n = len(vertices)
    acc = np.zeros((n, 3))
    for j in range(3):
        acc += _scatter(faces[:, j], theta[:, j:j + 1] * c_hat, n)
    acc_len = np.linalg.norm(acc, axis=1)
    safe_acc = np.where(acc_len > 0, acc_len, 1.0)
    normals = acc / safe_acc[:, None]
    return {
        "p": p, "c": c, "c_len": c_len, "c_hat": c_hat, "theta": theta,
        "acc_len": acc_len, "normals": normals,
    }


def vertex_normals(vertices, faces):
    """Angle-weighted unit vertex normals"""
    return _normal_terms(np.asarray(vertices, dtype=np.float64), faces)["normals"]


def _interpolate(values, faces, coverage):
    corner = values[faces[coverage.faces]]  # (P, 3, k)
    return np.einsum("pj,pjk->pk", coverage.bary, corner)


def normal_shading(vertices, faces, bundle):
    """
    Encoded pixel normals (n + 1) / 2 at the covered pixels of a frozen coverage

    Args:
        vertices: (N, 3) positions
        faces: (F, 3)
        bundle: FrameBundle or Coverage fixing pixel faces and barycentrics

    Returns:
        (P, 3) encoded normals in coverage order
    """
    coverage = bundle.coverage if isinstance(bundle, FrameBundle) else bundle
    normals = vertex_normals(vertices, faces)
    m = _interpolate(normals, faces, coverage)
    m_len = np.linalg.norm(m, axis=1, keepdims=True)
    return 0.5 * (m / np.where(m_len > 0, m_len, 1.0) + 1.0)


# ============================================================================
# FORWARD
# ============================================================================

def _image(values, pixels, h, w, channels, kind):
    img = np.zeros((h * w, channels))
    img[pixels] = values
    return ImagePlane(img.reshape(h, w, channels), kind)


def render(mesh, camera, atlas=None, normals=True):
    """
    Render one view of a mesh

    Args:
        mesh: TriMesh
        camera: Camera
        atlas: optional TextureAtlas; renders color when given (mesh needs UVs)
        normals: render the encoded normal map

    Returns:
        FrameBundle; background pixels are 0 in every image
    """
    if atlas is not None and mesh.uvs is None:
        raise ValidationError("color rendering needs a mesh with UVs")
    coverage = rasterize(mesh, camera)
    h, w = camera.height, camera.width
    silhouette = _image(np.ones((len(coverage), 1)), coverage.pixels, h, w, 1, ImageKind.SILHOUETTE)

    normal_img = None
    if normals:
        enc = normal_shading(mesh.vertices, mesh.faces, coverage)
        normal_img = _image(enc, coverage.pixels, h, w, 3, ImageKind.NORMAL)

    color_img = None
    if atlas is not None:
        uv = _interpolate(mesh.uvs, mesh.faces, coverage)
        color_img = _image(sample_atlas(atlas.texels, uv), coverage.pixels, h, w, 3, ImageKind.COLOR)

    return FrameBundle(silhouette, coverage, normal_img, color_img)


# ============================================================================
# BACKWARD
# ============================================================================

def _pixel_grad(bundle, grad, name):
    data = grad.data if isinstance(grad, ImagePlane) else np.asarray(grad, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape != (bundle.height, bundle.width, 3):
        raise ShapeMismatchError(
            f"{name} gradient has shape {data.shape}, expected ({bundle.height}, {bundle.width}, 3)"
        )
    return np.asarray(data, dtype=np.float64).reshape(-1, 3)[bundle.coverage.pixels]


def backward_color(bundle, mesh, atlas, d_color):
    """
    Gradient of a loss with respect to the texels, given dL/d(color image)

    Every covered pixel spreads its gradient over its 4 bilinear taps.

    Returns:
        (size, size, 3) texel gradient
    """
    if mesh.uvs is None:
        raise ValidationError("mesh has no UVs")
    g = _pixel_grad(bundle, d_color, "color")
    uv = _interpolate(mesh.uvs, mesh.faces, bundle.coverage)
    idx, w = bilinear_taps(uv, atlas.size)
    n = atlas.size * atlas.size
    out = np.zeros((n, 3))
    for k in range(4):
        out += _scatter(idx[:, k], w[:, k:k + 1] * g, n)
    return out.reshape(atlas.size, atlas.size, 3)


def backward_normal(bundle, mesh, d_normal):
    """
    Gradient with respect to vertex positions, given dL/d(encoded normal image)

    Coverage (pixel faces and barycentrics) is held fixed; the chain runs through
    the per-pixel renormalization, the interpolation and the angle-weighted
    vertex normals.

    Returns:
        (N, 3) vertex position gradient
    """
    g_enc = _pixel_grad(bundle, d_normal, "normal")
    cov = bundle.coverage
    vertices = mesh.vertices
    faces = mesh.faces
    n = len(vertices)
    t = _normal_terms(vertices, faces)
    normals = t["normals"]

    # encoded = (n_hat + 1) / 2
    g_nhat = 0.5 * g_enc
    m = _interpolate(normals, faces, cov)
    m_len = np.linalg.norm(m, axis=1, keepdims=True)
    m_safe = np.where(m_len > 0, m_len, 1.0)
    n_hat = m / m_safe
    g_m = (g_nhat - n_hat * np.einsum("ij,ij->i", n_hat, g_nhat)[:, None]) / m_safe

    # m = sum_k bary_k N[v_k]
    pix_faces = faces[cov.faces]
    g_normals = np.zeros((n, 3))
    for k in range(3):
        g_normals += _scatter(pix_faces[:, k], cov.bary[:, k:k + 1] * g_m, n)

    # N = acc / |acc|
    acc_safe = np.where(t["acc_len"] > 0, t["acc_len"], 1.0)[:, None]
    g_acc = (g_normals - normals * np.einsum("ij,ij->i", normals, g_normals)[:, None]) / acc_safe
    g_acc[t["acc_len"] == 0] = 0.0

    # acc[v] = sum over corners theta * c_hat
    c_hat, theta, p = t["c_hat"], t["theta"], t["p"]
    g_corner = g_acc[faces]  # (F, 3, 3)
    g_chat = np.einsum("fj,fjk->fk", theta, g_corner)
    g_theta = np.einsum("fk,fjk->fj", c_hat, g_corner)

    # c_hat = c / |c|, c = e1 x e2
    c_safe = np.where(t["c_len"] > 0, t["c_len"], 1.0)[:, None]
    g_c = (g_chat - c_hat * np.einsum("ij,ij->i", c_hat, g_chat)[:, None]) / c_safe
    g_c[t["c_len"] == 0] = 0.0
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    g_e1 = np.cross(e2, g_c)
    g_e2 = np.cross(g_c, e1)
    g_p = np.zeros_like(p)
    g_p[:, 1] += g_e1
    g_p[:, 2] += g_e2
    g_p[:, 0] -= g_e1 + g_e2

    # theta_j = atan2(|u x w|, u . w) at corner j
    for j in range(3):
        jn, jp = (j + 1) % 3, (j + 2) % 3
        u = p[:, jn] - p[:, j]
        w = p[:, jp] - p[:, j]
        s = np.linalg.norm(np.cross(u, w), axis=1)
        d = np.einsum("ij,ij->i", u, w)
        denom = s * s + d * d
        ok = (s > 0) & (denom > 0)
        scale = np.where(ok, g_theta[:, j] / np.where(denom > 0, denom, 1.0), 0.0)[:, None]
        g_u = scale * (d[:, None] * np.cross(w, c_hat) - s[:, None] * w)
        g_w = scale * (d[:, None] * np.cross(c_hat, u) - s[:, None] * u)
        g_p[:, jn] += g_u
        g_p[:, jp] += g_w
        g_p[:, j] -= g_u + g_w

    grad = np.zeros((n, 3))
    for j in range(3):
        grad += _scatter(faces[:, j], g_p[:, j], n)
    return grad
