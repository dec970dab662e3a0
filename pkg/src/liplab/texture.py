"""Texture-code channels: LBP, gradient-weighted LBP, and the 5-channel
input stack.

The local binary pattern of a pixel compares it against ``neighbors``
points sampled on a circle of ``radius`` pixels:

    code(c) = sum_{i=1..P} 2^(i-1) * step(I(g_i) - I(g_c))

with neighbor i at (x_c + R cos(2 pi i / P), y_c + R sin(2 pi i / P));
``step`` is 1 for arguments >= 0 (ties count as "not darker").  The
gradient-weighted variant multiplies each term by the magnitude of a
normalized gradient-product field sampled at the same neighbor location,
so high-gradient boundary pixels dominate the response.

Non-integer neighbor coordinates are resolved by bilinear interpolation
(default) or nearest-pixel lookup; coordinates are clamped to the image
border first, keeping the output the same size as the input.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .imagio import to_grayscale
from .validation import check_gray_image, check_rgb_image

SAMPLING_MODES = ("nearest", "bilinear")


@dataclass
class LbpParams:
    """Circular sampling parameters shared by lbp() and glbp()."""

    neighbors: int = 8
    radius: float = 1.0
    sampling: str = "bilinear"

    def __post_init__(self):
        if self.neighbors < 4:
            raise ValueError(f"neighbors must be >= 4, got {self.neighbors}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")


@dataclass
class GradientField:
    """Horizontal/vertical gradients and their normalized product."""

    gx: np.ndarray
    gy: np.ndarray
    gc: np.ndarray  # gx*gy / max|gx*gy|, zero for a constant image


def _neighbor_offsets(params):
    i = np.arange(1, params.neighbors + 1, dtype=np.float64)
    angles = 2.0 * np.pi * i / params.neighbors
    return params.radius * np.cos(angles), params.radius * np.sin(angles)


def _sample(plane, xs, ys, sampling):
    """Sample ``plane`` at float coordinates, clamped to the border."""
    h, w = plane.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    if sampling == "nearest":
        return plane[np.round(ys).astype(np.intp), np.round(xs).astype(np.intp)]
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    # incremental form: exact at both endpoints and on constant planes
    top = plane[y0, x0] + fx * (plane[y0, x1] - plane[y0, x0])
    bot = plane[y1, x0] + fx * (plane[y1, x1] - plane[y1, x0])
    return top + fy * (bot - top)


def _check_texture_size(gray, params):
    need = int(2 * np.ceil(params.radius) + 1)
    if gray.shape[0] < need or gray.shape[1] < need:
        raise ValueError(
            f"image {gray.shape} too small for radius {params.radius} (needs >= {need}x{need})"
        )


def lbp(gray, params=None):
    """Per-pixel LBP codes of a single-channel image, as float32 (H, W).

    Codes lie in [0, 2**neighbors - 1]; they are exact integers for up
    to 24 neighbors.
    """
    params = params or LbpParams()
    g = check_gray_image(gray, min_size=3).astype(np.float64)
    _check_texture_size(g, params)
    h, w = g.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = _neighbor_offsets(params)
    codes = np.zeros((h, w), dtype=np.float64)
    for i in range(params.neighbors):
        sampled = _sample(g, xs + dx[i], ys + dy[i], params.sampling)
        codes += float(2 ** i) * (sampled - g >= 0.0)
    return codes.astype(np.float32)


def _sobel64(g):
    """3x3 Sobel gradients of a float64 plane with edge replication.
    Returns float64 (gx, gy, gc) where gc = gx*gy / max|gx*gy| (all
    zeros when the max is 0)."""
    p = np.pad(g, 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    prod = gx * gy
    peak = np.abs(prod).max()
    gc = prod / peak if peak > 0.0 else np.zeros_like(prod)
    return gx, gy, gc


def gradients(gray):
    """3x3 Sobel gradients with edge replication, plus the normalized
    product field gc = gx*gy / max|gx*gy| (all zeros when the max is 0)."""
    g = check_gray_image(gray, min_size=3).astype(np.float64)
    gx, gy, gc = _sobel64(g)
    return GradientField(
        gx=gx.astype(np.float32), gy=gy.astype(np.float32), gc=gc.astype(np.float32)
    )


def glbp(gray, params=None, field=None):
    """Gradient-weighted LBP: each neighbor term is scaled by |gc| sampled
    at the neighbor's coordinates.  Real-valued, in [0, 2**neighbors - 1]."""
    params = params or LbpParams()
    g = check_gray_image(gray, min_size=3).astype(np.float64)
    _check_texture_size(g, params)
    if field is None:
        # internal float64 path: a float32 round-trip through the public
        # field type would perturb the weighted codes by up to ~1e-5
        _, _, gc = _sobel64(g)
    else:
        gc = np.asarray(field.gc, dtype=np.float64)
    if gc.shape != g.shape:
        raise ValueError(f"gradient field {gc.shape} does not match image {g.shape}")
    h, w = g.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = _neighbor_offsets(params)
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(params.neighbors):
        sx = xs + dx[i]
        sy = ys + dy[i]
        bit = (_sample(g, sx, sy, params.sampling) - g) >= 0.0
        out += float(2 ** i) * bit * np.abs(_sample(gc, sx, sy, params.sampling))
    return out.astype(np.float32)


def build_input(rgb, params=None):
    """Stack [R, G, B, LBP, GLBP] into an (H, W, 5) float32 tensor.

    RGB planes are divided by 255, LBP by its maximum code, and the GLBP
    plane is min-max normalized per image (a constant plane maps to all
    zeros), so every channel lies in [0, 1].
    """
    params = params or LbpParams()
    img = check_rgb_image(rgb)
    gray = to_grayscale(img)
    codes = lbp(gray, params).astype(np.float64)
    weighted = glbp(gray, params).astype(np.float64)

    planes = np.empty(img.shape[:2] + (5,), dtype=np.float32)
    planes[:, :, :3] = img / 255.0
    planes[:, :, 3] = codes / float(2 ** params.neighbors - 1)
    lo, hi = weighted.min(), weighted.max()
    if hi > lo:
        planes[:, :, 4] = (weighted - lo) / (hi - lo)
    else:
        planes[:, :, 4] = 0.0
    return planes


class TextureInputBuilder(BaseEstimator, TransformerMixin):
    """Stateless transformer from RGB images to 5-channel texture stacks.

    Accepts a single (H, W, 3) image, an (N, H, W, 3) batch, or a list of
    images, and returns the matching arrangement of (H, W, 5) float32
    stacks.  Composes with sklearn pipelines; fit() is a no-op.
    """

    def __init__(self, neighbors=8, radius=1.0, sampling="bilinear"):
        self.neighbors = neighbors
        self.radius = radius
        self.sampling = sampling

    def _params(self):
        return LbpParams(self.neighbors, self.radius, self.sampling)

    def fit(self, X, y=None):
        self._params()  # validate early
        return self

    def transform(self, X):
        params = self._params()
        if isinstance(X, (list, tuple)):
            return [build_input(img, params) for img in X]
        arr = np.asarray(X)
        if arr.ndim == 3:
            return build_input(arr, params)
        if arr.ndim == 4:
            return np.stack([build_input(img, params) for img in arr])
        raise ValueError(f"expected (H, W, 3) or (N, H, W, 3), got shape {arr.shape}")
