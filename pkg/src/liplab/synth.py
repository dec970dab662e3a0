"""Synthetic upper-lip image generator and data augmentation.

The lip outline is a closed piecewise-cubic curve through 11 anchor
points: 7 on the vermilion border (commissures, mid-slope points,
cupid's-bow peaks, and the bow dip) and 4 along the mouth line.  Tangents
follow a cardinal-spline rule except at the commissures and the bow dip,
which are corner points with one-sided tangents, so the bow keeps its
characteristic V shape.  The same curve family, evaluated at canonical
shape parameters, serves as the mask-generation template, which is what
makes template-based masks agree closely with generated ground truth.

Ground truth masks are rasterized from the exact dense contour, not from
the sparse landmarks, so they are correct by construction.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GeometryError
from .imagio import LandmarkSet, to_grayscale
from .maskgen import TemplateContour, rasterize

ANCHOR_NAMES = [
    "ch_l", "val_l", "cp_l", "ls", "cp_r", "val_r", "ch_r",
    "low_r", "low_mr", "sto", "low_l",
]
# tangent breaks: mouth corners and the bow dip
_CORNERS = (0, 3, 6)
_TENSION = 0.55
_SAMPLES_PER_SEGMENT = 16


def lip_anchors(width=44.0, height=18.0, bow_depth=2.8, droop=1.2):
    """Anchor coordinates in local lip coordinates (origin mid-lip, y down).

    Order follows ANCHOR_NAMES: along the vermilion border left to right,
    then back along the mouth line right to left.
    """
    w2 = width / 2.0
    h_up = 0.55 * height
    h_lo = 0.45 * height
    lo_span = h_lo - droop
    return np.array([
        [-w2, droop],                                  # ch_l
        [-0.62 * w2, -0.62 * h_up + 0.4 * droop],      # val_l
        [-0.24 * w2, -h_up],                           # cp_l
        [0.0, -h_up + bow_depth],                      # ls
        [0.24 * w2, -h_up],                            # cp_r
        [0.62 * w2, -0.62 * h_up + 0.4 * droop],       # val_r
        [w2, droop],                                   # ch_r
        [0.64 * w2, droop + 0.55 * lo_span],           # low_r
        [0.30 * w2, droop + 0.93 * lo_span],           # low_mr
        [0.0, h_lo],                                   # sto
        [-0.60 * w2, droop + 0.60 * lo_span],          # low_l
    ])


def lip_contour(anchors, samples_per_segment=_SAMPLES_PER_SEGMENT, tension=_TENSION):
    """Dense closed polyline through the anchors.

    Piecewise cubic Hermite; anchor k sits at vertex k * samples_per_segment.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    n = len(anchors)
    scale = 1.0 - tension
    tangents = np.empty_like(anchors)
    for i in range(n):
        tangents[i] = scale * 0.5 * (anchors[(i + 1) % n] - anchors[i - 1])

    t = np.arange(samples_per_segment) / samples_per_segment
    h00 = 2 * t ** 3 - 3 * t ** 2 + 1
    h10 = t ** 3 - 2 * t ** 2 + t
    h01 = -2 * t ** 3 + 3 * t ** 2
    h11 = t ** 3 - t ** 2

    pieces = []
    for i in range(n):
        j = (i + 1) % n
        chord = anchors[j] - anchors[i]
        m0 = scale * chord if i in _CORNERS else tangents[i]
        m1 = scale * chord if j in _CORNERS else tangents[j]
        pieces.append(
            h00[:, None] * anchors[i] + h10[:, None] * m0
            + h01[:, None] * anchors[j] + h11[:, None] * m1
        )
    return np.concatenate(pieces, axis=0)


def canonical_template():
    """TemplateContour of the canonical lip shape (what ships as package data)."""
    contour = lip_contour(lip_anchors())
    idx = np.arange(len(ANCHOR_NAMES)) * _SAMPLES_PER_SEGMENT
    return TemplateContour(contour, idx, list(ANCHOR_NAMES))


# ---------------------------------------------------------------------------
# image synthesis
# ---------------------------------------------------------------------------

@dataclass
class LipShapeParams:
    """Shape and rendering parameters for one synthetic batch."""

    canvas: tuple = (64, 64)          # (height, width)
    center: tuple = (31.5, 34.0)      # (x, y) of the lip midpoint
    width: float = 44.0
    height: float = 18.0
    bow_depth: float = 2.8
    droop: float = 1.2
    skin_rgb: tuple = (201, 163, 143)
    lip_rgb: tuple = (156, 63, 72)
    noise_sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        skin = to_grayscale(np.array([[self.skin_rgb]], dtype=np.float64))[0, 0]
        lip = to_grayscale(np.array([[self.lip_rgb]], dtype=np.float64))[0, 0]
        if abs(skin - lip) < 10.0:
            raise ValueError("skin and lip tones must differ by >= 10 gray levels")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


class SynthSample(NamedTuple):
    image: np.ndarray       # (H, W, 3) uint8
    landmarks: LandmarkSet
    mask: np.ndarray        # (H, W) uint8 in {0, 1}


def _render(canvas, contour, skin_rgb, lip_rgb, noise_sigma, rng):
    h, w = canvas
    mask = rasterize(contour, h, w)
    img = np.empty((h, w, 3), dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    # gentle horizontal sweep on skin, vertical sheen on the lip body
    skin_shade = 1.0 + 0.04 * np.cos(np.pi * cols / max(w - 1, 1))
    img[:] = np.asarray(skin_rgb, dtype=np.float64) * skin_shade[None, :, None]
    ys = contour[:, 1]
    y0, y1 = ys.min(), ys.max()
    v = np.clip((rows - y0) / max(y1 - y0, 1e-9), 0.0, 1.0)
    lip_shade = 0.92 + 0.16 * np.sin(np.pi * v)
    lip_img = np.asarray(lip_rgb, dtype=np.float64) * lip_shade[:, None, None]
    img = np.where(mask[:, :, None].astype(bool), lip_img, img)
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def generate(params, n):
    """Generate n synthetic (image, landmarks, mask) triples.

    Each sample jitters the base shape parameters so shapes are distinct;
    everything is drawn from one generator seeded by params.seed, so equal
    params give identical output.  Raises GeometryError if a sampled shape
    leaves the canvas.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(params.seed)
    h, w = params.canvas
    samples = []
    for _ in range(n):
        width = params.width * rng.uniform(0.85, 1.15)
        height = params.height * rng.uniform(0.85, 1.15)
        bow = params.bow_depth * rng.uniform(0.7, 1.3)
        droop = params.droop * rng.uniform(0.5, 1.5)
        cx = params.center[0] + rng.uniform(-2.5, 2.5)
        cy = params.center[1] + rng.uniform(-2.5, 2.5)
        skin = np.clip(np.asarray(params.skin_rgb) + rng.normal(0, 5, 3), 0, 255)
        lip = np.clip(np.asarray(params.lip_rgb) + rng.normal(0, 5, 3), 0, 255)
        if abs(to_grayscale(skin[None, None]) - to_grayscale(lip[None, None]))[0, 0] < 10.0:
            skin, lip = np.asarray(params.skin_rgb, float), np.asarray(params.lip_rgb, float)

        anchors = lip_anchors(width, height, bow, droop) + [cx, cy]
        contour = lip_contour(anchors)
        if (
            contour[:, 0].min() < 0 or contour[:, 0].max() >= w
            or contour[:, 1].min() < 0 or contour[:, 1].max() >= h
        ):
            raise GeometryError("sampled lip geometry exceeds the canvas")
        image, mask = _render(params.canvas, contour, skin, lip, params.noise_sigma, rng)
        samples.append(SynthSample(image, LandmarkSet(list(ANCHOR_NAMES), anchors), mask))
    return samples


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

AUGMENT_OPS = ("hflip", "rot+5", "rot-5", "bright0.8", "bright1.1")


def _rotation(angle_deg, h, w):
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    return np.array([[c, -s], [s, c]]), center


def _rotate_image(img, angle_deg):
    h, w = img.shape[:2]
    rot, center = _rotation(angle_deg, h, w)
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    # inverse map: destination centers pulled back into the source frame
    src = (np.stack([cols, rows], axis=-1) - center) @ rot + center
    xs = np.clip(src[..., 0], 0.0, w - 1.0)
    ys = np.clip(src[..., 1], 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    plane = img.astype(np.float64)
    if plane.ndim == 2:
        plane = plane[:, :, None]
    top = (1.0 - fx) * plane[y0, x0] + fx * plane[y0, x1]
    bot = (1.0 - fx) * plane[y1, x0] + fx * plane[y1, x1]
    out = (1.0 - fy) * top + fy * bot
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[:, :, 0] if img.ndim == 2 else out


def _rotate_mask(mask, angle_deg):
    h, w = mask.shape
    rot, center = _rotation(angle_deg, h, w)
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src = (np.stack([cols, rows], axis=-1) - center) @ rot + center
    xs = np.rint(src[..., 0]).astype(np.intp)
    ys = np.rint(src[..., 1]).astype(np.intp)
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out = np.zeros_like(mask)
    out[inside] = mask[ys[inside], xs[inside]]
    return out


def augment(img, mask, landmarks, ops):
    """Apply augmentation ops in order, keeping the triple consistent.

    Supported ops: hflip, rot+5, rot-5 (degrees, bilinear image / nearest
    mask), bright0.8, bright1.1 (multiply and clamp, image only).
    """
    img = np.asarray(img)
    mask = np.asarray(mask)
    points = landmarks.points.copy()
    names = list(landmarks.names)
    h, w = mask.shape
    for op in ops:
        if op == "hflip":
            img = img[:, ::-1].copy()
            mask = mask[:, ::-1].copy()
            points[:, 0] = (w - 1) - points[:, 0]
        elif op in ("rot+5", "rot-5"):
            angle = 5.0 if op == "rot+5" else -5.0
            img = _rotate_image(img, angle)
            mask = _rotate_mask(mask, angle)
            rot, center = _rotation(angle, h, w)
            points = (points - center) @ rot.T + center
        elif op in ("bright0.8", "bright1.1"):
            factor = float(op[len("bright"):])
            img = np.clip(np.rint(img.astype(np.float64) * factor), 0, 255).astype(np.uint8)
        else:
            raise ValueError(f"unsupported augmentation op {op!r}")
    return img, mask, LandmarkSet(names, points)
