"""Ground-truth mask generation from sparse anatomical landmarks.

A canonical upper-lip template (a dense closed polyline with 11 anchor
vertices) is aligned to the input landmarks by a closed-form similarity
Procrustes fit.  The aligned template is then densified: between each
consecutive anchor pair, chord points (1-a)*T_i + a*T_{i+1} are projected
onto the template polyline, recording (segment, a) for each.  Every
densified template point is finally mapped onto the corresponding
landmark chord [P_i, P_{i+1}] at the position that preserves the ratio of
Euclidean distances to the two flanking anchors.  Connecting landmarks
and mapped points in order yields a closed contour, which is rasterized
into a binary mask with an even-odd scanline fill (a pixel is foreground
iff its center is inside the polygon or on its boundary).
"""

import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import FormatError, GeometryError
from .imagio import LandmarkSet
from .validation import check_points

_ON_BOUNDARY_EPS = 1e-9


# ---------------------------------------------------------------------------
# similarity alignment
# ---------------------------------------------------------------------------

@dataclass
class SimilarityTransform:
    """scale * rotation + translation, the 2D similarity group."""

    scale: float
    angle: float  # radians, counterclockwise in (x right, y down) coords
    translation: np.ndarray  # (2,)

    def matrix(self):
        c, s = np.cos(self.angle), np.sin(self.angle)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + self.translation

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, np.zeros(2))


def _collinearity(points):
    """Second singular value of the centered point cloud (0 if collinear)."""
    centered = points - points.mean(axis=0)
    return np.linalg.svd(centered, compute_uv=False)[-1]


def procrustes_align(source, target):
    """Least-squares similarity transform mapping source points onto target.

    Minimizes sum ||s R x_i + t - y_i||^2 over scale s > 0, rotation R and
    translation t (no reflection).  Closed form via the complex-plane
    representation of 2D similarities.
    """
    src = check_points(source, min_points=2, name="source")
    dst = check_points(target, min_points=2, name="target")
    if len(src) != len(dst):
        raise ValueError(f"point counts differ: {len(src)} vs {len(dst)}")
    sigma2 = _collinearity(dst)
    if sigma2 <= 1e-9 * max(1.0, np.abs(dst).max()):
        raise GeometryError("landmarks are collinear; similarity fit is degenerate")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    zs = (src[:, 0] - mu_s[0]) + 1j * (src[:, 1] - mu_s[1])
    zd = (dst[:, 0] - mu_d[0]) + 1j * (dst[:, 1] - mu_d[1])
    denom = np.sum(zs.real ** 2 + zs.imag ** 2)
    if denom == 0.0:
        raise GeometryError("source points are coincident")
    w = np.sum(np.conj(zs) * zd) / denom
    scale = abs(w)
    if scale == 0.0:
        raise GeometryError("target points are coincident")
    angle = np.angle(w)
    rot = scale * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    translation = mu_d - rot @ mu_s
    return SimilarityTransform(scale, float(angle), translation)


# ---------------------------------------------------------------------------
# template
# ---------------------------------------------------------------------------

@dataclass
class TemplateContour:
    """Closed dense polyline with anchor vertices matching a landmark schema.

    ``vertices`` is (M, 2); closure is implicit (vertex M-1 connects back
    to vertex 0).  ``anchor_indices`` selects the N correspondence
    vertices, strictly increasing along the polyline.
    """

    vertices: np.ndarray
    anchor_indices: np.ndarray
    anchor_names: list[str]

    def __post_init__(self):
        self.vertices = check_points(self.vertices, min_points=3, name="template vertices")
        self.anchor_indices = np.asarray(self.anchor_indices, dtype=np.intp)
        if len(self.anchor_indices) < 3:
            raise ValueError("template needs at least 3 anchors")
        if not (np.diff(self.anchor_indices) > 0).all():
            raise ValueError("anchor_indices must be strictly increasing")
        if self.anchor_indices[0] < 0 or self.anchor_indices[-1] >= len(self.vertices):
            raise ValueError("anchor_indices out of range")
        if len(self.anchor_names) != len(self.anchor_indices):
            raise ValueError("one name per anchor required")

    @property
    def anchors(self):
        return self.vertices[self.anchor_indices]

    def transformed(self, transform):
        return TemplateContour(
            transform.apply(self.vertices), self.anchor_indices.copy(), list(self.anchor_names)
        )


def read_template(path):
    """Read a template CSV: ``name,x,y,anchor`` rows along the contour."""
    names, coords, flags = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise FormatError(
                    f"line {lineno}: expected 'name,x,y,anchor', got {line!r}", path=path
                )
            try:
                coords.append((float(parts[1]), float(parts[2])))
                flags.append(int(parts[3]))
            except ValueError:
                raise FormatError(f"line {lineno}: bad number in {line!r}", path=path)
            names.append(parts[0])
    if not names:
        raise FormatError("no template vertices", path=path)
    idx = np.flatnonzero(np.asarray(flags) != 0)
    return TemplateContour(
        np.array(coords), idx, [names[i] for i in idx]
    )


def write_template(path, template):
    """Write a TemplateContour in the CSV grammar read_template accepts.

    Coordinates use the shortest decimal form that parses back to the
    same float64, so write/read round trips are exact.
    """
    anchor_set = {int(i): name for i, name in zip(template.anchor_indices, template.anchor_names)}
    with open(path, "w", encoding="ascii") as fh:
        for i, (x, y) in enumerate(template.vertices):
            name = anchor_set.get(i, f"v{i:03d}")
            fh.write(f"{name},{float(x)!r},{float(y)!r},{int(i in anchor_set)}\n")


def default_template():
    """The packaged canonical upper-lip template."""
    ref = resources.files("liplab").joinpath("data/upper_lip_template.csv")
    with resources.as_file(ref) as path:
        return read_template(path)


def align_template(template, landmarks):
    """Fit the template's anchors to the landmarks with a similarity
    transform and return the transformed template."""
    points = landmarks.points if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks)
    points = check_points(points, min_points=3, name="landmarks")
    if len(points) != len(template.anchor_indices):
        raise ValueError(
            f"{len(points)} landmarks for a template with {len(template.anchor_indices)} anchors"
        )
    transform = procrustes_align(template.anchors, points)
    return template.transformed(transform)


# ---------------------------------------------------------------------------
# densification
# ---------------------------------------------------------------------------

@dataclass
class TemplatePoint:
    """A chord point projected onto the template polyline."""

    point: np.ndarray  # (2,)
    segment: int       # index i of the flanking anchor pair (T_i, T_{i+1})
    a: float           # chord parameter in (0, 1)


@dataclass
class InterpolatedPoint:
    """A densified contour vertex on a landmark chord."""

    point: np.ndarray  # (2,)
    segment: int
    a: float


@dataclass
class DensifiedContour:
    """The N anatomical landmarks plus the points interpolated between them."""

    anatomical: np.ndarray               # (N, 2)
    interpolated: list[InterpolatedPoint]  # ordered along the contour

    def polygon(self):
        """All vertices interleaved in contour order, as an (M, 2) array."""
        n = len(self.anatomical)
        by_segment = [[] for _ in range(n)]
        for p in self.interpolated:
            by_segment[p.segment].append(p)
        out = []
        for i in range(n):
            out.append(self.anatomical[i])
            out.extend(p.point for p in sorted(by_segment[i], key=lambda p: p.a))
        return np.array(out, dtype=np.float64)


def _nearest_on_polyline(query, vertices, closed=True):
    """Nearest point to ``query`` over a polyline, searched continuously
    on every segment."""
    v0 = vertices
    v1 = np.roll(vertices, -1, axis=0) if closed else vertices[1:]
    if not closed:
        v0 = vertices[:-1]
    d = v1 - v0
    len2 = (d ** 2).sum(axis=1)
    len2 = np.where(len2 == 0.0, 1.0, len2)
    t = np.clip(((query - v0) * d).sum(axis=1) / len2, 0.0, 1.0)
    candidates = v0 + t[:, None] * d
    dist2 = ((candidates - query) ** 2).sum(axis=1)
    return candidates[np.argmin(dist2)]


def discretize_template(template, spacing=2.0):
    """Interpolate chord points between consecutive anchors and snap them
    to the template polyline.

    The number of points per anchor pair is chosen so that steps along
    the polyline arc are approximately ``spacing`` apart; each returned
    TemplatePoint records its flanking-anchor segment and chord parameter.
    The closing run (last anchor back to the first) is not densified; the
    contour is closed by the final landmark-to-landmark edge.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    verts = template.vertices
    idx = template.anchor_indices
    points = []
    for seg in range(len(idx) - 1):
        start, stop = idx[seg], idx[seg + 1]
        arc = verts[start:stop + 1]
        arc_len = np.sqrt(((arc[1:] - arc[:-1]) ** 2).sum(axis=1)).sum()
        steps = max(1, int(round(arc_len / spacing)))
        t0, t1 = verts[start], verts[stop]
        for k in range(1, steps):
            a = k / steps
            chord = (1.0 - a) * t0 + a * t1
            snapped = _nearest_on_polyline(chord, verts, closed=True)
            points.append(TemplatePoint(snapped, seg, a))
    return points


def project_to_landmarks(landmarks, template, discretized):
    """Map densified template points onto the landmark chords.

    For a template point T' between anchors (T_i, T_{i+1}), the image A
    lies on the chord [P_i, P_{i+1}] at the unique position where
    |P_i - A| / |P_{i+1} - A| equals |T_i - T'| / |T_{i+1} - T'|.
    """
    points = landmarks.points if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks)
    points = check_points(points, min_points=3, name="landmarks")
    anchors = template.anchors
    if len(points) != len(anchors):
        raise ValueError(f"{len(points)} landmarks vs {len(anchors)} template anchors")
    seg_len = np.sqrt(((np.diff(points, axis=0)) ** 2).sum(axis=1))
    if (seg_len == 0.0).any():
        bad = int(np.flatnonzero(seg_len == 0.0)[0])
        raise GeometryError(f"zero-length landmark segment between points {bad} and {bad + 1}")

    interpolated = []
    for tp in discretized:
        i = tp.segment
        d_prev = np.linalg.norm(tp.point - anchors[i])
        d_next = np.linalg.norm(tp.point - anchors[i + 1])
        if d_next == 0.0:
            t = 1.0
        else:
            ratio = d_prev / d_next
            t = ratio / (1.0 + ratio)
        a_point = (1.0 - t) * points[i] + t * points[i + 1]
        interpolated.append(InterpolatedPoint(a_point, i, tp.a))
    return DensifiedContour(points, interpolated)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, c):
    return (
        min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
    )


def _segments_cross(p1, p2, p3, p4):
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    # touching / collinear-overlap cases
    if d1 == 0 and _on_segment(p3, p4, p1):
        return True
    if d2 == 0 and _on_segment(p3, p4, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, p3):
        return True
    if d4 == 0 and _on_segment(p1, p2, p4):
        return True
    return False


def _find_self_intersection(verts):
    m = len(verts)
    for i in range(m):
        a0, a1 = verts[i], verts[(i + 1) % m]
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue  # adjacent around the closure
            if _segments_cross(a0, a1, verts[j], verts[(j + 1) % m]):
                return i, j
    return None


def _polygon_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def rasterize(contour, height, width):
    """Rasterize a closed contour into a {0,1} uint8 mask.

    A pixel at (row r, col c) has its center at (x=c, y=r); it is set iff
    the center is strictly inside the polygon under the even-odd rule or
    lies on the boundary.  Raises GeometryError for self-intersecting
    contours, naming the crossing segment pair.
    """
    verts = contour.polygon() if isinstance(contour, DensifiedContour) else np.asarray(contour, dtype=np.float64)
    verts = check_points(verts, min_points=3, name="contour")
    # drop exactly repeated consecutive vertices (incl. the wraparound pair)
    keep = np.ones(len(verts), dtype=bool)
    keep[1:] = (np.diff(verts, axis=0) != 0.0).any(axis=1)
    verts = verts[keep]
    if len(verts) > 1 and (verts[0] == verts[-1]).all():
        verts = verts[:-1]
    if len(verts) < 3:
        raise ValueError("contour needs at least 3 distinct points")
    if (verts[:, 0] < 0).any() or (verts[:, 0] >= width).any() or (verts[:, 1] < 0).any() or (verts[:, 1] >= height).any():
        raise ValueError(f"contour coordinates must lie within [0, {width}) x [0, {height})")

    crossing = _find_self_intersection(verts)
    if crossing is not None:
        i, j = crossing
        raise GeometryError(f"self-intersecting contour: segments {i} and {j} cross")
    if _polygon_area(verts) == 0.0:
        warnings.warn("degenerate contour with zero area", stacklevel=2)

    mask = np.zeros((height, width), dtype=np.uint8)
    x0s, y0s = verts[:, 0], verts[:, 1]
    x1s = np.roll(x0s, -1)
    y1s = np.roll(y0s, -1)

    # even-odd interior, strict: half-open crossing rule per scanline
    for row in range(height):
        spans = ((y0s <= row) & (y1s > row)) | ((y1s <= row) & (y0s > row))
        if not spans.any():
            continue
        xc = x0s[spans] + (row - y0s[spans]) * (x1s[spans] - x0s[spans]) / (y1s[spans] - y0s[spans])
        xc.sort()
        for lo, hi in zip(xc[0::2], xc[1::2]):
            first = max(0, int(np.floor(lo)) + 1)
            last = min(width - 1, int(np.ceil(hi)) - 1)
            if last >= first:
                mask[row, first:last + 1] = 1

    # boundary: any pixel center on an edge (within a tiny tolerance)
    for k in range(len(verts)):
        p = verts[k]
        q = verts[(k + 1) % len(verts)]
        cmin = max(0, int(np.floor(min(p[0], q[0]))))
        cmax = min(width - 1, int(np.ceil(max(p[0], q[0]))))
        rmin = max(0, int(np.floor(min(p[1], q[1]))))
        rmax = min(height - 1, int(np.ceil(max(p[1], q[1]))))
        if cmax < cmin or rmax < rmin:
            continue
        cols, rows = np.meshgrid(np.arange(cmin, cmax + 1), np.arange(rmin, rmax + 1))
        centers = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
        d = q - p
        len2 = (d ** 2).sum()
        if len2 == 0.0:
            continue
        t = np.clip(((centers - p) @ d) / len2, 0.0, 1.0)
        nearest = p + t[:, None] * d
        hit = ((centers - nearest) ** 2).sum(axis=1) <= _ON_BOUNDARY_EPS ** 2
        mask[centers[hit, 1].astype(int), centers[hit, 0].astype(int)] = 1
    return mask


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------

def generate_mask(landmarks, height, width, template=None, spacing=2.0):
    """Landmarks -> aligned template -> densified contour -> binary mask."""
    template = template if template is not None else default_template()
    aligned = align_template(template, landmarks)
    discretized = discretize_template(aligned, spacing)
    contour = project_to_landmarks(landmarks, aligned, discretized)
    return rasterize(contour, height, width)


class TemplateMaskMaker(BaseEstimator, TransformerMixin):
    """Transformer from landmark sets to ground-truth masks.

    transform() accepts a single (N, 2) landmark array (or LandmarkSet)
    or a list of them, and returns the corresponding (H, W) masks.
    """

    def __init__(self, height=64, width=64, spacing=2.0, template=None):
        self.height = height
        self.width = width
        self.spacing = spacing
        self.template = template

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        template = self.template if self.template is not None else default_template()
        if isinstance(X, (list, tuple)):
            return [
                generate_mask(lm, self.height, self.width, template, self.spacing) for lm in X
            ]
        return generate_mask(X, self.height, self.width, template, self.spacing)
