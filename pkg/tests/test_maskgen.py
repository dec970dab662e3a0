"""Template alignment, densification, projection and rasterization."""

import numpy as np
import pytest
from scipy import ndimage

from liplab import synth
from liplab.errors import FormatError, GeometryError
from liplab.maskgen import (
    SimilarityTransform,
    TemplateContour,
    TemplateMaskMaker,
    align_template,
    default_template,
    discretize_template,
    generate_mask,
    procrustes_align,
    project_to_landmarks,
    rasterize,
    read_template,
    write_template,
)

from oracles import (
    point_in_polygon_even_odd,
    point_to_polyline_dist,
    shoelace_area,
    similarity_residual,
)


def square_template(side=10.0, per_edge=5):
    """Axis-aligned square with anchors at the corners and evenly spaced
    intermediate vertices along each edge."""
    corners = np.array([[0, 0], [side, 0], [side, side], [0, side]], dtype=np.float64)
    verts = []
    idx = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        idx.append(len(verts))
        for t in np.linspace(0.0, 1.0, per_edge + 1)[:-1]:
            verts.append((1.0 - t) * a + t * b)
    return TemplateContour(np.array(verts), np.array(idx), ["a", "b", "c", "d"])


# ---------------------------------------------------------------------------
# procrustes
# ---------------------------------------------------------------------------

def test_procrustes_identity():
    pts = np.array([[0.0, 0.0], [4.0, 1.0], [2.0, 5.0], [7.0, 3.0]])
    tf = procrustes_align(pts, pts)
    assert abs(tf.scale - 1.0) < 1e-14
    assert abs(tf.angle) < 1e-14
    assert np.abs(tf.translation).max() < 1e-13


def test_procrustes_recovers_known_transform():
    rng = np.random.default_rng(7)
    for _ in range(10):
        src = rng.uniform(-5, 5, size=(8, 2))
        want = SimilarityTransform(1.7, 0.6, np.array([3.0, -2.0]))
        dst = want.apply(src)
        got = procrustes_align(src, dst)
        assert abs(got.scale - want.scale) < 1e-12
        assert abs(got.angle - want.angle) < 1e-12
        assert np.abs(got.apply(src) - dst).max() < 1e-11


def test_procrustes_is_least_squares_optimal():
    # fitted residual beats every random perturbation of the parameters
    rng = np.random.default_rng(11)
    src = rng.uniform(-5, 5, size=(9, 2))
    dst = SimilarityTransform(1.3, -0.4, np.array([1.0, 2.0])).apply(src)
    dst = dst + rng.normal(0, 0.3, size=dst.shape)
    tf = procrustes_align(src, dst)
    best = similarity_residual(src, dst, tf.scale, tf.angle, *tf.translation)
    for _ in range(50):
        ds, da, dx, dy = rng.normal(0, 0.05, size=4)
        other = similarity_residual(
            src, dst, tf.scale + ds, tf.angle + da, tf.translation[0] + dx, tf.translation[1] + dy
        )
        assert best <= other + 1e-12


def test_procrustes_collinear_target_rejected():
    src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]])
    dst = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(GeometryError):
        procrustes_align(src, dst)


def test_procrustes_count_mismatch():
    with pytest.raises(ValueError):
        procrustes_align(np.zeros((3, 2)), np.ones((4, 2)))


def test_align_template_matches_landmarks_exactly():
    template = default_template()
    tf = SimilarityTransform(1.25, 0.35, np.array([30.0, 28.0]))
    landmarks = tf.apply(template.anchors)
    aligned = align_template(template, landmarks)
    assert np.abs(aligned.anchors - landmarks).max() < 1e-9
    assert np.abs(aligned.vertices - tf.apply(template.vertices)).max() < 1e-9


# ---------------------------------------------------------------------------
# densification and projection
# ---------------------------------------------------------------------------

def test_discretize_counts_and_parameters():
    template = square_template(side=10.0, per_edge=5)
    points = discretize_template(template, spacing=2.0)
    # three densified runs of arc length 10 -> 5 steps -> 4 points each;
    # the closing edge (d back to a) is not densified
    assert len(points) == 12
    for seg in range(3):
        params = [p.a for p in points if p.segment == seg]
        assert params == pytest.approx([0.2, 0.4, 0.6, 0.8])
    assert not any(p.segment == 3 for p in points)


def test_discretize_snaps_to_nearest_polyline_point():
    template = synth.canonical_template()
    verts = template.vertices
    idx = template.anchor_indices
    points = discretize_template(template, spacing=2.0)
    assert len(points) > 10
    for tp in points:
        start, stop = idx[tp.segment], idx[tp.segment + 1]
        chord = (1.0 - tp.a) * verts[start] + tp.a * verts[stop]
        d_prod = float(np.hypot(*(tp.point - chord)))
        # snapped point lies on the polyline and is no farther from the
        # chord point than any other polyline point
        assert point_to_polyline_dist(tp.point, verts) < 1e-9
        assert d_prod <= point_to_polyline_dist(chord, verts) + 1e-9


def test_projection_preserves_distance_ratio():
    template = synth.canonical_template()
    rng = np.random.default_rng(3)
    tf = SimilarityTransform(1.1, 0.2, np.array([30.0, 30.0]))
    landmarks = tf.apply(template.anchors) + rng.normal(0, 0.4, size=(11, 2))
    aligned = align_template(template, landmarks)
    discretized = discretize_template(aligned, spacing=2.0)
    contour = project_to_landmarks(landmarks, aligned, discretized)
    anchors = aligned.anchors
    checked = 0
    for tp, ip in zip(discretized, contour.interpolated):
        i = tp.segment
        d_next = np.linalg.norm(tp.point - anchors[i + 1])
        if d_next == 0.0:
            continue
        r_tpl = np.linalg.norm(tp.point - anchors[i]) / d_next
        denom = np.linalg.norm(ip.point - landmarks[i + 1])
        r_lm = np.linalg.norm(ip.point - landmarks[i]) / denom
        assert abs(r_lm - r_tpl) <= 1e-6 * (1.0 + r_tpl)
        checked += 1
    assert checked == len(discretized)


def test_projection_zero_length_segment_rejected():
    template = square_template()
    landmarks = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [0.0, 5.0]])
    discretized = discretize_template(template, spacing=2.0)
    with pytest.raises(GeometryError, match="zero-length"):
        project_to_landmarks(landmarks, template, discretized)


def test_polygon_vertex_order():
    template = square_template(side=10.0, per_edge=5)
    landmarks = template.anchors.copy()
    discretized = discretize_template(template, spacing=2.0)
    contour = project_to_landmarks(landmarks, template, discretized)
    poly = contour.polygon()
    assert len(poly) == 4 + 12
    # anchors sit at the start of each densified run
    assert np.abs(poly[0] - landmarks[0]).max() == 0.0
    assert np.abs(poly[5] - landmarks[1]).max() == 0.0
    # interpolated points are sorted by chord parameter between anchors
    run = poly[1:5]
    gaps = np.diff(run, axis=0)
    assert (np.linalg.norm(gaps, axis=1) > 0).all()


def test_discretize_similarity_equivariance():
    # scaling the template and the spacing together scales the points
    template = synth.canonical_template()
    tf = SimilarityTransform(2.0, 0.7, np.array([5.0, -3.0]))
    scaled = template.transformed(tf)
    base = discretize_template(template, spacing=1.5)
    moved = discretize_template(scaled, spacing=3.0)
    assert len(base) == len(moved)
    for p, q in zip(base, moved):
        assert p.segment == q.segment
        assert abs(p.a - q.a) < 1e-12
        assert np.abs(tf.apply(p.point) - q.point).max() < 1e-9


def test_round_trip_contour_within_half_pixel():
    template = default_template()
    tf = SimilarityTransform(1.2, np.deg2rad(20.0), np.array([32.0, 30.0]))
    landmarks = tf.apply(template.anchors)
    aligned = align_template(template, landmarks)
    discretized = discretize_template(aligned, spacing=2.0)
    contour = project_to_landmarks(landmarks, aligned, discretized)
    truth = tf.apply(template.vertices)
    worst = max(point_to_polyline_dist(v, truth) for v in contour.polygon())
    assert worst <= 0.5

    mask = rasterize(contour, 64, 64)
    area = shoelace_area(contour.polygon())
    assert area > 400.0
    assert abs(float(mask.sum()) - area) <= 0.02 * area


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def test_square_on_pixel_centers():
    poly = np.array([[1.0, 1.0], [4.0, 1.0], [4.0, 4.0], [1.0, 4.0]])
    mask = rasterize(poly, 8, 8)
    want = np.zeros((8, 8), dtype=np.uint8)
    want[1:5, 1:5] = 1
    assert mask.sum() == 16
    assert (mask == want).all()


def test_rasterize_matches_even_odd_oracle():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 12))
        angles = (np.arange(n) + rng.uniform(0.1, 0.9, size=n)) * (2 * np.pi / n)
        radii = rng.uniform(3.0, 10.0, size=n)
        poly = np.stack(
            [12.0 + radii * np.cos(angles), 12.0 + radii * np.sin(angles)], axis=1
        )
        mask = rasterize(poly, 24, 24)
        for r in range(24):
            for c in range(24):
                assert mask[r, c] == point_in_polygon_even_odd(float(c), float(r), poly)


def test_rasterize_area_matches_shoelace():
    angles = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    poly = np.stack([24.0 + 16.0 * np.cos(angles), 24.0 + 16.0 * np.sin(angles)], axis=1)
    mask = rasterize(poly, 48, 48)
    area = shoelace_area(poly)
    assert area > 400.0
    assert abs(float(mask.sum()) - area) <= 0.02 * area


def test_generated_mask_is_single_component():
    samples = synth.generate(synth.LipShapeParams(seed=5), 3)
    for s in samples:
        mask = generate_mask(s.landmarks, 64, 64)
        assert mask.any()
        _, count = ndimage.label(mask)
        assert count == 1


def test_self_intersection_names_segment_pair():
    bowtie = np.array([[0.0, 0.0], [10.0, 10.0], [10.0, 0.0], [0.0, 10.0]])
    with pytest.raises(GeometryError, match="segments 0 and 2 cross"):
        rasterize(bowtie, 16, 16)


def test_zero_area_contour_warns():
    flat = np.array([[1.0, 2.0], [5.0, 2.0], [3.0, 2.0]])
    with pytest.warns(UserWarning, match="zero area"):
        mask = rasterize(flat, 8, 8)
    assert (mask[2, 1:6] == 1).all()
    assert mask.sum() == 5


def test_out_of_bounds_contour_rejected():
    poly = np.array([[1.0, 1.0], [8.0, 1.0], [4.0, 4.0]])
    with pytest.raises(ValueError, match="within"):
        rasterize(poly, 8, 8)


def test_duplicate_vertices_are_ignored():
    poly = np.array([[1.0, 1.0], [4.0, 1.0], [4.0, 4.0], [1.0, 4.0]])
    doubled = np.repeat(poly, 2, axis=0)
    assert (rasterize(doubled, 8, 8) == rasterize(poly, 8, 8)).all()


# ---------------------------------------------------------------------------
# template io
# ---------------------------------------------------------------------------

def test_template_csv_round_trip(tmp_path):
    template = synth.canonical_template()
    path = tmp_path / "tpl.csv"
    write_template(path, template)
    back = read_template(path)
    assert np.abs(back.vertices - template.vertices).max() < 5e-7
    assert (back.anchor_indices == template.anchor_indices).all()
    assert back.anchor_names == template.anchor_names


def test_read_template_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("p0,1.0,2.0\n")
    with pytest.raises(FormatError, match="expected"):
        read_template(path)
    path.write_text("p0,1.0,oops,1\n")
    with pytest.raises(FormatError, match="bad number"):
        read_template(path)
    path.write_text("# only a comment\n")
    with pytest.raises(FormatError, match="no template"):
        read_template(path)


def test_packaged_template_matches_generator():
    packaged = default_template()
    generated = synth.canonical_template()
    assert np.abs(packaged.vertices - generated.vertices).max() < 1e-5
    assert packaged.anchor_names == list(synth.ANCHOR_NAMES)
    assert len(packaged.vertices) == len(generated.vertices)


def test_mask_maker_estimator():
    samples = synth.generate(synth.LipShapeParams(seed=2), 2)
    maker = TemplateMaskMaker(height=64, width=64, spacing=2.0)
    masks = maker.fit([s.landmarks for s in samples]).transform(
        [s.landmarks for s in samples]
    )
    assert len(masks) == 2
    for m in masks:
        assert m.shape == (64, 64) and m.dtype == np.uint8
        assert set(np.unique(m)) <= {0, 1}
    single = maker.transform(samples[0].landmarks)
    assert (single == masks[0]).all()
    params = maker.get_params()
    assert params["spacing"] == 2.0
