import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamina.geometry import ContourCurve, Plane
from lamina.layout import (
    TWO_BY_FOUR,
    LayoutError,
    LayoutWarning,
    MaskSpec,
    ParamSequence,
    Table,
    Uniform,
    apply_mask,
    build_segments,
    extend_segments,
    generate_elements,
    partition_segments,
    subdivide_contour,
)

Z = Plane([0, 0, 0], [0, 0, 1])


def line_contour(length, layer=0, z=0.0):
    return ContourCurve(Plane([0, 0, z], [0, 0, 1]), [[0, 0, z], [length, 0, z]], layer=layer)


def grid_segments(n_layers, n_pos):
    segs = []
    for i in range(n_layers):
        c = line_contour(float(n_pos), layer=i, z=0.0381 * i)
        segs += build_segments(c, ParamSequence(i, np.linspace(0, 1, n_pos + 1)))
    return segs


# -- subdivision -------------------------------------------------------------


def test_uniform_on_four_metres():
    c = ContourCurve(Z, [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 0]])
    p = subdivide_contour(c, Uniform(1.0))
    assert np.allclose(p.values, [0, 0.25, 0.5, 0.75, 1])


def test_table_passthrough():
    c = line_contour(2.0)
    assert np.allclose(subdivide_contour(c, Table((0, 0.3, 1))).values, [0, 0.3, 1])
    with pytest.raises(LayoutError):
        subdivide_contour(c, Table((0, 0.6, 0.3, 1)))
    with pytest.raises(LayoutError):
        subdivide_contour(c, Table((0.1, 1)))


def test_uniform_longer_than_contour_warns():
    with pytest.warns(LayoutWarning):
        p = subdivide_contour(line_contour(0.5), Uniform(1.0))
    assert np.allclose(p.values, [0, 1])


def test_uniform_three_point_two_metres_equal_arcs():
    # L-shaped contour: 2.0 m along x then 1.2 m along y
    c = ContourCurve(Z, [[0, 0, 0], [2, 0, 0], [2, 1.2, 0]])
    p = subdivide_contour(c, Uniform(1.0))
    assert p.intervals == 3
    pts = c.evaluate(p.values)
    # closed-form positions of arc lengths 0, 3.2/3, 6.4/3, 3.2 on the L
    expected = np.array([[0, 0, 0], [3.2 / 3, 0, 0], [2, 6.4 / 3 - 2, 0], [2, 1.2, 0]])
    assert np.allclose(pts, expected, atol=1e-12)
    # dense-sampling oracle: walk the L in 1e-5 m steps and measure between params
    s = np.linspace(0, 3.2, 320001)
    dense = np.where(s[:, None] <= 2, np.column_stack([s, 0 * s, 0 * s]), np.column_stack([2 + 0 * s, s - 2, 0 * s]))
    idx = [int(np.argmin(np.linalg.norm(dense - q, axis=1))) for q in pts]
    arcs = np.diff(s[idx])
    assert np.allclose(arcs, 3.2 / 3, atol=2e-5)


# -- segments ----------------------------------------------------------------


def test_segments_straight():
    segs = build_segments(line_contour(1.0), ParamSequence(0, [0, 0.5, 1]))
    assert [s.length for s in segs] == pytest.approx([0.5, 0.5])
    assert [s.position for s in segs] == [0, 1]


def test_single_segment_is_chord():
    c = line_contour(1.0)
    segs = build_segments(c, ParamSequence(0, [0, 1]))
    assert len(segs) == 1 and segs[0].length == pytest.approx(1.0)


def test_semicircle_chords():
    th = np.linspace(0, math.pi, 4001)
    c = ContourCurve(Plane([0, 0, 0], [0, 1, 0]), np.column_stack([np.cos(th), 0 * th, np.sin(th)]))
    segs = build_segments(c, ParamSequence(0, [0, 0.5, 1]))
    for s in segs:
        assert s.length == pytest.approx(math.sqrt(2), abs=1e-6)


# -- mask --------------------------------------------------------------------


def test_checkerboard_two_by_two():
    kept = apply_mask(grid_segments(2, 2), MaskSpec())
    assert {s.key for s in kept} == {(0, 0), (1, 1)}


def test_all_ones_table():
    segs = grid_segments(3, 4)
    table = {s.key: 1 for s in segs}
    kept = apply_mask(segs, MaskSpec("table", table))
    assert len(kept) == len(segs)


def test_override_unknown_cell():
    with pytest.raises(LayoutError):
        apply_mask(grid_segments(2, 2), MaskSpec(overrides={(5, 5): 1}))


def test_checkerboard_three_by_three_laps():
    kept = apply_mask(grid_segments(3, 3), MaskSpec())
    keys = {s.key for s in kept}
    # enumerate the 3x3 grid by hand: even (i + j)
    assert keys == {(0, 0), (0, 2), (1, 1), (2, 0), (2, 2)}
    for i, j in keys:
        for ni in (i - 1, i + 1):
            if 0 <= ni < 3:
                assert any((ni, nj) in keys for nj in (j - 1, j, j + 1))


def test_partition_disjoint_cover():
    segs = grid_segments(4, 5)
    kept, culled = partition_segments(segs, MaskSpec(overrides={(1, 1): 0, (1, 2): 1}))
    kk = {s.key for s in kept}
    ck = {s.key for s in culled}
    assert kk.isdisjoint(ck) and kk | ck == {s.key for s in segs}
    assert all(not s.retained for s in culled)


@given(st.integers(1, 8), st.integers(1, 8))
def test_checkerboard_parity_alternates(n_layers, n_pos):
    kept = apply_mask(grid_segments(n_layers, n_pos), MaskSpec())
    for i in range(n_layers - 1):
        a = {s.position % 2 for s in kept if s.layer == i}
        b = {s.position % 2 for s in kept if s.layer == i + 1}
        assert a.isdisjoint(b)


# -- extension ---------------------------------------------------------------


def test_extend_interior_segment():
    c = line_contour(1.5)
    segs = build_segments(c, ParamSequence(0, [0, 1 / 3, 2 / 3, 1]))
    ext = extend_segments([segs[1]], 0.05, [c])
    assert ext[0].length == pytest.approx(0.6)


def test_extend_zero_is_identity():
    c = line_contour(1.5)
    segs = build_segments(c, ParamSequence(0, [0, 1 / 3, 2 / 3, 1]))
    ext = extend_segments(segs, 0.0, [c])
    for e, s in zip(ext, segs):
        assert np.array_equal(e.start, s.start) and np.array_equal(e.end, s.end)


def test_extend_clamped_at_open_end():
    c = line_contour(1.0)
    segs = build_segments(c, ParamSequence(0, [0, 0.5, 1]))
    ext = extend_segments([segs[0]], 0.05, [c])
    assert ext[0].length == pytest.approx(0.55)
    assert np.allclose(ext[0].start, [0, 0, 0])


def test_extend_overlap_rejected():
    c = line_contour(1.0)
    segs = build_segments(c, ParamSequence(0, [0, 0.4, 0.5, 1]))
    kept = [segs[0], segs[2]]  # 0.1 m gap
    extend_segments(kept, 0.05, [c])
    with pytest.raises(LayoutError, match="overlap"):
        extend_segments(kept, 0.06, [c])


def test_extend_closed_contour_wraps():
    c = ContourCurve(Z, [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], closed=True)
    segs = build_segments(c, ParamSequence(0, [0, 0.25, 0.5, 0.75, 1]))
    ext = extend_segments([segs[0]], 0.1, [c])
    assert ext[0].length == pytest.approx(1.2)
    with pytest.raises(LayoutError):
        extend_segments(segs, 0.1, [c])


# -- elements ----------------------------------------------------------------


def _elements_from(contour, values, ext=0.0, **kw):
    segs = build_segments(contour, ParamSequence(0, values))
    return generate_elements(extend_segments(segs, ext, [contour]), [contour], **kw)


def test_element_from_six_decimetre_segment():
    layers = _elements_from(line_contour(0.6), [0, 1])
    (e,) = layers[0].elements
    assert e.length == pytest.approx(0.6)
    assert e.cross_section == pytest.approx((0.0889, 0.0381))
    assert e.cut_mode == "robotic"
    assert np.allclose(e.pose[0], [0.3, 0, 0])
    assert np.allclose(e.pose[1:], np.eye(3))


def test_short_element_is_manual():
    (e,) = _elements_from(line_contour(0.30), [0, 1])[0].elements
    assert e.cut_mode == "manual"


def test_cut_planes_at_axis_ends():
    (e,) = _elements_from(line_contour(0.6), [0, 1])[0].elements
    for plane, end in zip(e.cut_planes, e.axis):
        assert np.allclose(plane.origin, end)
    assert np.allclose(e.cut_planes[0].normal, [-1, 0, 0])
    assert np.allclose(e.cut_planes[1].normal, [1, 0, 0])


def test_miter_collinear_is_square():
    layers = _elements_from(line_contour(1.0), [0, 0.5, 1], miter=True)
    a, b = layers[0].elements
    assert np.allclose(a.cut_planes[1].normal, [1, 0, 0])
    assert np.allclose(b.cut_planes[0].normal, [-1, 0, 0])
    assert np.allclose(a.cut_planes[1].origin, b.cut_planes[0].origin)


def test_miter_right_angle_bisects():
    c = ContourCurve(Z, [[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    a, b = _elements_from(c, [0, 0.5, 1], miter=True)[0].elements
    assert np.allclose(a.cut_planes[1].normal, np.array([1, 1, 0]) / math.sqrt(2))
    assert np.allclose(b.cut_planes[0].normal, -np.array([1, 1, 0]) / math.sqrt(2))


def test_depth_spacing_mismatch_warns():
    with pytest.warns(LayoutWarning):
        _elements_from(line_contour(0.6), [0, 1], layer_spacing=0.05)


def test_element_record_shape():
    (e,) = _elements_from(line_contour(0.6), [0, 1])[0].elements
    r = e.to_record()
    assert len(r["pose"]) == 12 and len(r["cut_planes"]) == 12
    assert r["length_m"] == pytest.approx(0.6)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.3, 1.2), min_size=2, max_size=6),
    st.integers(4, 10),
    st.floats(0.0, 0.05),
    st.integers(2, 5),
)
def test_element_invariants(leg_lengths, n_div, ext, n_layers):
    # zig-zag contours stacked along z
    contours = []
    for i in range(n_layers):
        pts = [[0.0, 0.0, 0.0381 * i]]
        for k, L in enumerate(leg_lengths):
            ang = 0.4 if k % 2 else -0.4
            last = pts[-1]
            pts.append([last[0] + L * math.cos(ang), last[1] + L * math.sin(ang), 0.0381 * i])
        contours.append(ContourCurve(Plane([0, 0, 0.0381 * i], [0, 0, 1]), pts, layer=i))
    segs = []
    for i, c in enumerate(contours):
        segs += build_segments(c, ParamSequence(i, np.linspace(0, 1, n_div + 1)))
    kept = apply_mask(segs, MaskSpec())
    try:
        ext_segs = extend_segments(kept, ext, contours)
    except LayoutError:
        return
    layers = generate_elements(ext_segs, contours, TWO_BY_FOUR)
    elems = [e for L in layers for e in L.elements]
    assert len(elems) == len(kept)
    assert sum(e.length for e in elems) >= sum(s.length for s in kept) - 1e-12
    by_key = {(s.contour_index, s.position): s for s in kept}
    for L in layers:
        for e in L.elements:
            s = by_key[(e.contour_index, e.position)]
            assert np.linalg.norm(e.axis[0] - s.start) <= ext + 1e-12
            assert np.linalg.norm(e.axis[1] - s.end) <= ext + 1e-12
            assert np.all(np.abs(L.plane.signed_distance(np.array(e.axis))) < 1e-9)
            assert (e.cut_mode == "manual") == (e.length < 0.35)
