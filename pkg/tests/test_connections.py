import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamina.connections import (
    NailPlacement,
    OverlapError,
    check_nail_clearance,
    find_overlaps,
    nail_mask,
    nail_positions,
    offset_inward,
    place_nails,
    simplify_convex,
)
from lamina.geometry import Plane, point_in_convex, polygon_area

from helpers import make_element, make_layer, stacked_wall

W = 0.0889
PLANE = Plane([0, 0, 0.019], [0, 0, 1])


def edge_distances(poly, pt):
    out = []
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        d = b - a
        out.append((d[0] * (pt[1] - a[1]) - d[1] * (pt[0] - a[0])) / np.linalg.norm(d))
    return np.array(out)


# -- overlaps ---------------------------------------------------------------


def test_crossing_elements_square_overlap():
    a = make_layer(0, [make_element("a", 0, (-0.3, 0), (0.3, 0))])
    b = make_layer(1, [make_element("b", 1, (0, -0.3), (0, 0.3))])
    (ov,) = find_overlaps(a, b)
    assert ov.area == pytest.approx(W * W, rel=1e-12)
    assert len(ov.polygon) == 4
    assert ov.interface_plane.origin[2] == pytest.approx(0.0381 / 2)


def test_parallel_apart_is_empty():
    a = make_layer(0, [make_element("a", 0, (0, 0), (0.6, 0))])
    b = make_layer(1, [make_element("b", 1, (0, 0.5), (0.6, 0.5))])
    assert find_overlaps(a, b) == []


def test_collinear_lap():
    a = make_layer(0, [make_element("a", 0, (0, 0), (0.6, 0))])
    b = make_layer(1, [make_element("b", 1, (0.45, 0), (1.05, 0))])
    (ov,) = find_overlaps(a, b)
    assert ov.area == pytest.approx(0.15 * W)
    xs, ys = np.ptp(ov.polygon[:, 0]), np.ptp(ov.polygon[:, 1])
    assert xs == pytest.approx(0.15) and ys == pytest.approx(W)


def test_non_adjacent_layers():
    a = make_layer(0, [make_element("a", 0, (0, 0), (0.6, 0))])
    c = make_layer(2, [make_element("c", 2, (0, 0), (0.6, 0))])
    with pytest.raises(OverlapError):
        find_overlaps(a, c)


def test_overlap_symmetry():
    layers = stacked_wall(2, 6)
    ab, ba = find_overlaps(layers[0], layers[1]), find_overlaps(layers[1], layers[0])
    assert [o.element_pair for o in ab] == [o.element_pair for o in ba]
    for x, y in zip(ab, ba):
        assert np.allclose(x.polygon, y.polygon)


def test_min_area_filter():
    a = make_layer(0, [make_element("a", 0, (0, 0), (0.6, 0))])
    b = make_layer(1, [make_element("b", 1, (0.599, 0), (1.2, 0))])
    assert find_overlaps(a, b) == []  # 0.001 x 0.0889 < 1e-4 m^2
    assert len(find_overlaps(a, b, min_area=1e-5)) == 1


# -- inward offset ----------------------------------------------------------


def test_offset_square():
    sq = np.array([[0, 0], [W, 0], [W, W], [0, W]])
    r = offset_inward(sq, 0.019)
    assert np.ptp(r[:, 0]) == pytest.approx(W - 0.038)
    assert np.ptp(r[:, 1]) == pytest.approx(0.0509)


def test_offset_beyond_inradius_empty():
    sq = np.array([[0, 0], [W, 0], [W, W], [0, W]])
    assert len(offset_inward(sq, W / 2)) == 0
    assert len(offset_inward(sq, 0.05)) == 0


def test_offset_skewed_quad_distance_oracle():
    quad = np.array([[0, 0], [0.2, 0.01], [0.23, 0.09], [0.02, 0.1]])
    d = 0.019
    r = offset_inward(quad, d)
    assert len(r) >= 3
    for v in r:
        dist = edge_distances(quad, v)
        assert np.all(dist >= d - 1e-12)
        # each offset vertex is pinned by at least two shifted edges
        assert np.sum(np.abs(dist - d) < 1e-9) >= 2


quads = st.builds(
    lambda w, h, j: np.array([[0, 0], [w, j[0]], [w + j[1], h], [j[2], h + j[3]]]),
    st.floats(0.05, 0.4), st.floats(0.05, 0.2),
    st.tuples(*[st.floats(-0.01, 0.01)] * 4),
)


@settings(max_examples=100, deadline=None)
@given(quads, st.floats(0.001, 0.04))
def test_offset_property(q, d):
    r = offset_inward(q, d)
    for v in r:
        assert np.all(edge_distances(q, v) >= d - 1e-12)


def test_simplify_drops_sliver_vertex():
    hexa = np.array([[0, 0], [0.1, 0], [0.2, 0.0002], [0.2, 0.05], [0.1, 0.05], [0, 0.05]])
    s = simplify_convex(hexa, 1e-3)
    assert len(s) == 4
    for v in s:
        assert point_in_convex(hexa, v)


# -- nail masks -------------------------------------------------------------


def quad_at_origin():
    return np.array([[0.0, 0.0], [0.14, 0.0], [0.14, 0.05], [0.0, 0.05]])


def positions_2d(nails):
    return {tuple(np.round(PLANE.to_2d(n.position)[0], 9)) for n in nails}


def test_quad_diagonals_alternate():
    q = quad_at_origin()
    ref = np.array([-1.0, -1.0, 0.0])  # nearest to (0, 0)
    even = positions_2d(nail_positions(q, 2, ref, PLANE))
    odd = positions_2d(nail_positions(q, 3, ref, PLANE))
    assert even == {(0.0, 0.0), (0.14, 0.05)}
    assert odd == {(0.14, 0.0), (0.0, 0.05)}


def test_triangle_mask():
    tri = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    ref = np.array([-1.0, -1.0, 0.0])
    assert len(nail_positions(tri, 0, ref, PLANE)) == 2
    assert len(nail_positions(tri, 1, ref, PLANE)) == 1
    assert positions_2d(nail_positions(tri, 1, ref, PLANE)) == {(0.1, 0.0)}


def test_pentagon_mask_enumeration():
    th = np.pi / 2 + 2 * np.pi * np.arange(5) / 5
    pent = 0.05 * np.column_stack([np.cos(th), np.sin(th)])
    ref = np.array([0.0, 1.0, 0.0])
    even = positions_2d(nail_positions(pent, 0, ref, PLANE))
    odd = positions_2d(nail_positions(pent, 1, ref, PLANE))
    assert len(even) == 3 and len(odd) == 2
    assert even.isdisjoint(odd)
    assert list(nail_mask(5, 0)) == [1, 0, 1, 0, 1]
    assert list(nail_mask(5, 1)) == [0, 1, 0, 1, 0]


def test_degenerate_polygon():
    with pytest.raises(ValueError):
        nail_positions(np.array([[0, 0], [1, 0]]), 0, np.zeros(3), PLANE)


# -- schedule & clearance ---------------------------------------------------


def test_wall_schedule_two_nails_per_quad():
    layers = stacked_wall(6, 6)
    sched = place_nails(layers)
    assert sched.overlaps and not sched.skipped
    assert len(sched.quad_overlaps()) == len(sched.overlaps)
    assert len(sched.nails) == 2 * len(sched.overlaps)
    assert check_nail_clearance(sched.nails).ok


def test_wall_nails_inside_with_margin():
    layers = stacked_wall(4, 6)
    sched = place_nails(layers, offset=0.019)
    by_id = {o.id: o for o in sched.overlaps}
    for n in sched.nails:
        ov = by_id[n.overlap_id]
        p2 = ov.interface_plane.to_2d(n.position)[0]
        assert np.all(edge_distances(ov.polygon, p2) >= 0.019 - 1e-12)


def test_colocated_nails_violate():
    p = np.array([0.1, 0.1, 0.0])
    nails = [NailPlacement(p, np.array([0, 0, 1.0]), "a", 1),
             NailPlacement(p + [0, 0, 0.0381], np.array([0, 0, 1.0]), "b", 2)]
    rep = check_nail_clearance(nails)
    assert len(rep.violations) == 1


def test_single_layer_no_pairs():
    nails = [NailPlacement(np.zeros(3), np.array([0, 0, 1.0]), "a", 1),
             NailPlacement(np.zeros(3), np.array([0, 0, 1.0]), "a", 1)]
    rep = check_nail_clearance(nails)
    assert rep.ok and rep.checked_pairs == 0
