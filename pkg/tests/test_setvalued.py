import numpy as np
import pytest

import diffinc as d


class TestBox:
    def test_dim_widths_center(self):
        b = d.Box(lo=(-1.0, 0.0), hi=(1.0, 4.0))
        assert b.dim == 2
        assert np.array_equal(b.widths(), [2.0, 4.0])
        assert np.array_equal(b.center(), [0.0, 2.0])

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            d.Box(lo=(1.0,), hi=(0.0,))

    def test_contains_with_tolerance(self):
        b = d.Box(lo=(0.0,), hi=(1.0,))
        assert b.contains(np.array([1.0]))
        assert not b.contains(np.array([1.0 + 1e-7]))
        assert b.contains(np.array([1.0 + 1e-7]), tol=1e-6)

    def test_corners_order_is_product_order(self):
        b = d.Box(lo=(0.0, 0.0), hi=(1.0, 2.0))
        expected = [[0.0, 0.0], [0.0, 2.0], [1.0, 0.0], [1.0, 2.0]]
        assert np.array_equal(b.corners(), expected)

    def test_boundary_distance_and_face(self):
        b = d.Box(lo=(0.0, 0.0), hi=(2.0, 2.0))
        assert b.boundary_distance(np.array([0.5, 1.0])) == 0.5
        assert b.boundary_distance(np.array([-0.25, 1.0])) == -0.25
        assert b.nearest_face(np.array([0.5, 1.0])) == "x1_min"
        assert b.nearest_face(np.array([1.0, 1.9])) == "x2_max"


class TestConvexSet:
    def test_canonicalization_dedups_and_sorts(self):
        a = d.ConvexSet(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
        b = d.ConvexSet(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert a == b
        assert hash(a) == hash(b)
        assert len(a) == 2

    def test_near_duplicates_merge(self):
        a = d.ConvexSet(np.array([[1.0], [1.0 + 1e-13]]))
        assert len(a) == 1

    def test_vertices_read_only(self):
        a = d.ConvexSet(np.array([[1.0, 2.0]]))
        with pytest.raises(ValueError):
            a.vertices[0, 0] = 3.0

    def test_centroid_and_max_norm(self):
        a = d.ConvexSet(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert np.array_equal(a.centroid, [1.0, 0.0])
        assert a.max_norm() == 2.0

    def test_dimension_mismatch(self):
        with pytest.raises(d.DimensionMismatchError):
            d.hull_distance(d.ConvexSet(np.array([[1.0, 0.0]])), np.array([1.0]))


class TestMinNormPoint:
    def test_segment_midpoint(self):
        p = d.min_norm_point(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.max(np.abs(p - 0.5)) < 1e-10

    def test_nearest_vertex_when_zero_outside(self):
        p = d.min_norm_point(np.array([[1.0, 1.0], [2.0, 1.0], [1.5, 3.0]]))
        assert np.max(np.abs(p - [1.0, 1.0])) < 1e-10

    def test_zero_when_hull_contains_origin(self):
        p = d.min_norm_point(np.array([[-1.0, -1.0], [1.0, -1.0], [0.0, 2.0]]))
        assert float(np.linalg.norm(p)) < 1e-10

    def test_single_point(self):
        assert np.array_equal(d.min_norm_point(np.array([[3.0, 4.0]])), [3.0, 4.0])


class TestHullDistances:
    def test_member_distance_is_exactly_zero(self):
        C = d.ConvexSet(np.array([[-1.0], [1.0]]))
        assert d.hull_distance(C, np.array([0.3])) == 0.0
        assert d.hull_distance(C, np.array([1.0])) == 0.0

    def test_outside_distance(self):
        C = d.ConvexSet(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert abs(d.hull_distance(C, np.array([1.0, 0.9])) - 0.9) < 1e-12

    def test_hull_contains_respects_tol(self):
        C = d.ConvexSet(np.array([[0.0]]))
        assert d.hull_contains(C, np.array([0.05]), tol=0.1)
        assert not d.hull_contains(C, np.array([0.2]), tol=0.1)

    def test_hausdorff_of_intervals(self):
        A = d.ConvexSet(np.array([[-1.0], [1.0]]))
        B = d.ConvexSet(np.array([[-0.5], [2.0]]))
        # sup over A of dist to B is 0.5 (at -1); sup over B of dist to A is 1.0
        assert abs(d.hausdorff_distance(A, B) - 1.0) < 1e-12

    def test_hausdorff_identical_is_zero(self):
        A = d.ConvexSet(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert d.hausdorff_distance(A, A) == 0.0


class TestInflateAndHullOf:
    def test_inflate_interval(self):
        C = d.ConvexSet(np.array([[-1.0], [1.0]]))
        grown = d.inflate(C, 0.25)
        assert d.hull_contains(grown, np.array([1.25]), tol=1e-12)
        assert d.hull_contains(grown, np.array([-1.25]), tol=1e-12)
        assert not d.hull_contains(grown, np.array([1.26]), tol=1e-12)

    def test_inflate_circumscribes_the_ball_2d(self):
        C = d.ConvexSet(np.array([[0.0, 0.0]]))
        grown = d.inflate(C, 1.0, facets=16)
        # circumscribed polygon: every direction reaches at least radius 1
        for th in np.linspace(0.0, 2 * np.pi, 37):
            v = np.array([np.cos(th), np.sin(th)])
            assert d.hull_contains(grown, v, tol=1e-9)

    def test_hull_of_unions_vertices(self):
        A = d.ConvexSet(np.array([[0.0]]))
        B = d.ConvexSet(np.array([[1.0]]))
        u = d.hull_of([A, B])
        assert d.hull_contains(u, np.array([0.5]), tol=0.0)


class TestMaps:
    def test_constant_map_evaluates_to_its_value(self):
        val = d.ConvexSet(np.array([[-1.0], [1.0]]))
        F = d.ConstantSetMap(value=val, domain=d.Box(lo=(-2.0,), hi=(2.0,)))
        assert F.evaluate(np.array([0.7])) == val

    def test_single_valued_map_wraps_function(self):
        F = d.SingleValuedMap(f=lambda x: -x, domain=d.Box(lo=(-2.0,), hi=(2.0,)))
        out = F.evaluate(np.array([0.5]))
        assert len(out) == 1
        assert np.array_equal(out.vertices[0], [-0.5])

    def test_vertex_field_map_collects_fields(self):
        F = d.VertexFieldMap(
            fields=(lambda x: np.array([1.0]), lambda x: np.array([-1.0])),
            domain=d.Box(lo=(-2.0,), hi=(2.0,)),
        )
        out = F.evaluate(np.array([0.0]))
        assert len(out) == 2

    def test_nonfinite_value_is_typed_error(self):
        F = d.SingleValuedMap(
            f=lambda x: np.full_like(x, np.inf), domain=d.Box(lo=(-2.0,), hi=(2.0,))
        )
        with pytest.raises(d.EvaluationError):
            F.evaluate(np.array([1.0]))


class TestSampling:
    def test_sample_box_is_deterministic(self):
        b = d.Box(lo=(0.0, 0.0), hi=(1.0, 1.0))
        assert np.array_equal(d.sample_box(b, 32, seed=5), d.sample_box(b, 32, seed=5))

    def test_sample_box_includes_center_and_corners(self):
        b = d.Box(lo=(0.0,), hi=(1.0,))
        s = d.sample_box(b, 16, seed=0)
        assert any(np.array_equal(row, [0.5]) for row in s)
        assert any(np.array_equal(row, [0.0]) for row in s)
        assert any(np.array_equal(row, [1.0]) for row in s)

    def test_samples_stay_inside(self):
        b = d.Box(lo=(-1.0, 2.0), hi=(1.0, 3.0))
        s = d.sample_box(b, 64, seed=1)
        assert np.all(s >= np.array(b.lo)) and np.all(s <= np.array(b.hi))

    def test_estimate_bound_hits_corner_maximum(self):
        # |f| = |x| peaks at the corners, which sample_box always includes
        F = d.SingleValuedMap(f=lambda x: -x, domain=d.Box(lo=(-2.0,), hi=(2.0,)))
        assert d.estimate_bound(F, F.domain) == 2.0


class TestUscProbe:
    def test_constant_map_passes_at_top_delta(self):
        F = d.ConstantSetMap(
            value=d.ConvexSet(np.array([[1.0]])), domain=d.Box(lo=(-2.0,), hi=(2.0,))
        )
        assert d.usc_probe(F, np.array([0.0]), eps=0.1) == 0.2

    def test_jump_map_fails_near_the_jump(self):
        # value jumps from {0} to {1} at x = 0 with no hull bridging
        F = d.SingleValuedMap(
            f=lambda x: np.where(x > 0, 1.0, 0.0) * np.ones_like(x),
            domain=d.Box(lo=(-2.0,), hi=(2.0,)),
        )
        assert d.usc_probe(F, np.array([0.0]), eps=0.1) is None

    def test_grid_must_be_decreasing(self):
        F = d.ConstantSetMap(
            value=d.ConvexSet(np.array([[1.0]])), domain=d.Box(lo=(-2.0,), hi=(2.0,))
        )
        with pytest.raises(ValueError):
            d.usc_probe(F, np.array([0.0]), eps=0.1, delta_grid=(0.1, 0.2))

    def test_check_point_reports_shape_flags(self):
        F = d.ConstantSetMap(
            value=d.ConvexSet(np.array([[-1.0], [1.0]])),
            domain=d.Box(lo=(-2.0,), hi=(2.0,)),
        )
        rep = d.check_point(F, np.array([0.0]))
        assert rep.nonempty and rep.bounded and rep.closed_convex
        assert rep.max_norm == 1.0
        assert rep.usc[0][0] == 0.1 and rep.usc[0][1] == 0.2
