"""Polynomial evaluation, Frenet mapping and discrete trajectory geometry."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergeplan.core import (DegenerateGeometryError, Polynomial, ReferenceLine,
                            Trajectory, annotate, frenet_to_cartesian)
from mergeplan.selftest import lane_change_fixture_polynomials


def make_trajectory(xy, dt=0.1):
    n = len(xy)
    t = dt * np.arange(n)
    z = np.zeros(n)
    return Trajectory.from_arrays(dt, t, z, z, xy[:, 0], xy[:, 1], z, z,
                                  np.ones(n), z)


class TestPolynomial:
    def test_zero_polynomial(self):
        p = Polynomial((0, 0, 0, 0, 0, 0), 5.0)
        assert p.eval(3.0, 0) == 0.0

    def test_linear_term_derivative(self):
        p = Polynomial((1, 2, 0, 0, 0, 0), 5.0)
        assert p.eval(2.0, 1) == pytest.approx(2.0)

    def test_cubic_second_derivative(self):
        p = Polynomial((0, 0, 0, 1, 0, 0), 5.0)
        assert p.eval(2.0, 2) == pytest.approx(12.0)

    def test_domain_error(self):
        p = Polynomial((0, 1, 0, 0, 0), 2.0)
        with pytest.raises(ValueError):
            p.eval(2.5)
        with pytest.raises(ValueError):
            p.eval(-0.5)

    def test_order_validation(self):
        p = Polynomial((0, 1, 0, 0, 0), 2.0)
        with pytest.raises(ValueError):
            p.eval(1.0, order=4)

    def test_coefficient_count(self):
        with pytest.raises(ValueError):
            Polynomial((1, 2, 3), 1.0)
        with pytest.raises(ValueError):
            Polynomial((1,) * 7, 1.0)

    def test_horizon_positive(self):
        with pytest.raises(ValueError):
            Polynomial((0,) * 6, 0.0)
        with pytest.raises(ValueError):
            Polynomial((0,) * 6, math.inf)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6),
           st.lists(st.floats(-5, 5), min_size=6, max_size=6),
           st.floats(0.0, 4.0), st.integers(0, 3))
    @settings(max_examples=60, deadline=None)
    def test_eval_linear_in_coefficients(self, a, b, t, order):
        pa = Polynomial(tuple(a), 4.0)
        pb = Polynomial(tuple(b), 4.0)
        psum = Polynomial(tuple(x + y for x, y in zip(a, b)), 4.0)
        lhs = psum.eval(t, order)
        rhs = pa.eval(t, order) + pb.eval(t, order)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestFrenet:
    def test_on_axis(self):
        assert frenet_to_cartesian(ReferenceLine(), 10.0, 0.0) == pytest.approx((10.0, 0.0))

    def test_pure_lateral(self):
        x, y = frenet_to_cartesian(ReferenceLine(), 0.0, 3.75)
        assert (x, y) == pytest.approx((0.0, 3.75))

    def test_rotated_frame(self):
        x, y = frenet_to_cartesian(ReferenceLine(heading=math.pi / 2), 5.0, 1.0)
        assert (x, y) == pytest.approx((-1.0, 5.0), abs=1e-12)

    def test_lane_width_validated(self):
        with pytest.raises(ValueError):
            ReferenceLine(lane_width=0.0)

    @given(st.floats(-50, 50), st.floats(-10, 10),
           st.floats(-50, 50), st.floats(-10, 10),
           st.floats(-math.pi, math.pi))
    @settings(max_examples=60, deadline=None)
    def test_isometry(self, s1, d1, s2, d2, theta):
        ref = ReferenceLine(origin=(3.0, -2.0), heading=theta)
        p1 = frenet_to_cartesian(ref, s1, d1)
        p2 = frenet_to_cartesian(ref, s2, d2)
        dist_sd = math.hypot(s2 - s1, d2 - d1)
        dist_xy = math.hypot(p2[0] - p1[0], p2[1] - p1[1])
        assert dist_xy == pytest.approx(dist_sd, rel=1e-9, abs=1e-9)


class TestAnnotate:
    def test_straight_line(self):
        xy = np.column_stack([np.linspace(0, 9, 10), np.zeros(10)])
        ann = annotate(make_trajectory(xy))
        assert np.allclose(ann.column("curvature"), 0.0)
        assert np.allclose(ann.column("heading"), 0.0)

    def test_slanted_line_constant_heading(self):
        xy = np.column_stack([np.linspace(0, 9, 10), np.linspace(0, 4.5, 10)])
        ann = annotate(make_trajectory(xy))
        assert np.allclose(ann.column("curvature"), 0.0, atol=1e-12)
        assert np.allclose(ann.column("heading"), math.atan2(0.5, 1.0))

    def test_circle_curvature(self):
        radius = 100.0
        theta = np.arange(0, 0.5, 1.0 / radius)
        xy = np.column_stack([radius * np.sin(theta), radius * (1 - np.cos(theta))])
        ann = annotate(make_trajectory(xy))
        k = ann.column("curvature")[1:-1]
        assert np.all(np.abs(k - 0.01) < 1e-4)

    def test_lane_change_peak_curvature(self):
        # 3.5 m over 65 m quintic transfer sampled at ~0.5 m spacing.
        lat, lon = lane_change_fixture_polynomials()
        t = np.linspace(0, 6.5, 131)
        xy = np.column_stack([lon.eval(t), lat.eval(t)])
        ann = annotate(make_trajectory(xy, dt=0.05))
        kmax = np.abs(ann.column("curvature")).max()
        assert 4.0e-3 <= kmax <= 5.0e-3

    def test_endpoints_copy_interior(self):
        rng = np.random.default_rng(3)
        xy = np.cumsum(rng.uniform(0.5, 1.0, size=(8, 2)), axis=0)
        ann = annotate(make_trajectory(xy))
        k = ann.column("curvature")
        h = ann.column("heading")
        assert k[0] == k[1] and k[-1] == k[-2]
        assert h[-1] == h[-2]

    def test_coincident_points_rejected(self):
        xy = np.array([[0.0, 0], [1, 0], [1, 0], [2, 0], [3, 0]])
        with pytest.raises(DegenerateGeometryError):
            annotate(make_trajectory(xy))


class TestTrajectory:
    def test_needs_four_points(self):
        xy = np.array([[0.0, 0], [1, 0], [2, 0]])
        with pytest.raises(ValueError):
            make_trajectory(xy)

    def test_uniform_spacing_enforced(self):
        t = np.array([0.0, 0.1, 0.25, 0.3])
        z = np.zeros(4)
        with pytest.raises(ValueError):
            Trajectory.from_arrays(0.1, t, z, z, z, z, z, z, z, z)

    def test_csv_round_trip(self, tmp_path):
        xy = np.column_stack([np.linspace(0, 12, 13), np.linspace(0, 3, 13) ** 2 / 4])
        traj = annotate(make_trajectory(xy))
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        back = Trajectory.from_csv(path)
        assert len(back) == len(traj)
        np.testing.assert_allclose(back.column("x"), traj.column("x"), rtol=1e-5)
        np.testing.assert_allclose(back.column("curvature"),
                                   traj.column("curvature"), rtol=1e-5, atol=1e-9)
        # Re-writing the parsed trajectory reproduces the file byte for byte.
        path2 = tmp_path / "traj2.csv"
        back.to_csv(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_csv_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            Trajectory.from_csv(path)

    def test_committed_fixture_loads(self, lane_change_csv):
        traj = Trajectory.from_csv(lane_change_csv)
        assert len(traj) == 131
        ann = annotate(traj)
        assert 4.0e-3 <= np.abs(ann.column("curvature")).max() <= 5.0e-3


def test_monomial_conditioning_at_max_horizon():
    # The monomial basis stays workable over the 7 s horizon: the boundary
    # system of a quintic (value/rate/acceleration rows at both ends) still
    # solves to well below the 1e-9 equality budget.
    from mergeplan.planner import _derivative_row

    te = 7.0
    rows = np.vstack([_derivative_row(t, k, 6) for t in (0.0, te) for k in (0, 1, 2)])
    rhs = np.array([3.75, 0.0, 0.0, 0.0, 0.0, 0.0])
    coeffs = np.linalg.solve(rows, rhs)
    assert np.abs(rows @ coeffs - rhs).max() < 1e-10
    assert np.linalg.cond(rows) < 1e7
