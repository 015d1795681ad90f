"""QP assembly, the terminal-time sweep and its optimality against sampling."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mergeplan.core import Polynomial, ReferenceLine
from mergeplan.opportunity import classify
from mergeplan.planner import (EgoPlanState, LateralSpec, LongitudinalMode,
                               LongitudinalSpec, PlannerConfig, build_lateral_qp,
                               build_longitudinal_qp, gram_matrix, plan,
                               select_mode)
from mergeplan.prediction import EgoMotion, TargetMotion, gap_midpoint
from mergeplan.qpsolve import QpStatus, solve

from _oracles import (oracle_lateral, oracle_longitudinal_distance,
                      oracle_plan_costs)

REF = ReferenceLine()


def co_moving_gap(front_s=6.0, rear_s=-14.0, speed=10.0):
    return (TargetMotion(s0=front_s, v0=speed), TargetMotion(s0=rear_s, v0=speed))


def default_lat(d0=3.75, **kw):
    return LateralSpec(d0=d0, **kw)


class TestGramMatrix:
    @pytest.mark.parametrize("order", [0, 2, 3])
    @pytest.mark.parametrize("te", [4.5, 6.0, 7.0])
    def test_matches_quadrature(self, order, te):
        n = 6
        g = gram_matrix(order, n, te)
        for i in range(n):
            for j in range(i, n):
                def integrand(t, i=i, j=j):
                    pi = np.zeros(n); pi[i] = 1.0
                    pj = np.zeros(n); pj[j] = 1.0
                    di = np.polynomial.polynomial.polyder(pi, m=order)
                    dj = np.polynomial.polynomial.polyder(pj, m=order)
                    return (np.polynomial.polynomial.polyval(t, di)
                            * np.polynomial.polynomial.polyval(t, dj))
                expect, _ = quad(integrand, 0.0, te)
                assert g[i, j] == pytest.approx(expect, rel=1e-10, abs=1e-12)
                assert g[j, i] == g[i, j]


class TestLateralQp:
    def test_staying_in_lane_is_free(self):
        spec = default_lat(d0=0.0, k_offset=0.0)
        qp = build_lateral_qp(spec, 5.0)
        sol = solve(qp)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, 0.0, atol=1e-9)
        assert 0.5 * sol.x @ qp.H @ sol.x == pytest.approx(0.0, abs=1e-12)

    def test_lane_change_meets_accel_bound(self):
        qp = build_lateral_qp(default_lat(), 6.0)
        sol = solve(qp)
        assert sol.status is QpStatus.OPTIMAL
        poly = Polynomial(tuple(sol.x), 6.0)
        t = np.linspace(0, 6.0, 1201)
        assert np.abs(poly.eval(t, 2)).max() <= 1.5 + 1e-8
        assert poly.eval(0.0) == pytest.approx(3.75, abs=1e-9)
        assert poly.eval(6.0, 1) == pytest.approx(0.0, abs=1e-9)
        assert poly.eval(6.0, 2) == pytest.approx(0.0, abs=1e-9)
        assert abs(poly.eval(6.0)) <= 0.5 * 3.75 + 1e-9

    def test_te_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            build_lateral_qp(default_lat(), 4.0)
        with pytest.raises(ValueError):
            build_lateral_qp(default_lat(), 7.5)

    def test_matches_end_state_sampling(self):
        spec = default_lat()
        for te in (4.5, 5.5, 7.0):
            sol = solve(build_lateral_qp(spec, te))
            qp_cost = 0.5 * sol.x @ build_lateral_qp(spec, te).H @ sol.x
            oracle = oracle_lateral(spec, te, n_samples=2001)
            assert qp_cost <= oracle + 1e-9
            assert oracle - qp_cost <= 0.01 * max(qp_cost, 1e-9)


class TestLongitudinalQp:
    def test_already_on_target_uniform_motion(self):
        front, rear = co_moving_gap(front_s=10.0, rear_s=-10.0)
        spec = LongitudinalSpec(s0=0.0, s0_dot=10.0,
                                s_target_fn=lambda t: gap_midpoint(front, rear, t))
        qp = build_longitudinal_qp(spec, 5.0)
        sol = solve(qp)
        assert sol.status is QpStatus.OPTIMAL
        poly = Polynomial(tuple(sol.x), 5.0)
        t = np.linspace(0, 5, 51)
        np.testing.assert_allclose(poly.eval(t), 10.0 * t, atol=1e-6)
        resid = poly.eval(t) - gap_midpoint(front, rear, t)[0]
        assert np.abs(resid).max() < 1e-6

    def test_velocity_mode_holds_set_speed(self):
        spec = LongitudinalSpec(s0=0.0, s0_dot=12.0, mode=LongitudinalMode.VELOCITY,
                                v_set=12.0)
        qp = build_longitudinal_qp(spec, 5.0)
        assert qp.H.shape == (5, 5)  # quartic: terminal position is free
        sol = solve(qp)
        poly = Polynomial(tuple(sol.x), 5.0)
        t = np.linspace(0, 5, 51)
        np.testing.assert_allclose(poly.eval(t, 1), 12.0, atol=1e-8)

    def test_terminal_window_factors(self):
        # Terminal position constrained to [0.8, 1.2] x target distance,
        # here with the lower bound active (gap slightly ahead of the ego).
        front, rear = co_moving_gap(front_s=25.0, rear_s=5.0)
        spec = LongitudinalSpec(s0=0.0, s0_dot=10.0,
                                s_target_fn=lambda t: gap_midpoint(front, rear, t))
        te = 5.0
        qp = build_longitudinal_qp(spec, te)
        target_end = gap_midpoint(front, rear, te)[0]
        row, b_lo = qp.Aieq[0], qp.bieq[0]
        assert b_lo == pytest.approx(0.8 * target_end)
        assert -qp.bieq[1] == pytest.approx(1.2 * target_end)
        sol = solve(qp)
        assert sol.status is QpStatus.OPTIMAL
        end = float(row @ sol.x)
        assert 0.8 * target_end - 1e-8 <= end <= 1.2 * target_end + 1e-8

    def test_distance_oracle_dominated(self):
        front, rear = co_moving_gap()
        spec = LongitudinalSpec(s0=0.0, s0_dot=7.5, k_track=0.7,
                                s_target_fn=lambda t: gap_midpoint(front, rear, t))
        te = 5.0
        qp = build_longitudinal_qp(spec, te)
        sol = solve(qp)
        g_pos = gap_midpoint(front, rear, np.linspace(0, te, 51))[0]
        w = np.full(51, 0.1); w[0] = w[-1] = 0.05
        poly = Polynomial(tuple(sol.x), te)
        resid = g_pos - poly.eval(np.linspace(0, te, 51))
        track_const = 0.7 * float(w @ (g_pos * g_pos))
        qp_cost = 0.5 * sol.x @ qp.H @ sol.x + qp.f @ sol.x + track_const
        oracle = oracle_longitudinal_distance(spec, te, n_samples=2001)
        assert qp_cost <= oracle + 1e-9


class TestSelectMode:
    def test_two_real_targets_distance(self):
        sc = classify(EgoMotion(v0=9.0), [TargetMotion(s0=-12, v0=9),
                                          TargetMotion(s0=12, v0=9)])
        assert select_mode(sc) is LongitudinalMode.DISTANCE

    def test_open_road_velocity(self):
        sc = classify(EgoMotion(v0=9.0), [])
        assert select_mode(sc) is LongitudinalMode.VELOCITY

    def test_single_target_distance_fixed_headway(self):
        # One real vehicle ahead plus its synthesized rear companion: the
        # midpoint reduces to a fixed headway behind the real target.
        ego = EgoMotion(v0=9.0)
        real = TargetMotion(s0=18.0, v0=9.0)
        sc = classify(ego, [real])
        assert select_mode(sc) is LongitudinalMode.DISTANCE
        half_gap = 0.5 * (3.0 * ego.v0 + 20.0)
        for t in (0.0, 3.0, 6.0):
            mid = gap_midpoint(sc.target_a, sc.target_b, t)[0]
            lead = 18.0 + 9.0 * t
            assert mid == pytest.approx(lead - half_gap)


class TestPlan:
    def test_boundary_and_grid_constraints(self):
        front, rear = co_moving_gap()
        ego = EgoPlanState(d0=3.75, s0_dot=7.5)
        cfg = PlannerConfig()
        result = plan(ego, (front, rear), cfg, ref=REF)
        assert result is not None
        te = result.te
        lat, lon = result.lateral, result.longitudinal
        # Boundary equalities to 1e-9.
        assert lat.eval(0.0) == pytest.approx(3.75, abs=1e-9)
        assert lat.eval(0.0, 1) == pytest.approx(0.0, abs=1e-9)
        assert lat.eval(0.0, 2) == pytest.approx(0.0, abs=1e-9)
        assert lat.eval(te, 1) == pytest.approx(0.0, abs=1e-9)
        assert lat.eval(te, 2) == pytest.approx(0.0, abs=1e-9)
        assert lon.eval(0.0) == pytest.approx(0.0, abs=1e-9)
        assert lon.eval(0.0, 1) == pytest.approx(7.5, abs=1e-9)
        g_vel = gap_midpoint(front, rear, te)[1]
        assert lon.eval(te, 1) == pytest.approx(g_vel, abs=1e-9)
        # Middle-point constraints on the 0.1 s grid.
        grid = np.linspace(0.0, te, int(round(te / 0.1)) + 1)
        assert np.abs(lat.eval(grid, 1)).max() <= 2.0 + 1e-8
        assert np.abs(lat.eval(grid, 2)).max() <= 1.5 + 1e-8
        assert lon.eval(grid, 1).min() >= -1e-8
        assert lon.eval(grid, 1).max() <= 33.3 + 1e-8
        assert np.abs(lon.eval(grid, 2)).max() <= 2.5 + 1e-8
        # Lateral acceleration stays under the comfort limit everywhere.
        fine = np.linspace(0.0, te, 2001)
        assert np.abs(lat.eval(fine, 2)).max() <= 1.5 + 1e-6

    def test_c2_continuity(self):
        front, rear = co_moving_gap()
        result = plan(EgoPlanState(d0=3.75, s0_dot=7.5), (front, rear),
                      PlannerConfig(), ref=REF)
        dt = 0.01
        t = np.arange(dt, result.te - dt, dt)
        for poly in (result.lateral, result.longitudinal):
            vals_p = poly.eval(t + dt)
            vals_m = poly.eval(t - dt)
            vals = poly.eval(t)
            fd2 = (vals_p - 2 * vals + vals_m) / dt**2
            assert np.abs(fd2 - poly.eval(t, 2)).max() < 1e-4

    def test_time_penalty_monotone(self):
        front, rear = co_moving_gap()
        ego = EgoPlanState(d0=3.75, s0_dot=7.5)
        chosen = []
        for k_time in (0.0, 0.05, 0.2, 1.0):
            cfg = PlannerConfig(k_time=k_time)
            result = plan(ego, (front, rear), cfg, ref=REF)
            chosen.append(result.te)
        assert all(b <= a + 1e-9 for a, b in zip(chosen, chosen[1:]))

    def test_te_step_refinement_stable(self):
        front, rear = co_moving_gap()
        ego = EgoPlanState(d0=3.75, s0_dot=7.5)
        coarse = plan(ego, (front, rear), PlannerConfig(), ref=REF)
        fine = plan(ego, (front, rear), PlannerConfig(te_step=0.05), ref=REF)
        assert abs(fine.cost_total - coarse.cost_total) < 0.01 * coarse.cost_total

    def test_extreme_search_oracle(self):
        front, rear = co_moving_gap()
        ego = EgoPlanState(d0=3.75, s0_dot=7.5)
        cfg = PlannerConfig()
        result = plan(ego, (front, rear), cfg, ref=REF)
        lat_spec = LateralSpec(d0=3.75, k_offset=cfg.k_offset)
        lon_spec = LongitudinalSpec(
            s0=0.0, s0_dot=7.5, k_track=cfg.k_track,
            s_target_fn=lambda t: gap_midpoint(front, rear, t))
        oracle = oracle_plan_costs(lat_spec, lon_spec, cfg)
        feasible = {te: c for te, c in oracle.items() if c is not None}
        best_te = min(feasible, key=feasible.get)
        assert result.cost_total <= feasible[result.te] + 1e-9
        assert abs(result.te - best_te) <= cfg.te_step + 1e-9

    def test_all_infeasible_returns_none(self):
        # Initial speed far above the rate bound: every sample violates the
        # grid constraint at t=0.
        front, rear = co_moving_gap()
        result = plan(EgoPlanState(d0=3.75, s0_dot=40.0), (front, rear),
                      PlannerConfig(), ref=REF)
        assert result is None

    def test_nothing_to_do_is_near_free(self):
        # Zero lateral offset, mid-gap, matched speed: the plan is a straight
        # cruise whose only cost is the terminal-time penalty.
        front, rear = co_moving_gap(front_s=10.0, rear_s=-10.0)
        cfg = PlannerConfig()
        result = plan(EgoPlanState(d0=0.0, s0_dot=10.0), (front, rear), cfg,
                      ref=REF)
        assert result.cost_tilde == pytest.approx(0.0, abs=1e-6)
        assert result.cost_total == pytest.approx(cfg.k_time * result.te, abs=1e-6)
        assert result.te == pytest.approx(cfg.te_min)

    def test_velocity_mode_plan(self):
        result = plan(EgoPlanState(d0=3.75, s0_dot=10.0), None, PlannerConfig(),
                      mode=LongitudinalMode.VELOCITY, v_set=10.0, ref=REF)
        assert result is not None
        t = np.linspace(0, result.te, 101)
        np.testing.assert_allclose(result.longitudinal.eval(t, 1), 10.0, atol=1e-6)
        assert len(result.longitudinal.coefficients) == 5

    def test_trajectory_assembly(self):
        front, rear = co_moving_gap()
        result = plan(EgoPlanState(d0=3.75, s0_dot=7.5), (front, rear),
                      PlannerConfig(), ref=ReferenceLine(origin=(100.0, 0.0)))
        traj = result.trajectory
        assert traj.dt == pytest.approx(0.1)
        assert traj.points[0].x == pytest.approx(100.0)
        assert traj.points[0].y == pytest.approx(3.75)
        # Speed column matches the combined profile magnitude.
        mid = len(traj) // 2
        p = traj.points[mid]
        sd = result.longitudinal.eval(p.t, 1)
        dd = result.lateral.eval(p.t, 1)
        assert p.v == pytest.approx(math.hypot(sd, dd), rel=1e-12)


def test_fast_path_matches_generic_solver():
    from mergeplan.planner import (_lateral_solver, _solve_or_fallback)
    spec = default_lat()
    for te in (4.5, 5.1, 6.3, 7.0):
        solver = _lateral_solver(spec, te, 0.1)
        beq = np.array([spec.d0, spec.d0_dot, spec.d0_ddot, 0.0, 0.0])
        x_fast = _solve_or_fallback(solver, beq, solver.terminal_b)
        qp = build_lateral_qp(spec, te)
        sol = solve(qp)
        obj_fast = 0.5 * x_fast @ qp.H @ x_fast
        obj_ref = 0.5 * sol.x @ qp.H @ sol.x
        assert obj_fast == pytest.approx(obj_ref, rel=1e-9, abs=1e-9)
        assert (qp.Aieq @ x_fast - qp.bieq).min() >= -1e-8
