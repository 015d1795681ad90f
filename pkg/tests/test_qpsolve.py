"""Active-set QP solver against hand solutions, probes and the PG oracle."""

import numpy as np
import pytest

from mergeplan.qpsolve import QpProblem, QpStatus, kkt_check, solve
from mergeplan.selftest import projected_gradient_box, qp_objective, random_box_qp


class TestSolveBasics:
    def test_unconstrained_stationary_point(self):
        p = QpProblem(H=np.eye(2), f=[-1.0, -2.0])
        sol = solve(p)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0, 2.0], atol=1e-8)

    def test_symmetric_projection(self):
        p = QpProblem(H=np.eye(2), f=[0.0, 0.0], Aeq=[[1.0, 1.0]], beq=[2.0])
        sol = solve(p)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-10)

    def test_single_active_bound(self):
        # min (x-2)^2 s.t. x <= 1
        p = QpProblem(H=[[2.0]], f=[-4.0], Aieq=[[-1.0]], bieq=[-1.0])
        sol = solve(p)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0], atol=1e-10)
        assert sol.active_set == (0,)

    def test_inconsistent_equalities(self):
        p = QpProblem(H=np.eye(2), f=np.zeros(2),
                      Aeq=[[1.0, 0.0], [1.0, 0.0]], beq=[0.0, 1.0])
        assert solve(p).status is QpStatus.INFEASIBLE

    def test_empty_region(self):
        p = QpProblem(H=[[2.0]], f=[0.0], Aieq=[[1.0], [-1.0]], bieq=[1.0, 0.0])
        assert solve(p).status is QpStatus.INFEASIBLE

    def test_semidefinite_direction_handled(self):
        # Flat direction along x2, pinned by an equality.
        h = np.diag([2.0, 0.0])
        p = QpProblem(H=h, f=[-2.0, 0.0], Aeq=[[0.0, 1.0]], beq=[3.0])
        sol = solve(p)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0, 3.0], atol=1e-6)

    def test_multiple_active_constraints(self):
        # Corner of a box is the optimum.
        p = QpProblem(H=np.eye(2), f=[-10.0, -10.0],
                      Aieq=[[-1.0, 0.0], [0.0, -1.0]], bieq=[-1.0, -2.0])
        sol = solve(p)
        assert sol.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0, 2.0], atol=1e-9)
        assert sol.active_set == (0, 1)


class TestProblemValidation:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            QpProblem(H=[[1.0, 2.0], [0.0, 1.0]], f=[0.0, 0.0])

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            QpProblem(H=[[-1.0]], f=[0.0])

    def test_indefinite_ok_when_constrained_away(self):
        # Negative curvature direction removed by the equality constraint.
        h = np.array([[1.0, 0.0], [0.0, -1.0]])
        p = QpProblem(H=h, f=[0.0, 0.0], Aeq=[[0.0, 1.0]], beq=[0.0])
        assert solve(p).status is QpStatus.OPTIMAL

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            QpProblem(H=np.eye(2), f=[1.0])
        with pytest.raises(ValueError):
            QpProblem(H=np.eye(2), f=[1.0, 2.0], Aieq=[[1.0]], bieq=[0.0])


class TestKktCheck:
    def test_self_consistency(self):
        p = QpProblem(H=np.eye(2), f=[-1.0, -2.0])
        sol = solve(p)
        assert kkt_check(p, sol.x).max_residual <= 1e-8

    def test_perturbation_sensitivity(self):
        p = QpProblem(H=np.eye(2), f=[-1.0, -2.0])
        report = kkt_check(p, [1.0 + 1e-3, 2.0])
        assert report.max_residual > 1e-4

    def test_feasible_non_optimal_point(self):
        rng = np.random.default_rng(11)
        p = random_box_qp(rng)
        n = p.n
        lb, ub = p.bieq[:n], -p.bieq[n:]
        # Rejection-sample an interior point away from the optimum.
        x_opt = solve(p).x
        while True:
            x = rng.uniform(lb, ub)
            if np.linalg.norm(x - x_opt) > 0.3:
                break
        report = kkt_check(p, x)
        assert report.stationarity > 1e-6

    def test_reports_infeasibility(self):
        p = QpProblem(H=[[2.0]], f=[0.0], Aieq=[[1.0]], bieq=[1.0])
        report = kkt_check(p, np.array([0.0]))
        assert report.primal_ineq > 0.1

    def test_dimension_checked(self):
        p = QpProblem(H=np.eye(2), f=np.zeros(2))
        with pytest.raises(ValueError):
            kkt_check(p, [1.0])


class TestRandomSuites:
    def test_box_problems_match_projected_gradient(self):
        # 200 seeded strictly convex problems; objective within 1e-6 of the
        # independent solver route, KKT residual within 1e-8, every instance.
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = random_box_qp(rng)
            sol = solve(p, tol=1e-10, max_iter=300)
            assert sol.status is QpStatus.OPTIMAL
            n = p.n
            x_pg = projected_gradient_box(p.H, p.f, p.bieq[:n], -p.bieq[n:])
            assert abs(qp_objective(p, sol.x) - qp_objective(p, x_pg)) <= 1e-6
            assert kkt_check(p, sol.x).max_residual <= 1e-8

    def test_general_polyhedra_local_optimality_probe(self):
        # Random equality + inequality problems, feasible by construction;
        # the solution beats every feasible vertex of a coordinate stencil.
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(3, 8))
            q, _ = np.linalg.qr(rng.normal(size=(n, n)))
            h = q @ np.diag(rng.uniform(0.5, 8.0, n)) @ q.T
            h = 0.5 * (h + h.T)
            f = rng.normal(size=n)
            x0 = rng.normal(size=n)
            mi = int(rng.integers(4, 15))
            aieq = rng.normal(size=(mi, n))
            bieq = aieq @ x0 - rng.uniform(0.1, 2.0, size=mi)
            me = int(rng.integers(0, 2))
            aeq = rng.normal(size=(me, n)) if me else None
            beq = aeq @ x0 if me else None
            p = QpProblem(H=h, f=f, Aeq=aeq, beq=beq, Aieq=aieq, bieq=bieq)
            sol = solve(p, tol=1e-10, max_iter=300)
            assert sol.status is QpStatus.OPTIMAL
            assert kkt_check(p, sol.x).max_residual <= 1e-8
            base = qp_objective(p, sol.x)
            for axis in range(n):
                for sign in (-1.0, 1.0):
                    x_probe = sol.x.copy()
                    x_probe[axis] += sign * 1e-2
                    feasible = (p.Aieq @ x_probe >= p.bieq - 1e-12).all()
                    if me:
                        feasible &= np.abs(p.Aeq @ x_probe - p.beq).max() < 1e-12
                    if feasible:
                        assert base <= qp_objective(p, x_probe) + 1e-12

    def test_max_iter_returns_best_iterate(self):
        rng = np.random.default_rng(5)
        p = random_box_qp(rng)
        sol = solve(p, max_iter=1)
        assert sol.status in (QpStatus.MAX_ITER, QpStatus.OPTIMAL)
        assert np.isfinite(sol.x).all()
