"""Conic solver: contracts, duals, certificates, and oracle cross-checks."""

import io

import numpy as np
import pytest

from consist.conic import (ConicProblem, SolverError, SolverOptions, dump_problem,
                           solve_lp, solve_sdp)

from conftest import vertex_lp_min


def sym_outer(u, v):
    return 0.5 * (np.outer(u, v) + np.outer(v, u))


def test_scalar_equality():
    # min x s.t. x = 3, x >= 0 -> x = 3 with equality multiplier 1
    prob = ConicProblem(blocks=(1,), objective=np.array([[1.0]]),
                        equalities=[(np.array([[1.0]]), 3.0)])
    sol = solve_lp(prob)
    assert sol.optimal
    assert sol.primal_objective == pytest.approx(3.0, abs=1e-7)
    assert sol.y[0] == pytest.approx(1.0, abs=1e-7)


def test_identity_optimum():
    d = 2
    e11 = np.diag([1.0, 0.0])
    e22 = np.diag([0.0, 1.0])
    prob = ConicProblem(blocks=(2,), objective=np.eye(d),
                        equalities=[(e11, 1.0), (e22, 1.0)])
    sol = solve_sdp(prob)
    assert sol.optimal
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)
    assert np.allclose(sol.X, np.eye(2), atol=1e-6)


def test_lp_sum_lower_bound():
    # min d1 + d2 s.t. d1 + d2 >= 1, d >= 0
    prob = ConicProblem.lp(c=[1.0, 1.0], a_ub=[[-1.0, -1.0]], b_ub=[-1.0])
    sol = solve_lp(prob)
    assert sol.optimal
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-8)
    assert sol.lam[0] == pytest.approx(1.0, abs=1e-6)


def test_infeasible_lp_farkas_certificate():
    # x <= 0 and x >= 1 with x unrestricted
    prob = ConicProblem.lp(c=np.zeros(0), a_ub=np.zeros((2, 0)), b_ub=[0.0, -1.0],
                           c_free=[0.0], a_ub_free=[[1.0], [-1.0]])
    sol = solve_lp(prob)
    assert sol.status == "primal_infeasible"
    lam = sol.certificate["lam"]
    assert np.all(lam >= -1e-12)
    rows = np.array([[1.0], [-1.0]])
    h = np.array([0.0, -1.0])
    # Farkas: lam >= 0 combines the rows to 0 <= negative
    assert abs(lam @ rows) < 1e-6
    assert lam @ h < -1e-6


def test_unbounded_lp_ray_certificate():
    prob = ConicProblem.lp(c=[-1.0], a_ub=[[0.0]], b_ub=[1.0])
    sol = solve_lp(prob)
    assert sol.status == "dual_infeasible"
    ray = np.diag(sol.certificate["X"])
    assert ray[0] > 0.5  # normalized improving ray


def test_mixed_cone_inequality():
    d = 2
    e12 = np.array([[0.0, 0.5], [0.5, 0.0]])
    prob = ConicProblem(blocks=(2,), objective=np.eye(d),
                        equalities=[(np.diag([1.0, 0.0]), 1.0),
                                    (np.diag([0.0, 1.0]), 1.0)],
                        inequalities=[(-e12, -0.5)])
    sol = solve_sdp(prob)
    assert sol.optimal
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)
    # objective is flat in X12, so the constraint X12 >= 0.5 merely localizes
    assert sol.X[0, 1] >= 0.5 - 1e-6
    assert sol.lam[0] >= -1e-12


def random_feasible_sdp(rng):
    """Strictly feasible primal-dual pair by construction."""
    d = int(rng.integers(2, 9))
    k = int(rng.integers(1, 5))
    x0 = rng.standard_normal((d, d))
    x0 = x0 @ x0.T + 0.5 * np.eye(d)
    s0 = rng.standard_normal((d, d))
    s0 = s0 @ s0.T + 0.5 * np.eye(d)
    y0 = rng.standard_normal(k)
    mats = []
    for _ in range(k):
        a = rng.standard_normal((d, d))
        mats.append(0.5 * (a + a.T))
    b = np.array([np.tensordot(a, x0) for a in mats])
    c = sum(y * a for y, a in zip(y0, mats)) + s0
    ineqs = []
    for _ in range(int(rng.integers(0, 4))):
        g = rng.standard_normal((d, d))
        g = 0.5 * (g + g.T)
        ineqs.append((g, float(np.tensordot(g, x0)) + float(rng.uniform(0.1, 1.0))))
    prob = ConicProblem(blocks=(d,), objective=c,
                        equalities=[(a, float(bb)) for a, bb in zip(mats, b)],
                        inequalities=ineqs)
    return prob, x0


def test_kkt_residuals_on_random_sdps():
    """Stationarity, feasibility, complementarity on 100 random feasible SDPs."""
    rng = np.random.default_rng(2024)
    opts = SolverOptions()
    for _ in range(100):
        prob, x_feas = random_feasible_sdp(rng)
        sol = solve_sdp(prob, opts)
        assert sol.optimal, sol.status
        assert sol.primal_residual <= opts.feas_tol
        assert sol.dual_residual <= opts.feas_tol
        assert sol.rel_gap <= opts.gap_tol
        # recompute KKT pieces from the returned solution
        X, S, y, lam = sol.X, sol.S, sol.y, sol.lam
        for (a_i, b_i), y_i in zip(prob.equalities, y):
            assert abs(np.tensordot(a_i, X) - b_i) <= 1e-6
        stat = np.array(prob.objective, dtype=float)
        for (a_i, _), y_i in zip(prob.equalities, y):
            stat = stat - y_i * a_i
        for (g_j, h_j), lam_j in zip(prob.inequalities, lam):
            assert lam_j >= -1e-12
            margin = h_j - np.tensordot(g_j, X)
            assert margin >= -1e-6
            assert abs(lam_j * margin) <= 1e-5  # complementarity
            stat = stat + lam_j * g_j
        assert np.abs(stat - S).max() <= 1e-5
        assert np.linalg.eigvalsh(S)[0] >= -1e-7
        assert np.linalg.eigvalsh(X)[0] >= -opts.psd_tol
        # weak duality against the known feasible point
        assert sol.primal_objective <= np.tensordot(prob.objective, x_feas) + 1e-6


def test_lp_matches_vertex_enumeration():
    """Random LPs with <= 6 variables and <= 10 rows against the exact oracle."""
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 60:
        n = int(rng.integers(2, 7))
        m = int(rng.integers(n + 1, 11))
        a = rng.uniform(-1, 1, (m, n))
        x0 = rng.uniform(0.2, 1.0, n)
        b = a @ x0 + rng.uniform(0.05, 1.0, m)
        c = rng.uniform(0.2, 1.5, n)
        ref, _ = vertex_lp_min(np.concatenate([c]),
                               np.vstack([a, -np.eye(n)]),
                               np.concatenate([b, np.zeros(n)]))
        if not np.isfinite(ref):
            continue
        sol = solve_lp(ConicProblem.lp(c=c, a_ub=a, b_ub=b),
                       SolverOptions(feas_tol=1e-9, gap_tol=1e-9))
        assert sol.optimal
        assert sol.primal_objective == pytest.approx(ref, abs=1e-7)
        checked += 1


def test_weak_duality_every_solution():
    rng = np.random.default_rng(11)
    for _ in range(25):
        prob, _ = random_feasible_sdp(rng)
        sol = solve_sdp(prob)
        if sol.status in ("optimal", "max_iter"):
            assert sol.dual_objective <= sol.primal_objective + 1e-6 + sol.gap


def test_dimension_validation():
    with pytest.raises(SolverError):
        solve_sdp(ConicProblem(blocks=(2,), objective=np.eye(3)))
    with pytest.raises(SolverError):
        solve_lp(ConicProblem(blocks=(2,), objective=np.eye(2),
                              equalities=[(np.eye(2), 1.0)]))
    with pytest.raises(SolverError):
        solve_sdp(ConicProblem(blocks=(300,), objective=np.eye(300),
                               equalities=[(np.eye(300), 1.0)]))


def test_determinism():
    rng = np.random.default_rng(3)
    prob, _ = random_feasible_sdp(rng)
    a = solve_sdp(prob)
    b = solve_sdp(prob)
    assert a.primal_objective == b.primal_objective
    assert np.array_equal(a.X, b.X)


def test_dump_problem_format():
    prob = ConicProblem(blocks=(2, 1), objective=np.diag([1.0, 1.0, 2.0]),
                        equalities=[(np.diag([1.0, 0.0, 0.0]), 1.0)],
                        inequalities=[(np.diag([0.0, 1.0, 1.0]), 2.0)])
    buf = io.StringIO()
    dump_problem(prob, buf)
    text = buf.getvalue()
    assert text.startswith("blocks 2 1\n")
    assert "rhs 1 1.0\n" in text
    assert "rhs 2 2.0\n" in text
    # every entry line: row block i j value
    for line in text.splitlines()[1:]:
        parts = line.split()
        assert parts[0] == "rhs" and len(parts) == 3 or len(parts) == 5
