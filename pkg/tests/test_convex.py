"""Conic kernel tests: algebra, closed forms, and backend cross-checks."""

import numpy as np
import pytest

from uavnet import convex
from uavnet.convex import ConvexProgram, LinExpr


def expr_coeffs(e: LinExpr):
    return dict(e.terms), e.const


class TestLinExpr:
    def test_affine_algebra(self):
        prog = ConvexProgram()
        x = prog.add_var("x", 2)
        e = 2.0 * x[0] + 3.0 - (x[1] - 1.0)
        terms, const = expr_coeffs(e)
        assert terms == {0: 2.0, 1: -1.0}
        assert const == 4.0
        neg = -e
        terms, const = expr_coeffs(neg)
        assert terms == {0: -2.0, 1: 1.0} and const == -4.0
        half = e / 2.0
        assert expr_coeffs(half) == ({0: 1.0, 1: -0.5}, 2.0)
        rsub = 10.0 - x[0]
        assert expr_coeffs(rsub) == ({0: -1.0}, 10.0)

    def test_var_block_helpers(self):
        prog = ConvexProgram()
        v = prog.add_var("v", 3)
        assert expr_coeffs(v.sum()) == ({0: 1.0, 1: 1.0, 2: 1.0}, 0.0)
        assert expr_coeffs(v.sum([1.0, 0.0, -2.0])) == ({0: 1.0, 2: -2.0}, 0.0)
        with pytest.raises(IndexError):
            v[3]

    def test_duplicate_variable_rejected(self):
        prog = ConvexProgram()
        prog.add_var("x")
        with pytest.raises(ValueError):
            prog.add_var("x")


def ball_projection_program(point: np.ndarray, radius: float):
    """min ||x - point|| subject to ||x|| <= radius, as an epigraph SOCP."""
    prog = ConvexProgram()
    x = prog.add_var("x", len(point))
    d = prog.add_var("d")
    prog.minimize(d[0])
    prog.add_soc(d[0], [x[i] - float(point[i]) for i in range(len(point))])
    prog.add_soc(LinExpr(const=radius), [x[i] for i in range(len(point))])
    return prog, x, d


class TestClosedForms:
    @pytest.mark.parametrize("backend", ["clarabel", "barrier"])
    def test_bounded_line(self, backend):
        prog = ConvexProgram()
        x = prog.add_var("x")
        prog.maximize(x[0])
        prog.add_ineq(x[0], 4.0)
        prog.add_ineq(-x[0], 1.0)  # x >= -1, keeps the barrier domain bounded
        report = convex.solve(prog, backend=backend)
        assert report.status == convex.OPTIMAL
        assert report.objective_value == pytest.approx(4.0, abs=1e-7)
        assert report.value(x) == pytest.approx(4.0, abs=1e-6)

    @pytest.mark.parametrize("backend", ["clarabel", "barrier"])
    def test_ball_projection_family(self, backend):
        rng = np.random.default_rng(19)
        for _ in range(50 if backend == "clarabel" else 10):
            dim = int(rng.integers(2, 6))
            point = rng.normal(size=dim) * 5.0
            norm = float(np.linalg.norm(point))
            radius = float(rng.uniform(0.2, 0.9)) * norm  # point outside the ball
            prog, x, _ = ball_projection_program(point, radius)
            report = convex.solve(prog, tol=1e-9, backend=backend)
            assert report.status == convex.OPTIMAL
            assert report.objective_value == pytest.approx(norm - radius, abs=1e-6)
            expected = radius * point / norm
            np.testing.assert_allclose(report.value(x), expected, atol=1e-5)

    @pytest.mark.parametrize("backend", ["clarabel", "barrier"])
    def test_log2_bound(self, backend):
        prog = ConvexProgram()
        psi = prog.add_var("psi")
        prog.maximize(psi[0])
        prog.add_log2_bound(psi[0], LinExpr(const=4.0))
        report = convex.solve(prog, tol=1e-9, backend=backend)
        assert report.status == convex.OPTIMAL
        assert report.objective_value == pytest.approx(2.0, abs=1e-6)

    def test_sum_of_squares_epigraph(self):
        prog = ConvexProgram()
        x = prog.add_var("x")
        bound = prog.add_var("bound")
        prog.minimize(bound[0])
        prog.add_sq_leq([x[0] - 3.0], bound[0])
        report = convex.solve(prog, tol=1e-9)
        assert report.status == convex.OPTIMAL
        assert report.value(x) == pytest.approx(3.0, abs=1e-4)
        assert report.objective_value == pytest.approx(0.0, abs=1e-6)

    def test_equality_constraint(self):
        prog = ConvexProgram()
        x = prog.add_var("x", 2)
        prog.maximize(x[0] + x[1])
        prog.add_eq(x[0] - x[1], 1.0)
        prog.add_soc(LinExpr(const=2.0), [x[0], x[1]])
        report = convex.solve(prog, tol=1e-9)
        assert report.status == convex.OPTIMAL
        got = report.value(x)
        assert got[0] - got[1] == pytest.approx(1.0, abs=1e-7)


def random_socp(rng):
    """Bounded, strictly feasible SOCP with linear/ SOC rows and one equality."""
    dim = int(rng.integers(2, 5))
    interior = rng.normal(size=dim)
    prog = ConvexProgram()
    x = prog.add_var("x", dim)
    c = rng.normal(size=dim)
    prog.maximize(sum((float(ci) * x[i] for i, ci in enumerate(c)), LinExpr()))
    for _ in range(2):
        center = interior + rng.normal(size=dim)
        radius = float(np.linalg.norm(interior - center) + rng.uniform(0.5, 2.0))
        prog.add_soc(LinExpr(const=radius),
                     [x[i] - float(center[i]) for i in range(dim)])
    for _ in range(2):
        a = rng.normal(size=dim)
        rhs = float(a @ interior + rng.uniform(0.5, 2.0))
        prog.add_ineq(sum((float(ai) * x[i] for i, ai in enumerate(a)), LinExpr()), rhs)
    if rng.random() < 0.5:
        a = rng.normal(size=dim)
        prog.add_eq(sum((float(ai) * x[i] for i, ai in enumerate(a)), LinExpr()),
                    float(a @ interior))
    return prog


class TestBackendAgreement:
    def test_fifty_random_socps(self):
        rng = np.random.default_rng(20260814)
        for trial in range(50):
            prog = random_socp(rng)
            a = convex.solve(prog, tol=1e-9, backend="clarabel")
            b = convex.solve(prog, tol=1e-9, backend="barrier")
            assert a.status == convex.OPTIMAL, f"trial {trial}"
            assert b.status == convex.OPTIMAL, f"trial {trial}"
            scale = max(1.0, abs(a.objective_value))
            assert abs(a.objective_value - b.objective_value) / scale <= 1e-6, (
                f"trial {trial}: {a.objective_value} vs {b.objective_value}"
            )

    def test_exponential_cone_agreement(self):
        # rate-style program: maximize psi + 0.1 b with psi <= log2(1 + 4 b)
        prog = ConvexProgram()
        b = prog.add_var("b")
        psi = prog.add_var("psi")
        prog.maximize(psi[0] + 0.1 * b[0])
        prog.add_ineq(b[0], 2.0)
        prog.add_ineq(-b[0], 0.0)
        prog.add_log2_bound(psi[0], 1.0 + 4.0 * b[0])
        a = convex.solve(prog, tol=1e-9, backend="clarabel")
        r = convex.solve(prog, tol=1e-9, backend="barrier")
        assert a.status == r.status == convex.OPTIMAL
        assert a.objective_value == pytest.approx(r.objective_value, abs=1e-6)
        assert a.objective_value == pytest.approx(np.log2(9.0) + 0.2, abs=1e-6)


class TestStatuses:
    @pytest.mark.parametrize("backend", ["clarabel", "barrier"])
    def test_infeasible_box(self, backend):
        prog = ConvexProgram()
        x = prog.add_var("x")
        prog.maximize(x[0])
        prog.add_ineq(x[0], -1.0)
        prog.add_ineq(-x[0], -1.0)  # x >= 1 contradicts x <= -1
        report = convex.solve(prog, backend=backend)
        assert report.status == convex.INFEASIBLE

    def test_unknown_backend_rejected(self):
        prog = ConvexProgram()
        x = prog.add_var("x")
        prog.maximize(x[0])
        with pytest.raises(ValueError):
            convex.solve(prog, backend="simplex")

    def test_missing_objective_rejected(self):
        prog = ConvexProgram()
        prog.add_var("x")
        with pytest.raises(ValueError):
            convex.solve(prog)

    def test_optimal_report_meets_residual_contract(self):
        prog, *_ = ball_projection_program(np.array([3.0, 4.0]), 1.0)
        report = convex.solve(prog, tol=1e-9)
        assert report.status == convex.OPTIMAL
        assert report.residuals[0] <= 1e-7
        assert report.backend == "clarabel"

    def test_dump_is_readable(self):
        prog = ConvexProgram()
        x = prog.add_var("x", 2)
        prog.maximize(x[0])
        prog.add_ineq(x[0] + x[1], 1.0)
        prog.add_soc(LinExpr(const=2.0), [x[0], x[1]])
        text = prog.dump()
        assert "maximize" in text and "soc:" in text and "x[1]" in text
