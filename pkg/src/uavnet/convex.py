"""Conic convex kernel shared by the trajectory and allocation steps.

Programs are written against a small builder (linear objective; affine
equalities and inequalities; second-order and exponential cones) and lowered
to the canonical form

    minimize q'x   subject to   A x + s = b,   s in K,

with K a product of zero, nonnegative, second-order, and exponential cones.
Two interchangeable backends solve that form: a native conic interior-point
backend (clarabel) used in production, and a dense log-barrier
path-following reference used to cross-check it.  Callers pre-scale their
data to O(1) magnitudes (the resource programs work in MHz/mW/Mbps, the
trajectory program in hectometers); the kernel applies no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"
UNBOUNDED = "unbounded"

_RESIDUAL_LIMIT = 1e-7  # status=optimal guarantees primal residual below this


class LinExpr:
    """Affine expression: sum of coef*scalar-variable plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = terms or {}
        self.const = float(const)

    def copy(self) -> "LinExpr":
        return LinExpr(dict(self.terms), self.const)

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, LinExpr):
            for i, c in other.terms.items():
                out.terms[i] = out.terms.get(i, 0.0) + c
            out.const += other.const
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({i: -c for i, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, LinExpr) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        scalar = float(scalar)
        return LinExpr({i: c * scalar for i, c in self.terms.items()}, self.const * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))


def as_expr(value) -> LinExpr:
    if isinstance(value, LinExpr):
        return value
    return LinExpr(const=float(value))


@dataclass(frozen=True)
class Var:
    """Handle to a contiguous block of scalar variables."""

    name: str
    offset: int
    size: int

    def __getitem__(self, i: int) -> LinExpr:
        if not 0 <= i < self.size:
            raise IndexError(f"{self.name}[{i}] out of range")
        return LinExpr({self.offset + i: 1.0})

    def expr(self, i: int = 0) -> LinExpr:
        return self[i]

    def sum(self, coefs=None) -> LinExpr:
        if coefs is None:
            return LinExpr({self.offset + i: 1.0 for i in range(self.size)})
        coefs = np.asarray(coefs, dtype=float)
        return LinExpr({self.offset + i: float(c) for i, c in enumerate(coefs) if c != 0.0})


class ConvexProgram:
    """Incrementally built conic program with a linear objective."""

    def __init__(self) -> None:
        self.n_vars = 0
        self.var_names: dict[str, Var] = {}
        self._objective: LinExpr | None = None
        self._sense = 1.0  # +1 maximize, -1 minimize
        self.eqs: list[tuple[LinExpr, float]] = []
        self.ineqs: list[tuple[LinExpr, float]] = []
        self.socs: list[tuple[LinExpr, list[LinExpr]]] = []
        self.exps: list[tuple[LinExpr, LinExpr, LinExpr]] = []

    def add_var(self, name: str, size: int = 1) -> Var:
        if name in self.var_names:
            raise ValueError(f"variable {name!r} already declared")
        var = Var(name=name, offset=self.n_vars, size=size)
        self.n_vars += size
        self.var_names[name] = var
        return var

    def maximize(self, expr: LinExpr) -> None:
        self._objective = as_expr(expr)
        self._sense = 1.0

    def minimize(self, expr: LinExpr) -> None:
        self._objective = as_expr(expr)
        self._sense = -1.0

    def add_eq(self, expr: LinExpr, rhs: float = 0.0) -> None:
        """expr == rhs"""
        self.eqs.append((as_expr(expr), float(rhs)))

    def add_ineq(self, expr: LinExpr, rhs: float = 0.0) -> None:
        """expr <= rhs"""
        self.ineqs.append((as_expr(expr), float(rhs)))

    def add_soc(self, head: LinExpr, tail: list[LinExpr]) -> None:
        """||tail||_2 <= head (all entries affine)"""
        self.socs.append((as_expr(head), [as_expr(t) for t in tail]))

    def add_sq_leq(self, parts: list[LinExpr], bound: LinExpr) -> None:
        """sum of squares of affine parts <= affine bound, via a rotated cone.

        sum_i parts_i^2 <= bound  <=>  ||(2*parts, bound - 1)|| <= bound + 1.
        """
        bound = as_expr(bound)
        tail = [as_expr(p) * 2.0 for p in parts] + [bound - 1.0]
        self.add_soc(bound + 1.0, tail)

    def add_exp(self, x: LinExpr, y: LinExpr, z: LinExpr) -> None:
        """(x, y, z) in the exponential cone: y * exp(x/y) <= z, y > 0."""
        self.exps.append((as_expr(x), as_expr(y), as_expr(z)))

    def add_log2_bound(self, lhs: LinExpr, one_plus_arg: LinExpr) -> None:
        """lhs <= log2(one_plus_arg), i.e. exp(lhs ln2) <= one_plus_arg."""
        self.add_exp(as_expr(lhs) * np.log(2.0), LinExpr(const=1.0), one_plus_arg)

    # ---- lowering ----------------------------------------------------------

    def canonical(self):
        """(q, obj_const, A, b, cone spec list); rows ordered eq/ineq/soc/exp."""
        if self._objective is None:
            raise ValueError("program has no objective")
        rows_i: list[int] = []
        cols_i: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        cones: list[tuple] = []
        row = 0

        def push(expr: LinExpr, rhs: float) -> None:
            nonlocal row
            for i, c in expr.terms.items():
                if c != 0.0:
                    rows_i.append(row)
                    cols_i.append(i)
                    vals.append(c)
            b.append(rhs - expr.const)
            row += 1

        for expr, rhs in self.eqs:
            push(expr, rhs)
        if self.eqs:
            cones.append(("zero", len(self.eqs)))
        for expr, rhs in self.ineqs:
            push(expr, rhs)
        if self.ineqs:
            cones.append(("nonneg", len(self.ineqs)))
        # cone rows encode s = b - Ax = the affine entry itself
        for head, tail in self.socs:
            self._push_entry(head, rows_i, cols_i, vals, b, row)
            row += 1
            for t in tail:
                self._push_entry(t, rows_i, cols_i, vals, b, row)
                row += 1
            cones.append(("soc", 1 + len(tail)))
        for x, y, z in self.exps:
            for part in (x, y, z):
                self._push_entry(part, rows_i, cols_i, vals, b, row)
                row += 1
            cones.append(("exp",))

        q = np.zeros(self.n_vars)
        for i, c in self._objective.terms.items():
            q[i] = -self._sense * c  # canonical form minimizes
        obj_const = self._objective.const
        a_mat = sp.csc_matrix(
            (vals, (rows_i, cols_i)), shape=(row, self.n_vars)
        )
        return q, obj_const, a_mat, np.array(b), cones

    @staticmethod
    def _push_entry(expr: LinExpr, rows_i, cols_i, vals, b, row) -> None:
        # s_row = b_row - A_row x must equal expr = const + coeffs x
        for i, c in expr.terms.items():
            if c != 0.0:
                rows_i.append(row)
                cols_i.append(i)
                vals.append(-c)
        b.append(expr.const)

    def dump(self) -> str:
        """Human-readable text form of the program for offline debugging."""
        names = {}
        for var in self.var_names.values():
            for i in range(var.size):
                names[var.offset + i] = f"{var.name}[{i}]" if var.size > 1 else var.name

        def fmt(expr: LinExpr) -> str:
            parts = [f"{c:+.6g}*{names[i]}" for i, c in sorted(expr.terms.items())]
            if expr.const or not parts:
                parts.append(f"{expr.const:+.6g}")
            return " ".join(parts)

        lines = [f"vars: {self.n_vars}"]
        if self._objective is not None:
            sense = "maximize" if self._sense > 0 else "minimize"
            lines.append(f"{sense} {fmt(self._objective)}")
        for expr, rhs in self.eqs:
            lines.append(f"eq: {fmt(expr)} == {rhs:.6g}")
        for expr, rhs in self.ineqs:
            lines.append(f"ineq: {fmt(expr)} <= {rhs:.6g}")
        for head, tail in self.socs:
            lines.append(f"soc: ||{', '.join(fmt(t) for t in tail)}|| <= {fmt(head)}")
        for x, y, z in self.exps:
            lines.append(f"exp: ({fmt(x)}, {fmt(y)}, {fmt(z)})")
        return "\n".join(lines) + "\n"


@dataclass
class SolveReport:
    """Outcome of one kernel solve.

    residuals = (primal, dual); the reference backend reports its final
    duality-gap bound in the dual slot.
    """

    status: str
    x: np.ndarray
    objective_value: float
    residuals: tuple[float, float]
    iterations: int
    backend: str
    _vars: dict[str, Var] = field(default_factory=dict, repr=False)

    def value(self, var: Var):
        block = self.x[var.offset:var.offset + var.size]
        return float(block[0]) if var.size == 1 else block.copy()


def _primal_residual(a_mat, b, cones, x) -> float:
    s = b - a_mat @ x
    worst = 0.0
    at = 0
    for cone in cones:
        if cone[0] == "zero":
            m = cone[1]
            if m:
                worst = max(worst, float(np.max(np.abs(s[at:at + m]))))
            at += m
        elif cone[0] == "nonneg":
            m = cone[1]
            if m:
                worst = max(worst, float(np.max(-s[at:at + m], initial=0.0)))
            at += m
        elif cone[0] == "soc":
            d = cone[1]
            worst = max(worst, float(np.linalg.norm(s[at + 1:at + d]) - s[at]))
            at += d
        else:  # exp
            xe, ye, ze = s[at:at + 3]
            if ye > 0.0 and ze > 0.0:
                worst = max(worst, float(-(ye * np.log(ze / ye) - xe)))
            else:
                # boundary: y=0 requires x <= 0 and z >= 0
                worst = max(worst, float(-ye), float(-ze), float(xe) if ye <= 0 else 0.0)
            at += 3
    return max(worst, 0.0)


# ---- clarabel backend ------------------------------------------------------


def _solve_clarabel(prog: ConvexProgram, tol: float, max_iters: int) -> SolveReport:
    import clarabel

    q, obj_const, a_mat, b, cones = prog.canonical()
    cone_objs = []
    for cone in cones:
        if cone[0] == "zero":
            cone_objs.append(clarabel.ZeroConeT(cone[1]))
        elif cone[0] == "nonneg":
            cone_objs.append(clarabel.NonnegativeConeT(cone[1]))
        elif cone[0] == "soc":
            cone_objs.append(clarabel.SecondOrderConeT(cone[1]))
        else:
            cone_objs.append(clarabel.ExponentialConeT())
    p_mat = sp.csc_matrix((prog.n_vars, prog.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iters
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    solver = clarabel.DefaultSolver(p_mat, q, a_mat, b, cone_objs, settings)
    sol = solver.solve()
    status_name = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    if status_name in ("Solved", "AlmostSolved"):
        primal = _primal_residual(a_mat, b, cones, x)
        dual = float(getattr(sol, "r_dual", 0.0) or 0.0)
        # AlmostSolved iterates count as optimal iff they meet the residual bar
        status = OPTIMAL if primal <= _RESIDUAL_LIMIT else MAX_ITERS
        # canonical minimizes q'x with q = -sense*c; recover c'x + const
        obj = float(-(q @ x) / prog._sense + obj_const)
        return SolveReport(status=status, x=x, objective_value=obj,
                           residuals=(primal, dual), iterations=int(sol.iterations),
                           backend="clarabel", _vars=dict(prog.var_names))
    if status_name == "PrimalInfeasible":
        status = INFEASIBLE
    elif status_name == "DualInfeasible":
        status = UNBOUNDED
    else:
        status = MAX_ITERS
    primal = _primal_residual(a_mat, b, cones, x) if x.size else np.inf
    return SolveReport(status=status, x=x, objective_value=np.nan,
                       residuals=(primal, np.inf), iterations=int(sol.iterations),
                       backend="clarabel", _vars=dict(prog.var_names))


# ---- dense log-barrier reference backend -----------------------------------


class _Blocks:
    """Dense view of the non-zero-cone rows, split per barrier block."""

    def __init__(self, a_dense: np.ndarray, b: np.ndarray, cones: list[tuple]):
        self.specs = []  # (kind, row offset, dim)
        at = 0
        keep = []
        self.nu = 0
        out_at = 0
        for cone in cones:
            if cone[0] == "zero":
                at += cone[1]
                continue
            if cone[0] == "nonneg":
                dim = cone[1]
                self.nu += dim
            elif cone[0] == "soc":
                dim = cone[1]
                self.nu += 2
            else:
                dim = 3
                self.nu += 3
            keep.append((at, dim))
            self.specs.append((cone[0], out_at, dim))
            at += dim
            out_at += dim
        if keep:
            rows = np.concatenate([np.arange(lo, lo + d) for lo, d in keep])
            self.a = a_dense[rows]
            self.b = b[rows]
        else:
            self.a = np.zeros((0, a_dense.shape[1]))
            self.b = np.zeros(0)

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.a @ x

    def interior(self, s: np.ndarray) -> bool:
        for kind, at, dim in self.specs:
            blk = s[at:at + dim]
            if kind == "nonneg":
                if np.any(blk <= 0.0):
                    return False
            elif kind == "soc":
                if blk[0] <= 0.0 or blk[0] ** 2 - blk[1:] @ blk[1:] <= 0.0:
                    return False
            else:
                xe, ye, ze = blk
                if ye <= 0.0 or ze <= 0.0 or ye * np.log(ze / ye) - xe <= 0.0:
                    return False
        return True

    def value_grad_hess(self, x: np.ndarray):
        """Barrier value, gradient, and Hessian in x."""
        s = self.slack(x)
        n = self.a.shape[1]
        grad_s = np.zeros_like(s)
        val = 0.0
        hess = np.zeros((n, n))
        for kind, at, dim in self.specs:
            blk = s[at:at + dim]
            a_blk = self.a[at:at + dim]
            if kind == "nonneg":
                val -= float(np.sum(np.log(blk)))
                grad_s[at:at + dim] = -1.0 / blk
                scaled = a_blk / blk[:, None]
                hess += scaled.T @ scaled
            elif kind == "soc":
                den = blk[0] ** 2 - blk[1:] @ blk[1:]
                val -= float(np.log(den))
                w = blk.copy()
                w[1:] *= -1.0
                grad_s[at:at + dim] = -(2.0 / den) * w
                hs = np.outer(2.0 * w / den, 2.0 * w / den)
                j_diag = np.full(dim, -2.0 / den)
                j_diag[0] = 2.0 / den
                hs -= np.diag(j_diag)
                hess += a_blk.T @ hs @ a_blk
            else:
                xe, ye, ze = blk
                u = ye * np.log(ze / ye) - xe
                val -= float(np.log(u) + np.log(ye) + np.log(ze))
                du = np.array([-1.0, np.log(ze / ye) - 1.0, ye / ze])
                grad_s[at:at + 3] = -du / u - np.array([0.0, 1.0 / ye, 1.0 / ze])
                d2u = np.array([
                    [0.0, 0.0, 0.0],
                    [0.0, -1.0 / ye, 1.0 / ze],
                    [0.0, 1.0 / ze, -ye / ze ** 2],
                ])
                hs = np.outer(du, du) / u ** 2 - d2u / u
                hs += np.diag([0.0, 1.0 / ye ** 2, 1.0 / ze ** 2])
                hess += a_blk.T @ hs @ a_blk
        grad = -self.a.T @ grad_s
        return val, grad, hess


def _newton_center(q, blocks: _Blocks, a_eq, x, t, inner_tol=1e-10, max_steps=60):
    """Minimize t*q'x + barrier(x) along the equality manifold."""
    n = len(x)
    m_eq = 0 if a_eq is None else a_eq.shape[0]
    for _ in range(max_steps):
        val, grad, hess = blocks.value_grad_hess(x)
        g = t * q + grad
        h = hess + 1e-12 * np.eye(n)
        if m_eq:
            kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((m_eq, m_eq))]])
            rhs = np.concatenate([-g, np.zeros(m_eq)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            dx = sol[:n]
        else:
            try:
                dx = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(h, -g, rcond=None)[0]
        decrement = float(-g @ dx)
        if decrement <= 2.0 * inner_tol:
            break
        alpha = 1.0
        base = t * float(q @ x) + val
        for _ in range(60):
            cand = x + alpha * dx
            s = blocks.slack(cand)
            if blocks.interior(s):
                cand_val, _, _ = blocks.value_grad_hess(cand)
                if t * float(q @ cand) + cand_val <= base + 0.25 * alpha * float(g @ dx):
                    break
            alpha *= 0.5
        else:
            return x, False
        x = x + alpha * dx
        if np.linalg.norm(x) > 1e12:
            return x, False
    return x, True


def _path_follow(q, blocks: _Blocks, a_eq, x0, tol, stop_cb=None, mu=20.0):
    x = x0
    t = 1.0
    nu = max(blocks.nu, 1)
    for _ in range(200):
        x, ok = _newton_center(q, blocks, a_eq, x, t)
        if not ok:
            return x, MAX_ITERS
        if stop_cb is not None and stop_cb(x):
            return x, OPTIMAL
        if nu / t <= tol:
            return x, OPTIMAL
        t *= mu
    return x, MAX_ITERS


def _solve_barrier(prog: ConvexProgram, tol: float, max_iters: int) -> SolveReport:
    q, obj_const, a_sp, b, cones = prog.canonical()
    a_dense = np.asarray(a_sp.todense())
    n = prog.n_vars

    eq_rows = []
    at = 0
    for cone in cones:
        if cone[0] == "zero":
            eq_rows = list(range(at, at + cone[1]))
        at += cone[1] if cone[0] != "exp" else 3
    if eq_rows:
        a_eq = a_dense[eq_rows]
        b_eq = b[eq_rows]
        x0, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
        if np.max(np.abs(a_eq @ x0 - b_eq), initial=0.0) > 1e-8:
            return SolveReport(status=INFEASIBLE, x=x0, objective_value=np.nan,
                               residuals=(np.inf, np.inf), iterations=0,
                               backend="barrier", _vars=dict(prog.var_names))
    else:
        a_eq, b_eq = None, None
        x0 = np.zeros(n)

    blocks = _Blocks(a_dense, b, cones)
    if blocks.specs:
        if not blocks.interior(blocks.slack(x0)):
            x0 = _phase_one(blocks, a_eq, x0)
            if x0 is None:
                return SolveReport(status=INFEASIBLE, x=np.zeros(n),
                                   objective_value=np.nan,
                                   residuals=(np.inf, np.inf), iterations=0,
                                   backend="barrier", _vars=dict(prog.var_names))
        x, status = _path_follow(q, blocks, a_eq, x0, tol)
    else:
        # pure equality-constrained LP: minimize over the affine set
        x, status = x0, OPTIMAL
        if np.linalg.norm(q) > 0 and (a_eq is None or np.linalg.matrix_rank(a_eq) < n):
            status = MAX_ITERS  # unbounded direction exists; not supported

    primal = _primal_residual(a_sp, b, cones, x)
    gap = tol if blocks.specs else 0.0
    if status == OPTIMAL and primal > _RESIDUAL_LIMIT:
        status = MAX_ITERS
    cx = -(q @ x)
    obj = cx / prog._sense + obj_const
    return SolveReport(status=status, x=x, objective_value=float(obj),
                       residuals=(primal, gap), iterations=0, backend="barrier",
                       _vars=dict(prog.var_names))


def _phase_one(blocks: _Blocks, a_eq, x0):
    """Find a strictly interior, equality-feasible point by shift minimization."""
    n = blocks.a.shape[1]
    shifts = []
    for kind, at, dim in blocks.specs:
        if kind == "nonneg":
            shifts.append(np.ones(dim))
        elif kind == "soc":
            e = np.zeros(dim)
            e[0] = 1.0
            shifts.append(e)
        else:
            shifts.append(np.array([-1.0, 1.0, 2.0]))
    e_col = np.concatenate(shifts)

    # augmented problem in (x, rho): slack' = b - A x + rho e
    a_aug = np.hstack([blocks.a, -e_col[:, None]])
    blocks_aug = _Blocks.__new__(_Blocks)
    blocks_aug.specs = blocks.specs
    blocks_aug.a = a_aug
    blocks_aug.b = blocks.b
    blocks_aug.nu = blocks.nu

    rho = 1.0
    for _ in range(200):
        z0 = np.concatenate([x0, [rho]])
        if blocks_aug.interior(blocks_aug.slack(z0)):
            break
        rho *= 2.0
    else:
        return None

    a_eq_aug = None
    if a_eq is not None:
        a_eq_aug = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    q_aug = np.zeros(n + 1)
    q_aug[-1] = 1.0
    z, status = _path_follow(
        q_aug, blocks_aug, a_eq_aug, z0, tol=1e-9,
        stop_cb=lambda zz: zz[-1] < -1e-7,
    )
    if status != OPTIMAL or z[-1] >= 0.0:
        return None
    return z[:n]


_BACKENDS = {"clarabel": _solve_clarabel, "barrier": _solve_barrier}


def solve(prog: ConvexProgram, tol: float = 1e-8, backend: str = "clarabel",
          max_iters: int = 200) -> SolveReport:
    """Solve a built program; deterministic for a fixed build and backend."""
    if backend not in _BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    return _BACKENDS[backend](prog, tol, max_iters)
