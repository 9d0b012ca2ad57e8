"""Convex QP with named variable/constraint families.

Linear programs go to the HiGHS simplex (exact vertex solutions); problems
with quadratic terms go to the Clarabel interior-point solver.

Problems are assembled in blocks: a *family* is a vector of variables (or
constraint rows) sharing a name, e.g. ``g1.g`` with one entry per hour.
Only diagonal quadratic terms are supported.

Duals are reported as the sensitivity of the optimal objective, in the
problem's own sense, to the right-hand side of the row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import clarabel
import highspy
import numpy as np
import scipy.sparse as sp

INF = np.inf

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ERROR = "error"

FEAS_TOL = 1e-9


class ProblemError(ValueError):
    """Raised for a malformed problem (bad reference, non-convex objective)."""


def _vec(x, n):
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise ProblemError(f"expected length {n}, got shape {a.shape}")
    return a.astype(float, copy=True)


class Problem:
    """Builder for ``min|max  c.x + q.x**2`` subject to ``lo <= A x <= hi``.

    Variables and constraints are added in families; each family gets
    element names ``family[k]``.
    """

    def __init__(self, sense: str = "min", name: str = ""):
        if sense not in ("min", "max"):
            raise ProblemError(f"unknown sense {sense!r}")
        self.sense = sense
        self.name = name
        self.n_vars = 0
        self.n_rows = 0
        self._var_families: dict[str, np.ndarray] = {}
        self._row_families: dict[str, np.ndarray] = {}
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._cost: list[np.ndarray] = []
        self._quad: list[np.ndarray] = []
        self._rlo: list[np.ndarray] = []
        self._rhi: list[np.ndarray] = []
        self._ri: list[np.ndarray] = []
        self._ci: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._extra_cost: dict[int, float] = {}
        self._extra_quad: dict[int, float] = {}
        self._bounds: dict[int, tuple[float, float]] = {}
        self.constant = 0.0

    # -- variables ----------------------------------------------------------
    def add_variables(self, family: str, n: int, lb=0.0, ub=INF, cost=0.0, quad=0.0) -> np.ndarray:
        if family in self._var_families:
            raise ProblemError(f"duplicate variable family {family!r}")
        idx = np.arange(self.n_vars, self.n_vars + n)
        lb, ub = _vec(lb, n), _vec(ub, n)
        quad = _vec(quad, n)
        if self.sense == "min" and np.any(quad < 0) or self.sense == "max" and np.any(quad > 0):
            raise ProblemError(f"non-convex quadratic terms in family {family!r}")
        self._var_families[family] = idx
        self._lb.append(lb)
        self._ub.append(ub)
        self._cost.append(_vec(cost, n))
        self._quad.append(quad)
        self.n_vars += n
        return idx

    def add_variable(self, name: str, lb=0.0, ub=INF, cost=0.0, quad=0.0) -> int:
        return int(self.add_variables(name, 1, lb, ub, cost, quad)[0])

    def add_objective(self, idx, cost=0.0, quad=0.0) -> None:
        """Add linear/quadratic objective terms to existing variables."""
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        cost, quad = _vec(cost, len(idx)), _vec(quad, len(idx))
        if self.sense == "min" and np.any(quad < 0) or self.sense == "max" and np.any(quad > 0):
            raise ProblemError("non-convex quadratic objective term")
        for i, c, q in zip(idx, cost, quad):
            self._check_var(i)
            if c:
                self._extra_cost[i] = self._extra_cost.get(i, 0.0) + c
            if q:
                self._extra_quad[i] = self._extra_quad.get(i, 0.0) + q

    def set_bounds(self, i: int, lb: float, ub: float) -> None:
        """Replace the bounds of a single variable."""
        self._check_var(i)
        self._bounds[int(i)] = (float(lb), float(ub))

    def var(self, family: str) -> np.ndarray:
        try:
            return self._var_families[family]
        except KeyError:
            raise ProblemError(f"unknown variable family {family!r}") from None

    def has_var(self, family: str) -> bool:
        return family in self._var_families

    @property
    def variable_families(self) -> list[str]:
        return list(self._var_families)

    # -- constraints --------------------------------------------------------
    def add_constraints(self, family: str, rows, cols, vals, lo, hi, n: int | None = None) -> np.ndarray:
        """Add ``n`` rows given as triplets with row indices local to the family."""
        if family in self._row_families:
            raise ProblemError(f"duplicate constraint family {family!r}")
        rows = np.asarray(rows, dtype=int).ravel()
        cols = np.asarray(cols, dtype=int).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).copy()
        if n is None:
            n = int(rows.max()) + 1 if rows.size else 0
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise ProblemError(f"row index out of range in {family!r}")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ProblemError(f"constraint family {family!r} references an undeclared variable")
        idx = np.arange(self.n_rows, self.n_rows + n)
        self._row_families[family] = idx
        self._ri.append(rows + self.n_rows)
        self._ci.append(cols)
        self._vals.append(vals)
        self._rlo.append(_vec(lo, n))
        self._rhi.append(_vec(hi, n))
        self.n_rows += n
        return idx

    def add_constraint(self, name: str, terms: Mapping[int, float], lo=-INF, hi=INF) -> int:
        cols = np.fromiter(terms.keys(), dtype=int, count=len(terms))
        vals = np.fromiter(terms.values(), dtype=float, count=len(terms))
        return int(self.add_constraints(name, np.zeros(len(cols), int), cols, vals, lo, hi, n=1)[0])

    def row(self, family: str) -> np.ndarray:
        try:
            return self._row_families[family]
        except KeyError:
            raise ProblemError(f"unknown constraint family {family!r}") from None

    @property
    def constraint_families(self) -> list[str]:
        return list(self._row_families)

    # -- assembly -----------------------------------------------------------
    def _check_var(self, i):
        if not 0 <= i < self.n_vars:
            raise ProblemError(f"variable index {i} not declared")

    def arrays(self):
        """Dense vectors and a CSC constraint matrix, in the problem's own sense."""
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
        cost, quad = cat(self._cost), cat(self._quad)
        for i, c in self._extra_cost.items():
            cost[i] += c
        for i, q in self._extra_quad.items():
            quad[i] += q
        A = sp.csc_matrix(
            (cat(self._vals), (cat(self._ri).astype(int), cat(self._ci).astype(int))),
            shape=(self.n_rows, self.n_vars),
        )
        A.sum_duplicates()
        lb, ub = cat(self._lb), cat(self._ub)
        for i, (lo, hi) in self._bounds.items():
            lb[i], ub[i] = lo, hi
        return lb, ub, cost, quad, A, cat(self._rlo), cat(self._rhi)

    def embed(self, other: "Problem", prefix: str) -> dict[str, np.ndarray]:
        """Copy ``other`` into this problem under ``prefix``; returns the new variable families.

        The objective of ``other`` is negated if its sense differs.
        """
        lb, ub, cost, quad, A, rlo, rhi = other.arrays()
        sign = 1.0 if other.sense == self.sense else -1.0
        offset = self.n_vars
        fams = {}
        for fam, idx in other._var_families.items():
            fams[fam] = self.add_variables(
                f"{prefix}{fam}", len(idx), lb[idx], ub[idx], sign * cost[idx], sign * quad[idx]
            )
        coo = A.tocoo()
        for fam, ridx in other._row_families.items():
            mask = np.isin(coo.row, ridx)
            local = np.searchsorted(ridx, coo.row[mask])
            self.add_constraints(
                f"{prefix}{fam}", local, coo.col[mask] + offset, coo.data[mask], rlo[ridx], rhi[ridx], n=len(ridx)
            )
        self.constant += sign * other.constant
        return fams

    def to_lp(self) -> str:
        """CPLEX-LP style text dump, for inspection only."""
        lb, ub, cost, quad, A, rlo, rhi = self.arrays()
        names = [""] * self.n_vars
        for fam, idx in self._var_families.items():
            for k, i in enumerate(idx):
                names[i] = f"{fam}[{k}]".replace(".", "_")
        out = ["Maximize" if self.sense == "max" else "Minimize", " obj:"]
        terms = [f"{c:+.12g} {names[i]}" for i, c in enumerate(cost) if c]
        qterms = [f"{2 * q:+.12g} {names[i]} ^ 2" for i, q in enumerate(quad) if q]
        line = " ".join(terms)
        if qterms:
            line += " + [ " + " ".join(qterms) + " ] / 2"
        out.append("  " + (line or "0"))
        out.append("Subject To")
        A = A.tocsr()
        rnames = [""] * self.n_rows
        for fam, idx in self._row_families.items():
            for k, r in enumerate(idx):
                rnames[r] = f"{fam}[{k}]".replace(".", "_")
        for r in range(self.n_rows):
            lhs = " ".join(
                f"{v:+.12g} {names[c]}" for c, v in zip(A.indices[A.indptr[r]:A.indptr[r + 1]], A.data[A.indptr[r]:A.indptr[r + 1]])
            ) or "0 " + (names[0] if names else "")
            if rlo[r] == rhi[r]:
                out.append(f" {rnames[r]}: {lhs} = {rlo[r]:.12g}")
            else:
                if rlo[r] > -INF:
                    out.append(f" {rnames[r]}_lo: {lhs} >= {rlo[r]:.12g}")
                if rhi[r] < INF:
                    out.append(f" {rnames[r]}_hi: {lhs} <= {rhi[r]:.12g}")
        out.append("Bounds")
        for i in range(self.n_vars):
            lo = "-inf" if lb[i] == -INF else f"{lb[i]:.12g}"
            hi = "+inf" if ub[i] == INF else f"{ub[i]:.12g}"
            out.append(f" {lo} <= {names[i]} <= {hi}")
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class Solution:
    status: str
    objective: float = np.nan
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    row_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    row_activity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    problem: Problem | None = field(default=None, repr=False)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value(self, family: str) -> np.ndarray:
        return self.x[self.problem.var(family)]

    def dual(self, family: str) -> np.ndarray:
        return self.row_duals[self.problem.row(family)]

    def activity(self, family: str) -> np.ndarray:
        return self.row_activity[self.problem.row(family)]

    def values(self) -> dict[str, np.ndarray]:
        return {fam: self.x[idx] for fam, idx in self.problem._var_families.items()}


_STATUS = {
    highspy.HighsModelStatus.kOptimal: OPTIMAL,
    highspy.HighsModelStatus.kInfeasible: INFEASIBLE,
    highspy.HighsModelStatus.kUnbounded: UNBOUNDED,
}


def _highs(lb, ub, cost, A, rlo, rhi, sense_sign):
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", FEAS_TOL)
    h.setOptionValue("dual_feasibility_tolerance", FEAS_TOL)
    h.setOptionValue("random_seed", 0)
    lp = highspy.HighsLp()
    lp.num_col_ = len(lb)
    lp.num_row_ = len(rlo)
    lp.col_cost_ = sense_sign * cost
    lp.col_lower_ = np.where(np.isinf(lb), -highspy.kHighsInf, lb)
    lp.col_upper_ = np.where(np.isinf(ub), highspy.kHighsInf, ub)
    lp.row_lower_ = np.where(np.isinf(rlo), -highspy.kHighsInf, rlo)
    lp.row_upper_ = np.where(np.isinf(rhi), highspy.kHighsInf, rhi)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr.astype(np.int32)
    lp.a_matrix_.index_ = A.indices.astype(np.int32)
    lp.a_matrix_.value_ = A.data
    h.passModel(lp)
    h.run()
    return h


_CLARABEL_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def _clarabel(lb, ub, cost, quad, A, rlo, rhi, sense_sign):
    """Returns (status, message, x, row duals of the minimization)."""
    n = len(lb)
    fin_lo, fin_hi = np.isfinite(rlo), np.isfinite(rhi)
    eq = fin_lo & (rlo == rhi)
    up = fin_hi & ~eq
    lo = fin_lo & ~eq
    I = sp.identity(n, format="csr")
    ubm, lbm = np.isfinite(ub), np.isfinite(lb)
    A = A.tocsr()
    Ac = sp.vstack([A[eq], A[up], -A[lo], I[ubm], -I[lbm]]).tocsc()
    b = np.concatenate([rlo[eq], rhi[up], -rlo[lo], ub[ubm], -lb[lbm]])
    n_eq = int(eq.sum())
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if len(b) > n_eq:
        cones.append(clarabel.NonnegativeConeT(len(b) - n_eq))
    P = sp.diags(2.0 * sense_sign * quad, format="csc")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.max_threads = 1
    res = clarabel.DefaultSolver(P, sense_sign * cost, Ac, b, cones, settings).solve()
    name = str(res.status)
    status = _CLARABEL_STATUS.get(name, ERROR)
    if status != OPTIMAL:
        return status, name, None, None
    z = np.asarray(res.z)
    duals = np.zeros(len(rlo))
    k = 0
    for mask, sign in ((eq, -1.0), (up, -1.0), (lo, 1.0)):
        m = int(mask.sum())
        duals[mask] += sign * z[k:k + m]
        k += m
    return status, name, np.asarray(res.x), duals


def solve(p: Problem) -> Solution:
    """Solve ``p``; infeasibility and unboundedness are reported via ``status``."""
    lb, ub, cost, quad, A, rlo, rhi = p.arrays()
    if np.any(lb > ub) or np.any(rlo > rhi):
        return Solution(INFEASIBLE, problem=p, message="crossed bounds")
    sign = 1.0 if p.sense == "min" else -1.0
    if np.any(quad != 0):
        status, msg, x, duals = _clarabel(lb, ub, cost, quad, A, rlo, rhi, sign)
        if status != OPTIMAL:
            return Solution(status, problem=p, message=msg)
        obj = float(cost @ x + quad @ (x * x)) + p.constant
        return Solution(OPTIMAL, objective=obj, x=x, row_duals=sign * duals, row_activity=A @ x, problem=p,
                        message=msg)
    h = _highs(lb, ub, cost, A, rlo, rhi, sign)
    ms = h.getModelStatus()
    status = _STATUS.get(ms)
    if ms == highspy.HighsModelStatus.kUnboundedOrInfeasible:
        # feasibility check with a zero objective tells the two apart
        h0 = _highs(lb, ub, np.zeros_like(cost), A, rlo, rhi, 1.0)
        status = UNBOUNDED if h0.getModelStatus() == highspy.HighsModelStatus.kOptimal else INFEASIBLE
    if status != OPTIMAL:
        return Solution(status or ERROR, problem=p, message=h.modelStatusToString(ms))
    s = h.getSolution()
    x = np.asarray(s.col_value)
    obj = float(cost @ x + quad @ (x * x)) + p.constant
    return Solution(
        OPTIMAL,
        objective=obj,
        x=x,
        row_duals=sign * np.asarray(s.row_dual),
        row_activity=np.asarray(s.row_value),
        problem=p,
    )


class CostSweep:
    """Warm-started re-solves of a minimization LP while one column's cost changes."""

    def __init__(self, p: Problem, col: int):
        if p.sense != "min":
            raise ProblemError("cost sweep needs a minimization")
        lb, ub, cost, quad, A, rlo, rhi = p.arrays()
        if np.any(quad != 0):
            raise ProblemError("cost sweep needs a linear objective")
        if np.any(lb > ub) or np.any(rlo > rhi):
            raise ProblemError("crossed bounds")
        self.problem = p
        self.col = int(col)
        self._h = _highs(lb, ub, cost, A, rlo, rhi, 1.0)
        self._cost = float(cost[col])

    def solve(self, cost: float) -> np.ndarray | None:
        """Primal solution at the given cost, or None if not optimal."""
        self._cost = float(cost)
        self._h.changeColCost(self.col, self._cost)
        self._h.run()
        if self._h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            return None
        return np.asarray(self._h.getSolution().col_value)

    def cost_range(self) -> tuple[float, float]:
        """Interval of the swept cost over which the current basis stays optimal."""
        status, rng = self._h.getRanging()
        if status != highspy.HighsStatus.kOk or not rng.valid:
            return self._cost, self._cost
        lo, hi = rng.col_cost_dn.value_[self.col], rng.col_cost_up.value_[self.col]
        lo = -INF if lo <= -highspy.kHighsInf else float(lo)
        hi = INF if hi >= highspy.kHighsInf else float(hi)
        return min(lo, self._cost), max(hi, self._cost)
