"""Dense LP solver with exact duals, plus a small branch-and-bound MILP wrapper.

The solver is a two-phase revised simplex over bounded variables. A simplex
method (rather than an interior-point method) is used deliberately: the
downstream price calculations need exact binding status and exact dual
variables at a vertex, and basis status gives both without rounding
heuristics.

Dual sign convention (fixed once, used everywhere downstream):
every inequality row is read in its ">=" orientation, and the reported dual
is the nonnegative multiplier of that oriented row. Concretely, for a row
``a.x <= b`` the reported dual is the multiplier of ``-a.x >= -b``; equality
rows have free duals. With this convention the Lagrangian is

    L(x, xi) = c.x - sum_r xi_r * (a_r.x - b_r)        (rows oriented)

so stationarity reads ``c = A_oriented^T xi`` up to variable-bound duals
(the reduced costs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = [
    "LpProblem",
    "LpSolution",
    "MilpProblem",
    "MilpSolution",
    "LpInputError",
    "LpNumericalError",
    "MilpError",
    "solve_lp",
    "solve_milp",
    "fix_binaries_and_resolve",
    "LEQ",
    "GEQ",
    "EQ",
]

LEQ = "<="
GEQ = ">="
EQ = "="

_SENSES = (LEQ, GEQ, EQ)

# Feasibility / complementary-slackness checks are absolute on scaled data;
# strong duality is relative. These match the tolerances promised to callers.
TOL_FEAS = 1e-8
TOL_CS = 1e-8
TOL_SD = 1e-6

# Internal pivoting tolerance (tighter than the certification tolerances).
_PIVOT_TOL = 1e-9


class LpInputError(ValueError):
    """Malformed problem data (dimension mismatch, bad sense, crossed bounds)."""


class LpNumericalError(RuntimeError):
    """The solver finished but its optimality certificate failed to verify."""


class MilpError(RuntimeError):
    """Branch-and-bound exhausted its node budget."""


@dataclass(frozen=True)
class LpProblem:
    """min cost.x  s.t.  constraint_matrix.x (sense) rhs,  var_lower <= x <= var_upper.

    Bounds default to [0, +inf). Use -np.inf / np.inf for unbounded sides.
    """

    cost: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    senses: tuple[str, ...]
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        a = np.atleast_2d(np.asarray(self.constraint_matrix, dtype=float))
        b = np.asarray(self.rhs, dtype=float)
        lo = np.zeros(c.size) if self.var_lower is None else np.asarray(self.var_lower, float)
        up = np.full(c.size, np.inf) if self.var_upper is None else np.asarray(self.var_upper, float)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "constraint_matrix", a)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "senses", tuple(self.senses))
        object.__setattr__(self, "var_lower", lo)
        object.__setattr__(self, "var_upper", up)
        m, n = a.shape
        if c.ndim != 1 or c.size != n:
            raise LpInputError(f"cost has {c.size} entries, matrix has {n} columns")
        if b.size != m:
            raise LpInputError(f"rhs has {b.size} entries, matrix has {m} rows")
        if len(self.senses) != m:
            raise LpInputError(f"{len(self.senses)} senses for {m} rows")
        for s in self.senses:
            if s not in _SENSES:
                raise LpInputError(f"unknown sense {s!r}")
        if lo.size != n or up.size != n:
            raise LpInputError("bound vectors must match the number of variables")
        both = np.isfinite(lo) & np.isfinite(up)
        if np.any(lo[both] > up[both] + 1e-12):
            raise LpInputError("var_lower exceeds var_upper")

    @property
    def n_vars(self) -> int:
        return self.cost.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass(frozen=True)
class LpSolution:
    """Solver output. `duals` follow the ">="-oriented nonnegative convention.

    `reduced_costs` are per-variable bound multipliers: d_j = c_j - a_j.pi.
    At optimality d_j >= 0 for variables at their lower bound and d_j <= 0 at
    their upper bound. `binding` is exact (taken from basis status, not from
    a slack threshold).
    """

    status: str
    primal: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    binding: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class MilpProblem:
    lp: LpProblem
    binary_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "binary_indices", tuple(int(i) for i in self.binary_indices))
        for i in self.binary_indices:
            if not 0 <= i < self.lp.n_vars:
                raise LpInputError(f"binary index {i} out of range")


@dataclass(frozen=True)
class MilpSolution:
    status: str
    assignment: np.ndarray | None = None
    lp_solution: LpSolution | None = None
    objective: float | None = None
    nodes: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


# --------------------------------------------------------------------------
# Bounded-variable revised simplex core.
#
# Internal standard form: min c.z  s.t.  M z = b,  lo <= z <= up, where z
# stacks [structural | slacks | artificials]. One slack per inequality row,
# coefficient +1, bounds [0, inf) for "<=" rows and (-inf, 0] for ">=" rows.
# Nonbasic variables rest at a finite bound (free variables rest at zero).
# --------------------------------------------------------------------------

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2


class _Simplex:
    def __init__(self, mat, rhs, lo, up):
        self.M = mat
        self.b = rhs
        self.lo = lo
        self.up = up
        self.m, self.n = mat.shape
        self.status = np.empty(self.n, dtype=np.int8)
        self.basis = np.empty(self.m, dtype=np.intp)
        self.frozen = np.zeros(self.n, dtype=bool)
        self.iterations = 0
        self._finite_lo = np.isfinite(lo)
        self._finite_up = np.isfinite(up)
        self._free = ~self._finite_lo & ~self._finite_up

    def nonbasic_values(self):
        lo_safe = np.where(self._finite_lo, self.lo, 0.0)
        up_safe = np.where(self._finite_up, self.up, 0.0)
        v = np.where(self.status == _AT_UPPER, up_safe, lo_safe)
        v[self._free] = 0.0
        return v

    def values(self, lu):
        z = self.nonbasic_values()
        z[self.basis] = 0.0
        xb = lu_solve(lu, self.b - self.M @ z, check_finite=False)
        z[self.basis] = xb
        return z

    def run(self, cost, max_iter):
        """Iterate to optimality for the given cost vector.

        Returns ("optimal" | "unbounded", values). Dantzig pricing with
        lowest-index tie-breaks; switches to Bland's rule after a degeneracy
        stall so the method cannot cycle.
        """
        bland = False
        stall = 0
        last_obj = np.inf
        for _ in range(max_iter):
            self.iterations += 1
            try:
                lu = lu_factor(self.M[:, self.basis], check_finite=False)
            except np.linalg.LinAlgError as exc:  # pragma: no cover
                raise LpNumericalError("singular basis") from exc
            z = self.values(lu)
            pi = lu_solve(lu, cost[self.basis], trans=1, check_finite=False)
            obj = float(cost @ z)
            if obj < last_obj - 1e-10 * (1.0 + abs(last_obj)):
                stall = 0
                last_obj = obj
            else:
                stall += 1
                if stall > 2 * (self.m + self.n):
                    bland = True

            entering, direction = self._price(cost, pi, bland)
            if entering is None:
                return "optimal", z

            w = lu_solve(lu, self.M[:, entering], check_finite=False)
            step, leave_pos, hits_upper = self._ratio_test(z, entering, direction, w)
            if step is None:
                return "unbounded", z

            if leave_pos is None:
                # Bound flip: the entering variable traverses to its other bound.
                self.status[entering] = _AT_UPPER if direction > 0 else _AT_LOWER
            else:
                leaving = self.basis[leave_pos]
                self.status[leaving] = _AT_UPPER if hits_upper else _AT_LOWER
                self.basis[leave_pos] = entering
                self.status[entering] = _BASIC
        raise LpNumericalError(f"simplex exceeded {max_iter} iterations")

    def _price(self, cost, pi, bland):
        d = cost - self.M.T @ pi
        nonbasic = (self.status != _BASIC) & ~self.frozen
        can_increase = nonbasic & (self._free | (self.status == _AT_LOWER)) & (d < -_PIVOT_TOL)
        can_decrease = nonbasic & (self._free | (self.status == _AT_UPPER)) & (d > _PIVOT_TOL)
        eligible = can_increase | can_decrease
        if not eligible.any():
            return None, 0.0
        if bland:
            j = int(np.flatnonzero(eligible)[0])
        else:
            score = np.where(eligible, np.abs(d), -np.inf)
            j = int(np.argmax(score))  # argmax returns the lowest index on ties
        return j, (1.0 if can_increase[j] else -1.0)

    def _ratio_test(self, z, entering, direction, w):
        """Largest step t >= 0 for the entering variable; who blocks first.

        Returns (step, leaving_position, hits_upper). leaving_position None
        with a finite step means a bound flip of the entering variable
        itself. Ties break toward the lowest blocking column index, which
        keeps Bland's rule valid and the solve deterministic.
        """
        jb = self.basis
        delta = -direction * w
        xb = z[jb]
        t = np.full(self.m, np.inf)
        dec = delta < -_PIVOT_TOL
        inc = delta > _PIVOT_TOL
        lo_b = self.lo[jb]
        up_b = self.up[jb]
        with np.errstate(invalid="ignore"):
            t[dec & np.isfinite(lo_b)] = ((xb - lo_b) / -delta)[dec & np.isfinite(lo_b)]
            t[inc & np.isfinite(up_b)] = ((up_b - xb) / delta)[inc & np.isfinite(up_b)]
        t = np.maximum(t, 0.0)

        t_own = np.inf
        if np.isfinite(self.lo[entering]) and np.isfinite(self.up[entering]):
            t_own = self.up[entering] - self.lo[entering]

        t_min = min(t.min(initial=np.inf), t_own)
        if not np.isfinite(t_min):
            return None, None, False
        if t_own <= t_min + _PIVOT_TOL and t_min >= t_own - _PIVOT_TOL:
            blockers = np.flatnonzero(t <= t_own + _PIVOT_TOL)
            if blockers.size == 0:
                return t_own, None, False
        blockers = np.flatnonzero(t <= t_min + _PIVOT_TOL)
        pos = int(blockers[np.argmin(jb[blockers])])
        return t[pos], pos, bool(inc[pos])


def _build_standard_form(problem: LpProblem):
    """Append slack columns; return (cost, M, lo, up, slack_col_of_row)."""
    m, n = problem.n_rows, problem.n_vars
    ineq_rows = [i for i, s in enumerate(problem.senses) if s != EQ]
    k = len(ineq_rows)
    M = np.zeros((m, n + k))
    M[:, :n] = problem.constraint_matrix
    lo = np.concatenate([problem.var_lower, np.zeros(k)])
    up = np.concatenate([problem.var_upper, np.zeros(k)])
    slack_of_row = np.full(m, -1, dtype=np.intp)
    for pos, row in enumerate(ineq_rows):
        col = n + pos
        M[row, col] = 1.0
        slack_of_row[row] = col
        if problem.senses[row] == LEQ:
            lo[col], up[col] = 0.0, np.inf
        else:  # GEQ
            lo[col], up[col] = -np.inf, 0.0
    cost = np.concatenate([problem.cost, np.zeros(k)])
    return cost, M, lo, up, slack_of_row


def solve_lp(problem: LpProblem, max_iter: int | None = None) -> LpSolution:
    """Solve a dense LP, returning primal, duals, reduced costs and binding rows.

    Deterministic for a fixed problem: pricing and ratio ties always break
    toward the lowest index. Raises LpNumericalError if the final vertex
    fails its own feasibility / complementary-slackness / strong-duality
    certificate, and LpInputError for malformed data.
    """
    cost, M, lo, up, slack_of_row = _build_standard_form(problem)
    m, n_total = M.shape
    n = problem.n_vars
    if max_iter is None:
        max_iter = 1000 + 50 * (m + n_total)

    sx = _Simplex(M, problem.rhs.astype(float), lo, up)
    sx.status[:] = np.where(np.isfinite(lo), _AT_LOWER, np.where(np.isfinite(up), _AT_UPPER, _AT_LOWER))
    start = sx.nonbasic_values()
    residual = problem.rhs - M @ start

    # Rows whose own slack can absorb the starting residual get that slack as
    # the initial basic variable; the rest receive an artificial column.
    art_rows = []
    basis = np.empty(m, dtype=np.intp)
    for i in range(m):
        sc = slack_of_row[i]
        r = residual[i]
        if sc >= 0 and ((problem.senses[i] == LEQ and r >= 0.0) or (problem.senses[i] == GEQ and r <= 0.0)):
            basis[i] = sc
        else:
            art_rows.append((i, 1.0 if r >= 0.0 else -1.0))
            basis[i] = n_total + len(art_rows) - 1

    n_art = len(art_rows)
    if n_art:
        A_art = np.zeros((m, n_art))
        for k, (row, sign) in enumerate(art_rows):
            A_art[row, k] = sign
        sx.M = np.hstack([M, A_art])
        sx.lo = np.concatenate([lo, np.zeros(n_art)])
        sx.up = np.concatenate([up, np.full(n_art, np.inf)])
        sx.status = np.concatenate([sx.status, np.full(n_art, _AT_LOWER, dtype=np.int8)])
        sx.n = n_total + n_art
        sx._finite_lo = np.isfinite(sx.lo)
        sx._finite_up = np.isfinite(sx.up)
        sx._free = ~sx._finite_lo & ~sx._finite_up
    sx.basis = basis
    sx.status[sx.basis] = _BASIC

    if n_art:
        phase1_cost = np.zeros(sx.n)
        phase1_cost[n_total:] = 1.0
        outcome, z = sx.run(phase1_cost, max_iter)
        if outcome != "optimal":  # pragma: no cover - phase 1 is always bounded
            raise LpNumericalError("phase 1 reported unbounded")
        if float(phase1_cost @ z) > 1e-7:
            return LpSolution(status="infeasible", iterations=sx.iterations)
        # Freeze any artificial stuck in the basis at value ~0 (redundant row).
        sx.up[n_total:] = 0.0
        sx._finite_up[n_total:] = True
        sx._free[n_total:] = False

    phase2_cost = np.concatenate([cost, np.zeros(sx.n - n_total)])
    outcome, z = sx.run(phase2_cost, max_iter)
    if outcome == "unbounded":
        return LpSolution(status="unbounded", iterations=sx.iterations)

    pi = np.linalg.solve(sx.M[:, sx.basis].T, phase2_cost[sx.basis])
    x = z[:n]
    objective = float(problem.cost @ x)
    reduced = problem.cost - problem.constraint_matrix.T @ pi

    # Oriented duals: flip the sign on "<=" rows so every inequality dual is
    # the nonnegative multiplier of its ">=" form.
    duals = pi.copy()
    binding = np.zeros(m, dtype=bool)
    for i, sense in enumerate(problem.senses):
        if sense == EQ:
            binding[i] = True
            continue
        if sense == LEQ:
            duals[i] = -pi[i]
        sc = slack_of_row[i]
        binding[i] = (sx.status[sc] != _BASIC) or abs(z[sc]) <= TOL_FEAS

    solution = LpSolution(
        status="optimal",
        primal=x,
        duals=duals,
        reduced_costs=reduced,
        binding=binding,
        objective=objective,
        iterations=sx.iterations,
    )
    _certify(problem, solution)
    return solution


def _certify(problem: LpProblem, sol: LpSolution):
    """Verify feasibility, dual signs, complementary slackness, strong duality."""
    a, b = problem.constraint_matrix, problem.rhs
    x = sol.primal
    activity = a @ x
    scale = 1.0 + np.abs(b)
    for i, sense in enumerate(problem.senses):
        gap = activity[i] - b[i]
        if sense == LEQ:
            viol = max(gap, 0.0)
        elif sense == GEQ:
            viol = max(-gap, 0.0)
        else:
            viol = abs(gap)
        if viol / scale[i] > TOL_FEAS:
            raise LpNumericalError(f"row {i} violated by {viol:.3e}")
        if sense != EQ:
            if sol.duals[i] < -TOL_CS:
                raise LpNumericalError(f"row {i} dual has wrong sign: {sol.duals[i]:.3e}")
            if abs(sol.duals[i] * gap) / scale[i] > TOL_CS:
                raise LpNumericalError(f"row {i} complementary slackness residual")
    lo, up = problem.var_lower, problem.var_upper
    xscale = 1.0 + np.abs(x).max(initial=0.0)
    lo_viol = np.where(np.isfinite(lo), np.maximum(lo - x, 0.0), 0.0)
    up_viol = np.where(np.isfinite(up), np.maximum(x - up, 0.0), 0.0)
    if max(lo_viol.max(initial=0.0), up_viol.max(initial=0.0)) > TOL_FEAS * xscale:
        raise LpNumericalError("variable bound violated")
    gap = abs(sol.objective - dual_objective(problem, sol))
    if gap > TOL_SD * (1.0 + abs(sol.objective)):
        raise LpNumericalError(f"strong duality gap {gap:.3e} exceeds tolerance")


def dual_objective(problem: LpProblem, sol: LpSolution) -> float:
    """Dual objective: b.pi plus bound terms for variables resting at a bound."""
    pi = sol.duals.copy()
    for i, sense in enumerate(problem.senses):
        if sense == LEQ:
            pi[i] = -pi[i]
    total = float(problem.rhs @ pi)
    d = sol.reduced_costs
    x = sol.primal
    lo, up = problem.var_lower, problem.var_upper
    for j in range(problem.n_vars):
        at_lower = np.isfinite(lo[j]) and abs(x[j] - lo[j]) <= 1e-7 * (1 + abs(lo[j]))
        at_upper = np.isfinite(up[j]) and abs(x[j] - up[j]) <= 1e-7 * (1 + abs(up[j]))
        if at_lower and d[j] > 0:
            total += d[j] * lo[j]
        elif at_upper and d[j] < 0:
            total += d[j] * up[j]
    return total


# --------------------------------------------------------------------------
# Branch and bound
# --------------------------------------------------------------------------


def fix_binaries_and_resolve(problem: MilpProblem, assignment) -> LpSolution:
    """Pin every binary to the given 0/1 value and solve the remaining LP.

    This is the pricing solve: the LP whose duals define market prices once
    the commitment is fixed.
    """
    assignment = np.asarray(assignment, dtype=float)
    if assignment.size != len(problem.binary_indices):
        raise LpInputError("assignment length does not match binary count")
    lo = problem.lp.var_lower.copy()
    up = problem.lp.var_upper.copy()
    for k, j in enumerate(problem.binary_indices):
        v = round(float(assignment[k]))
        if v not in (0, 1):
            raise LpInputError(f"assignment[{k}] = {assignment[k]} is not binary")
        lo[j] = up[j] = float(v)
    fixed = LpProblem(
        cost=problem.lp.cost,
        constraint_matrix=problem.lp.constraint_matrix,
        rhs=problem.lp.rhs,
        senses=problem.lp.senses,
        var_lower=lo,
        var_upper=up,
    )
    return solve_lp(fixed)


def _relax(problem: MilpProblem, fixed: dict[int, float]) -> LpProblem:
    lo = problem.lp.var_lower.copy()
    up = problem.lp.var_upper.copy()
    for j in problem.binary_indices:
        lo[j] = max(lo[j], 0.0)
        up[j] = min(up[j], 1.0)
    for j, v in fixed.items():
        lo[j] = up[j] = v
    return LpProblem(
        cost=problem.lp.cost,
        constraint_matrix=problem.lp.constraint_matrix,
        rhs=problem.lp.rhs,
        senses=problem.lp.senses,
        var_lower=lo,
        var_upper=up,
    )


_INT_TOL = 1e-6


def solve_milp(problem: MilpProblem, max_nodes: int = 200_000) -> MilpSolution:
    """Depth-first branch and bound over the binary variables.

    Exact: prunes only nodes whose relaxation bound cannot beat the incumbent,
    so the returned objective equals exhaustive enumeration. Intended for
    desk-scale problems (roughly <= 20 binaries, more when the relaxation is
    near-integral). Branches on the most fractional binary, lowest index on
    ties; the child nearer the relaxation value is explored first.
    """
    bins = problem.binary_indices
    if not bins:
        sol = solve_lp(problem.lp)
        return MilpSolution(
            status=sol.status,
            assignment=np.zeros(0),
            lp_solution=sol if sol.is_optimal else None,
            objective=sol.objective,
            nodes=1,
        )

    incumbent_obj = np.inf
    incumbent: dict[int, float] | None = None
    nodes = 0
    stack: list[dict[int, float]] = [{}]

    # Root rounding heuristic: snapping the relaxation often yields a feasible
    # commitment immediately, which makes pruning effective from the start.
    root = solve_lp(_relax(problem, {}))
    if root.status == "infeasible":
        return MilpSolution(status="infeasible", nodes=1)
    if root.status == "optimal":
        for rounder in (lambda v: float(round(v)), lambda v: 1.0 if v > _INT_TOL else 0.0):
            guess = {j: rounder(root.primal[j]) for j in bins}
            trial = solve_lp(_relax(problem, guess))
            if trial.is_optimal and trial.objective < incumbent_obj - 1e-12:
                incumbent_obj = trial.objective
                incumbent = guess

    while stack:
        fixed = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise MilpError(f"branch and bound exceeded {max_nodes} nodes")
        rel = solve_lp(_relax(problem, fixed))
        if rel.status != "optimal":
            continue
        if rel.objective >= incumbent_obj - 1e-9:
            continue
        frac = {j: rel.primal[j] for j in bins if j not in fixed}
        fractional = {j: v for j, v in frac.items() if min(v, 1.0 - v) > _INT_TOL}
        if not fractional:
            assignment = dict(fixed)
            for j, v in frac.items():
                assignment[j] = float(round(v))
            if rel.objective < incumbent_obj - 1e-12:
                incumbent_obj = rel.objective
                incumbent = assignment
            continue
        branch = min(fractional, key=lambda j: (abs(fractional[j] - 0.5), j))
        first = 1.0 if fractional[branch] >= 0.5 else 0.0
        # LIFO: push the less promising child first.
        stack.append({**fixed, branch: 1.0 - first})
        stack.append({**fixed, branch: first})

    if incumbent is None:
        return MilpSolution(status="infeasible", nodes=nodes)
    assignment = np.array([incumbent[j] for j in bins])
    lp_at_incumbent = fix_binaries_and_resolve(problem, assignment)
    return MilpSolution(
        status="optimal",
        assignment=assignment,
        lp_solution=lp_at_incumbent,
        objective=lp_at_incumbent.objective,
        nodes=nodes,
    )
