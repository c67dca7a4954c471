"""Exact linear programming over the rationals.

A dense-tableau primal simplex with Bland's anti-cycling rule.  Problem sizes
in this package are tiny (tens of variables, at most a few hundred rows), so
clarity and exactness win over sparsity tricks.  All arithmetic is
``fractions.Fraction``; results are exact vertices.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .values import as_fraction

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

Coeffs = Union[Sequence, Dict[int, object]]


class LPError(RuntimeError):
    pass


class LPResult:
    def __init__(self, status: str, x: Optional[List[Fraction]], value: Optional[Fraction]):
        self.status = status
        self.x = x
        self.value = value

    def __repr__(self):
        return f"LPResult({self.status}, value={self.value})"


class LinearProgram:
    """min (or max) c.x subject to linear constraints.

    Variables are nonnegative by default; indices listed in ``free`` are
    unrestricted (internally split into differences of nonnegatives).
    """

    def __init__(self, num_vars: int, free: Sequence[int] = ()):
        self.n = num_vars
        self.free = sorted(set(free))
        if any(j < 0 or j >= num_vars for j in self.free):
            raise LPError("free variable index out of range")
        self.rows: List[List[Fraction]] = []
        self.senses: List[str] = []
        self.rhs: List[Fraction] = []

    def _vector(self, coeffs: Coeffs) -> List[Fraction]:
        row = [Fraction(0)] * self.n
        if isinstance(coeffs, dict):
            for j, c in coeffs.items():
                row[j] = as_fraction(c)
        else:
            if len(coeffs) != self.n:
                raise LPError(f"expected {self.n} coefficients, got {len(coeffs)}")
            row = [as_fraction(c) for c in coeffs]
        return row

    def add_constraint(self, coeffs: Coeffs, sense: str, rhs) -> None:
        if sense not in ("<=", ">=", "=="):
            raise LPError(f"bad sense {sense!r}")
        self.rows.append(self._vector(coeffs))
        self.senses.append(sense)
        self.rhs.append(as_fraction(rhs))

    def minimize(self, objective: Coeffs) -> LPResult:
        return self._solve(self._vector(objective), maximize=False)

    def maximize(self, objective: Coeffs) -> LPResult:
        return self._solve(self._vector(objective), maximize=True)

    # -- standard-form simplex ----------------------------------------------

    def _solve(self, c: List[Fraction], maximize: bool) -> LPResult:
        # Map original variables to standard-form columns (x = x+ - x- for
        # free variables), append slack/surplus columns, then run two phases.
        free_set = set(self.free)
        col_of: List[Tuple[int, Optional[int]]] = []  # var -> (plus col, minus col)
        ncols = 0
        for j in range(self.n):
            if j in free_set:
                col_of.append((ncols, ncols + 1))
                ncols += 2
            else:
                col_of.append((ncols, None))
                ncols += 1
        m = len(self.rows)
        slack_cols = []
        for i in range(m):
            if self.senses[i] == "<=":
                slack_cols.append((i, Fraction(1)))
            elif self.senses[i] == ">=":
                slack_cols.append((i, Fraction(-1)))
            else:
                slack_cols.append(None)
        nslack = sum(1 for s in slack_cols if s is not None)
        total = ncols + nslack

        A = [[Fraction(0)] * total for _ in range(m)]
        b = [Fraction(0)] * m
        for i in range(m):
            row = self.rows[i]
            for j in range(self.n):
                if row[j] == 0:
                    continue
                plus, minus = col_of[j]
                A[i][plus] = row[j]
                if minus is not None:
                    A[i][minus] = -row[j]
            b[i] = self.rhs[i]
        k = ncols
        for i in range(m):
            if slack_cols[i] is not None:
                A[i][k] = slack_cols[i][1]
                k += 1
        # Make all right-hand sides nonnegative.
        for i in range(m):
            if b[i] < 0:
                A[i] = [-x for x in A[i]]
                b[i] = -b[i]

        cost = [Fraction(0)] * total
        sign = Fraction(-1) if maximize else Fraction(1)
        for j in range(self.n):
            plus, minus = col_of[j]
            cost[plus] += sign * c[j]
            if minus is not None:
                cost[minus] -= sign * c[j]

        tableau, basis, feasible = _phase_one(A, b, total)
        if not feasible:
            return LPResult(INFEASIBLE, None, None)
        status = _phase_two(tableau, basis, cost, total)
        if status == UNBOUNDED:
            return LPResult(UNBOUNDED, None, None)
        xstd = [Fraction(0)] * total
        for i, bj in enumerate(basis):
            if bj < total:
                xstd[bj] = tableau[i][-1]
        x = []
        for j in range(self.n):
            plus, minus = col_of[j]
            x.append(xstd[plus] - (xstd[minus] if minus is not None else Fraction(0)))
        value = sum(ci * xi for ci, xi in zip(c, x))
        return LPResult(OPTIMAL, x, value)


def _pivot(tableau: List[List[Fraction]], basis: List[int], row: int, col: int) -> None:
    piv = tableau[row][col]
    tableau[row] = [x / piv for x in tableau[row]]
    prow = tableau[row]
    for i in range(len(tableau)):
        if i == row:
            continue
        factor = tableau[i][col]
        if factor != 0:
            tableau[i] = [x - factor * y for x, y in zip(tableau[i], prow)]
    basis[row] = col


def _simplex(tableau: List[List[Fraction]], basis: List[int],
             reduced: List[Fraction], ncols: int) -> Tuple[str, List[Fraction]]:
    """Run simplex iterations with Bland's rule on the given reduced costs."""
    m = len(tableau)
    while True:
        enter = -1
        for j in range(ncols):
            if reduced[j] < 0:
                enter = j
                break
        if enter < 0:
            return OPTIMAL, reduced
        leave = -1
        best: Optional[Fraction] = None
        for i in range(m):
            a = tableau[i][enter]
            if a > 0:
                ratio = tableau[i][-1] / a
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave < 0:
            return UNBOUNDED, reduced
        _pivot(tableau, basis, leave, enter)
        # update reduced costs: reduced -= reduced[enter] * pivot row
        factor = reduced[enter]
        prow = tableau[leave]
        reduced = [r - factor * y for r, y in zip(reduced, prow[:ncols])] + []
        reduced[enter] = Fraction(0)


def _phase_one(A: List[List[Fraction]], b: List[Fraction], ncols: int):
    m = len(A)
    total = ncols + m
    tableau = [A[i][:] + [Fraction(1) if k == i else Fraction(0) for k in range(m)] + [b[i]]
               for i in range(m)]
    basis = [ncols + i for i in range(m)]
    # Reduced costs for min sum(artificials): c_j - sum over rows of column j.
    reduced = [Fraction(0)] * total
    for j in range(ncols):
        reduced[j] = -sum(tableau[i][j] for i in range(m))
    status, reduced = _simplex(tableau, basis, reduced, total)
    if status != OPTIMAL:  # phase one is always bounded below by 0
        raise LPError("phase one returned unbounded")
    obj = sum(tableau[i][-1] for i in range(m) if basis[i] >= ncols)
    if obj != 0:
        return tableau, basis, False
    # Drive any lingering artificial variables out of the basis.
    for i in range(m):
        if basis[i] >= ncols:
            piv = next((j for j in range(ncols) if tableau[i][j] != 0), None)
            if piv is not None:
                _pivot(tableau, basis, i, piv)
    # Drop artificial columns; redundant rows (still basic artificial, all
    # zero) keep a zero rhs and are harmless.
    trimmed = [row[:ncols] + [row[-1]] for row in tableau]
    return trimmed, basis, True


def _phase_two(tableau: List[List[Fraction]], basis: List[int],
               cost: List[Fraction], ncols: int) -> str:
    m = len(tableau)
    reduced = cost[:]
    for i in range(m):
        bj = basis[i]
        if bj < ncols and cost[bj] != 0:
            factor = cost[bj]
            for j in range(ncols):
                reduced[j] -= factor * tableau[i][j]
    for i in range(m):
        if basis[i] < ncols:
            reduced[basis[i]] = Fraction(0)
    status, _ = _simplex(tableau, basis, reduced, ncols)
    return status


# -- convenience wrappers -----------------------------------------------------


def feasible(num_vars: int, build, free: Sequence[int] = ()) -> bool:
    """True iff the constraint system built by ``build(lp)`` is feasible."""
    lp = LinearProgram(num_vars, free=free)
    build(lp)
    return lp.minimize([0] * num_vars).status == OPTIMAL
