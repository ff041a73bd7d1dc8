"""Bounded-variable revised simplex.

Solves ``min c @ x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``,
``lower <= x <= upper`` (bounds may be infinite). Inequalities get slack
columns; rows not covered by a triangular crash basis get an artificial,
and a phase-one on their sum finds a feasible basis.
Nonbasic variables sit at a finite bound (free ones at zero). Pricing is
Dantzig's largest reduced cost until the method stalls on degenerate
pivots, after which Bland's smallest-index rule takes over until progress
resumes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalBreakdown

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, -1


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float)
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.asarray(self.A_ub, float))
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)


@dataclass
class LpSolution:
    status: str
    objective: float
    values: np.ndarray
    iterations: int
    # multipliers of the original rows; ub multipliers are <= 0 at optimality
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Simplex:
    def __init__(self, A, b, c, lower, upper, opt_tol=1e-9, feas_tol=1e-9, pivot_tol=1e-9,
                 refactor_every=64, degenerate_limit=30, max_iter=None):
        self.m, self.n = A.shape
        self.opt_tol = opt_tol
        self.feas_tol = feas_tol
        self.pivot_tol = pivot_tol
        self.refactor_every = refactor_every
        self.degenerate_limit = degenerate_limit
        self.max_iter = max_iter or 50 * (self.m + self.n) + 1000
        self.iterations = 0

        x = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
        state = np.where(np.isfinite(lower), _AT_LOWER, np.where(np.isfinite(upper), _AT_UPPER, _FREE))
        resid = b - A @ x

        # triangular crash: repeatedly take a column with a single nonzero
        # among the still-active rows (free columns first, then wide bounds),
        # then back-solve in reverse order; rows whose column would leave its
        # bounds, or that never got one, are covered by artificials
        m, n = self.m, self.n
        rows_nz, cols_nz = np.nonzero(A)
        col_rows = [[] for _ in range(n)]
        row_cols = [[] for _ in range(m)]
        for i, j in zip(rows_nz.tolist(), cols_nz.tolist()):
            col_rows[j].append(i)
            row_cols[i].append(j)
        fixed = (lower == upper).tolist()
        width = upper - lower
        free = ~np.isfinite(lower) & ~np.isfinite(upper)
        rank = np.where(free, 0, np.where(np.isfinite(width), 2, 1)).tolist()
        neg_width = (-np.where(np.isfinite(width), width, 0.0)).tolist()
        cnt = [len(r) for r in col_rows]
        heap = [(rank[j], neg_width[j], j) for j in range(n) if cnt[j] == 1 and not fixed[j]]
        heapq.heapify(heap)
        active = [True] * m
        used = [False] * n
        order = []
        while heap:
            _, _, j = heapq.heappop(heap)
            if used[j] or cnt[j] != 1:
                continue
            i = next(r for r in col_rows[j] if active[r])
            order.append((i, j))
            used[j] = True
            active[i] = False
            for k in row_cols[i]:
                cnt[k] -= 1
                if cnt[k] == 1 and not used[k] and not fixed[k]:
                    heapq.heappush(heap, (rank[k], neg_width[k], k))
        basis = np.full(m, -1)
        for i, j in reversed(order):
            r_i = b[i] - A[i] @ x + A[i, j] * x[j]
            v = r_i / A[i, j]
            if lower[j] - 1e-9 <= v <= upper[j] + 1e-9:
                x[j] = min(max(v, lower[j]), upper[j])
                basis[i] = j
                state[j] = _BASIC
        resid = b - A @ x
        resid[basis >= 0] = 0.0
        art_rows = np.flatnonzero(basis < 0)
        sign = np.where(resid[art_rows] >= 0, 1.0, -1.0)
        k = len(art_rows)
        art = np.zeros((m, k))
        art[art_rows, np.arange(k)] = sign
        basis[art_rows] = n + np.arange(k)

        self.n_struct = n
        self.n_art = k
        self.A = np.hstack([A, art])
        self.b = b
        self.c = np.concatenate([c, np.zeros(k)])
        self.lower = np.concatenate([lower, np.zeros(k)])
        self.upper = np.concatenate([upper, np.full(k, np.inf)])
        self.x = np.concatenate([x, np.abs(resid[art_rows])])
        self.state = np.concatenate([state, np.full(k, _BASIC)])
        self.basis = basis
        self.Binv = np.linalg.inv(self.A[:, basis])
        self.fixed = self.lower == self.upper

    # -- linear algebra ------------------------------------------------------
    def _refactor(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis") from exc
        nonbasic = self.state != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs

    # -- core loop -----------------------------------------------------------
    def run(self, cost: np.ndarray) -> str:
        A, x, basis, state = self.A, self.x, self.basis, self.state
        lower, upper = self.lower, self.upper
        m = self.m
        tol = self.opt_tol
        xB = x[basis].copy()
        lB, uB, cB = lower[basis].copy(), upper[basis].copy(), cost[basis].copy()
        # pricing weights: +1 at lower, -1 at upper, 0 basic or fixed
        movable = ~self.fixed
        dirw = np.where(movable & (state == _AT_LOWER), 1.0, np.where(movable & (state == _AT_UPPER), -1.0, 0.0))
        freew = movable & (state == _FREE)
        nfree = int(freew.sum())

        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iter:
                x[basis] = xB
                raise NumericalBreakdown(f"iteration limit {self.max_iter} exceeded")
            if since_refactor >= self.refactor_every:
                x[basis] = xB
                self._refactor()
                xB = x[basis].copy()
                since_refactor = 0

            y = cB @ self.Binv
            d = cost - y @ A
            viol = -d * dirw
            if nfree:
                viol = np.where(freew, np.abs(d), viol)
            if bland:
                cand = np.flatnonzero(viol > tol)
                if cand.size == 0:
                    break
                j = int(cand[0])
            else:
                j = int(np.argmax(viol))
                if viol[j] <= tol:
                    break
            s = 1.0 if d[j] < 0 else -1.0

            alpha = self.Binv @ A[:, j]
            delta = s * alpha
            absd = np.abs(delta)
            ok = absd > self.pivot_tol
            ratios = np.full(m, np.inf)
            num = np.where(delta > 0, xB - lB, uB - xB)
            ratios[ok] = num[ok] / absd[ok]
            np.maximum(ratios, 0.0, out=ratios)
            r = int(np.argmin(ratios)) if m else -1
            t_min = ratios[r] if m else np.inf
            t_flip = upper[j] - lower[j]

            if t_min == np.inf and t_flip == np.inf:
                x[basis] = xB
                return UNBOUNDED

            self.iterations += 1
            if t_flip <= t_min:
                t = t_flip
                xB -= t * delta
                if s > 0:
                    x[j], state[j], dirw[j] = upper[j], _AT_UPPER, -1.0
                else:
                    x[j], state[j], dirw[j] = lower[j], _AT_LOWER, 1.0
            else:
                t = t_min
                ties = np.flatnonzero(ratios <= t_min + 1e-12)
                if ties.size > 1:
                    if bland:
                        r = int(ties[np.argmin(basis[ties])])
                    else:
                        r = int(ties[np.argmax(absd[ties])])
                leaving = basis[r]
                entering_value = x[j] + s * t
                xB -= t * delta
                if delta[r] > 0:
                    x[leaving], state[leaving] = lower[leaving], _AT_LOWER
                    dirw[leaving] = 0.0 if self.fixed[leaving] else 1.0
                else:
                    x[leaving], state[leaving] = upper[leaving], _AT_UPPER
                    dirw[leaving] = 0.0 if self.fixed[leaving] else -1.0
                row = self.Binv[r] / alpha[r]
                self.Binv -= np.outer(alpha, row)
                self.Binv[r] = row
                basis[r] = j
                state[j] = _BASIC
                dirw[j] = 0.0
                if freew[j]:
                    freew[j] = False
                    nfree -= 1
                xB[r] = entering_value
                lB[r], uB[r], cB[r] = lower[j], upper[j], cost[j]
                since_refactor += 1

            if t <= 1e-12:
                degenerate += 1
                if degenerate > self.degenerate_limit:
                    bland = True
            else:
                degenerate = 0
                bland = False
        x[basis] = xB
        return OPTIMAL

    def drive_out_artificials(self):
        """Pivot zero-valued artificials out of the basis where possible."""
        n = self.n_struct
        if not np.any(self.basis >= n):
            return
        for r in range(self.m):
            if self.basis[r] < n:
                continue
            row = self.Binv[r] @ self.A[:, :n]
            nonbasic = (self.state[:n] != _BASIC)
            cand = np.flatnonzero(nonbasic & (np.abs(row) > 1e-7))
            if cand.size == 0:
                continue
            j = int(cand[np.argmax(np.abs(row[cand]))])
            alpha = self.Binv @ self.A[:, j]
            leaving = self.basis[r]
            row_b = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, row_b)
            self.Binv[r] = row_b
            self.basis[r] = j
            self.state[j] = _BASIC
            self.state[leaving] = _AT_LOWER
            self.x[leaving] = 0.0
        self._refactor()


def solve_lp(problem, **options) -> LpSolution:
    """Solve the LP relaxation of ``problem``.

    ``problem`` is anything exposing ``c, A_eq, b_eq, A_ub, b_ub, lower,
    upper`` (a :class:`LinearProgram` or a ``MilpProblem``); integrality is
    ignored. The reported objective includes ``problem.offset`` if present.
    """
    c = np.asarray(problem.c, dtype=float)
    n = len(c)
    A_eq = np.asarray(problem.A_eq, dtype=float).reshape(-1, n)
    A_ub = np.asarray(problem.A_ub, dtype=float).reshape(-1, n)
    b_eq = np.asarray(problem.b_eq, dtype=float)
    b_ub = np.asarray(problem.b_ub, dtype=float)
    lower = np.asarray(problem.lower, dtype=float)
    upper = np.asarray(problem.upper, dtype=float)
    offset = float(getattr(problem, "offset", 0.0))
    m_eq, m_ub = len(b_eq), len(b_ub)

    if np.any(lower > upper + 1e-12) or np.any(lower == np.inf) or np.any(upper == -np.inf):
        return LpSolution(INFEASIBLE, np.nan, np.full(n, np.nan), 0)

    A = np.block([[A_eq, np.zeros((m_eq, m_ub))], [A_ub, np.eye(m_ub)]])
    b = np.concatenate([b_eq, b_ub])
    c_std = np.concatenate([c, np.zeros(m_ub)])
    lo = np.concatenate([lower, np.zeros(m_ub)])
    hi = np.concatenate([np.maximum(upper, lower), np.full(m_ub, np.inf)])
    m, n_std = A.shape

    if m == 0:
        # pure box problem
        x = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
        if not np.all(np.isfinite(x)):
            return LpSolution(UNBOUNDED, -np.inf, x, 0)
        return LpSolution(OPTIMAL, float(c @ x) + offset, x, 0, np.zeros(0), np.zeros(0), c.copy())

    sx = _Simplex(A, b, c_std, lo, hi, **options)
    phase1 = np.concatenate([np.zeros(n_std), np.ones(sx.n_art)])
    if sx.n_art:
        sx.run(phase1)
    infeas = float(np.sum(sx.x[n_std:]))
    if infeas > sx.feas_tol * (1.0 + np.abs(b).max(initial=0.0)) * 10:
        return LpSolution(INFEASIBLE, np.nan, sx.x[:n].copy(), sx.iterations)

    sx.upper[n_std:] = 0.0
    sx.fixed = sx.lower == sx.upper
    sx.x[n_std:] = np.where(sx.state[n_std:] == _BASIC, sx.x[n_std:], 0.0)
    sx.drive_out_artificials()
    status = sx.run(sx.c)
    sx._refactor()
    x = sx.x[:n].copy()
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, -np.inf, x, sx.iterations)

    # snap values onto bounds they are within rounding of
    for bound in (lower, upper):
        near = np.isfinite(bound) & (np.abs(x - bound) <= 1e-11 * (1 + np.abs(bound)))
        x[near] = bound[near]
    y = sx.c[sx.basis] @ sx.Binv
    reduced = c - y @ A[:, :n]
    return LpSolution(OPTIMAL, float(c @ x) + offset, x, sx.iterations,
                      y[:m_eq].copy(), y[m_eq:].copy(), reduced)


def complementary_slackness_residual(problem, sol: LpSolution) -> float:
    """Largest violation of dual sign conditions or complementary slackness."""
    x = sol.values
    lower = np.asarray(problem.lower, float)
    upper = np.asarray(problem.upper, float)
    worst = 0.0
    for j, dj in enumerate(sol.reduced_costs):
        if dj > 0:
            gap = x[j] - lower[j] if np.isfinite(lower[j]) else np.inf
        elif dj < 0:
            gap = upper[j] - x[j] if np.isfinite(upper[j]) else np.inf
        else:
            continue
        worst = max(worst, abs(dj) * min(gap, 1e12) if np.isfinite(gap) else abs(dj))
    if len(sol.duals_ub):
        slack = np.asarray(problem.b_ub, float) - np.asarray(problem.A_ub, float) @ x
        worst = max(worst, float(np.max(np.abs(sol.duals_ub * slack), initial=0.0)))
        worst = max(worst, float(np.max(sol.duals_ub, initial=0.0)))
    return worst
