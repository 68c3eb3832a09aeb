"""Self-contained convex quadratic programming.

Solves

    min  1/2 x'Qx + c'x
    s.t. A x  = b
         G x <= h
         lb <= x <= ub

with Q symmetric positive semidefinite, via an infeasible-start
primal-dual interior point method (Mehrotra predictor-corrector) on
sparse matrices.  Linear programs are the Q = 0 special case.

Infeasibility is certified with a phase-1 relaxation: minimize the
uniform constraint violation t subject to Gx <= h + t; the problem is
declared infeasible when the optimal t exceeds PHASE1_TOL (constraint
rows are normalized to unit inf-norm, so t is a scaled violation).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PHASE1_TOL = 1e-7
_REG = 1e-11
_HUGE = 1e13


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


class VariableLayout:
    """Named contiguous variable blocks for assembling programs.

    Keeps column offsets in one place so constraint builders cannot
    disagree about where a block lives.
    """

    def __init__(self):
        self._slices: dict[str, slice] = {}
        self._size = 0

    def add(self, name: str, size: int) -> slice:
        if name in self._slices:
            raise ValueError(f"duplicate variable block {name!r}")
        s = slice(self._size, self._size + size)
        self._slices[name] = s
        self._size += size
        return s

    def sl(self, name: str) -> slice:
        return self._slices[name]

    @property
    def size(self) -> int:
        return self._size


@dataclass(frozen=True)
class ConvexProgram:
    """Data of one convex QP/LP in the standard form documented above.

    Matrices may be dense ndarrays or scipy sparse; ``q`` and the
    constraint blocks may be None when absent.  Bounds default to free.
    """

    c: np.ndarray
    q: object = None
    a_eq: object = None
    b_eq: np.ndarray | None = None
    g_ineq: object = None
    h_ineq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        object.__setattr__(self, "c", c)
        n = c.size
        if self.q is not None:
            q = sp.csr_matrix(self.q)
            if q.shape != (n, n):
                raise ValueError(f"q must be {n}x{n}, got {q.shape}")
            asym = abs(q - q.T)
            if asym.nnz and asym.max() > 1e-8 * max(1.0, abs(q).max()):
                raise ValueError("q must be symmetric")
            if n <= 400:
                w = np.linalg.eigvalsh(q.toarray())
                if w.min() < -1e-8 * max(1.0, w.max(), 1.0):
                    raise ValueError("q must be positive semidefinite")
            object.__setattr__(self, "q", q)
        for mat, vec, mname in (("a_eq", "b_eq", "equality"), ("g_ineq", "h_ineq", "inequality")):
            m = getattr(self, mat)
            v = getattr(self, vec)
            if (m is None) != (v is None):
                raise ValueError(f"{mname} matrix and rhs must be given together")
            if m is not None:
                ms = sp.csr_matrix(m)
                vv = np.asarray(v, dtype=float).ravel()
                if ms.shape != (vv.size, n):
                    raise ValueError(f"{mname} block shape mismatch: {ms.shape} vs rhs {vv.size}, n={n}")
                object.__setattr__(self, mat, ms)
                object.__setattr__(self, vec, vv)
        for bname in ("lb", "ub"):
            bv = getattr(self, bname)
            if bv is not None:
                bv = np.asarray(bv, dtype=float).ravel()
                if bv.size != n:
                    raise ValueError(f"{bname} must have length {n}")
                object.__setattr__(self, bname, bv)

    @property
    def n(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float | None = None
    ineq_duals: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def solve(program: ConvexProgram, tol: float = 1e-9, max_iter: int = 100) -> Solution:
    """Solve a convex program; statuses are reported, never silent garbage."""
    n = program.n
    q = program.q if program.q is not None else sp.csr_matrix((n, n))
    c = program.c

    a_parts, b_parts = [], []
    if program.a_eq is not None:
        a_parts.append(sp.csr_matrix(program.a_eq))
        b_parts.append(program.b_eq)
    g_parts, h_parts = [], []
    if program.g_ineq is not None:
        g_parts.append(sp.csr_matrix(program.g_ineq))
        h_parts.append(program.h_ineq)

    # Bounds become inequality rows; an equal pair lb == ub becomes an
    # equality row so the interior stays nonempty.
    lb = program.lb if program.lb is not None else np.full(n, -np.inf)
    ub = program.ub if program.ub is not None else np.full(n, np.inf)
    fixed = np.isfinite(lb) & np.isfinite(ub) & (lb == ub)
    if fixed.any():
        idx = np.flatnonzero(fixed)
        rows = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))
        a_parts.append(rows)
        b_parts.append(lb[idx])
    up = np.flatnonzero(np.isfinite(ub) & ~fixed)
    if up.size:
        g_parts.append(sp.csr_matrix((np.ones(up.size), (np.arange(up.size), up)), shape=(up.size, n)))
        h_parts.append(ub[up])
    lo = np.flatnonzero(np.isfinite(lb) & ~fixed)
    if lo.size:
        g_parts.append(sp.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)))
        h_parts.append(-lb[lo])

    a = sp.vstack(a_parts, format="csr") if a_parts else sp.csr_matrix((0, n))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    g = sp.vstack(g_parts, format="csr") if g_parts else sp.csr_matrix((0, n))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)

    n_user_ineq = program.g_ineq.shape[0] if program.g_ineq is not None else 0

    # Row equilibration keeps residual tolerances meaningful across blocks.
    g, h, g_scale = _scale_rows(g, h)
    a, b, _ = _scale_rows(a, b)

    if a.shape[0]:
        x_eq, eq_ok = _least_squares(a, b)
        if not eq_ok:
            return Solution(SolveStatus.INFEASIBLE)
    else:
        x_eq = np.zeros(n)

    if g.shape[0] == 0:
        return _solve_equality_qp(q, c, a, b, x_eq)

    res = _ipm(q, c, a, b, g, h, x_eq, tol=tol, max_iter=max_iter)
    if res.status is SolveStatus.OPTIMAL or res.status is SolveStatus.UNBOUNDED:
        return _finalize(res, program, g_scale, n_user_ineq)

    # Main solve did not converge: certify feasibility before blaming numerics.
    t_star = _phase1(a, b, g, h, x_eq, max_iter=max_iter)
    if t_star is None:
        return Solution(SolveStatus.NUMERICAL_FAILURE, iterations=res.iterations)
    if t_star > PHASE1_TOL:
        return Solution(SolveStatus.INFEASIBLE, iterations=res.iterations)
    if _has_unbounded_ray(q, c, a, g):
        return Solution(SolveStatus.UNBOUNDED, iterations=res.iterations)
    retry = _ipm(q, c, a, b, g, h, x_eq, tol=tol, max_iter=2 * max_iter, reg=1e-9)
    if retry.status is SolveStatus.OPTIMAL or retry.status is SolveStatus.UNBOUNDED:
        return _finalize(retry, program, g_scale, n_user_ineq)
    return Solution(SolveStatus.NUMERICAL_FAILURE, iterations=retry.iterations)


@dataclass
class _IpmResult:
    status: SolveStatus
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    iterations: int = 0


def _finalize(res: _IpmResult, program: ConvexProgram, g_scale: np.ndarray, n_user_ineq: int) -> Solution:
    if res.status is not SolveStatus.OPTIMAL:
        return Solution(res.status, iterations=res.iterations)
    x = res.x
    obj = float(0.5 * x @ (program.q @ x) + program.c @ x) if program.q is not None else float(program.c @ x)
    duals = None
    if n_user_ineq and res.z is not None:
        duals = res.z[:n_user_ineq] * g_scale[:n_user_ineq]
    return Solution(SolveStatus.OPTIMAL, x=x, objective=obj, ineq_duals=duals, iterations=res.iterations)


def _scale_rows(m: sp.csr_matrix, rhs: np.ndarray):
    if m.shape[0] == 0:
        return m, rhs, np.ones(0)
    norms = np.maximum(abs(m).max(axis=1).toarray().ravel(), 1e-12)
    d = sp.diags(1.0 / norms)
    return (d @ m).tocsr(), rhs / norms, 1.0 / norms


def _least_squares(a: sp.csr_matrix, b: np.ndarray):
    """Least-norm solution of Ax = b and whether the system is consistent."""
    out = spla.lsqr(a, b, atol=1e-12, btol=1e-12, iter_lim=10 * (a.shape[0] + a.shape[1]))
    x = out[0]
    resid = np.linalg.norm(a @ x - b, np.inf) if b.size else 0.0
    return x, resid <= 1e-7 * (1.0 + np.linalg.norm(b, np.inf) if b.size else 1.0)


def _solve_equality_qp(q, c, a, b, x_eq) -> Solution:
    n = q.shape[0]
    me = a.shape[0]
    kkt = sp.bmat([[q + _REG * sp.eye(n), a.T], [a, -_REG * sp.eye(me) if me else None]], format="csc") \
        if me else (q + _REG * sp.eye(n)).tocsc()
    rhs = np.concatenate([-c, b]) if me else -c
    try:
        lu = spla.splu(kkt)
        sol = lu.solve(rhs)
    except RuntimeError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)):
        dense = kkt.toarray()
        sol, *_ = np.linalg.lstsq(dense, rhs, rcond=None)
    x = sol[:n]
    stat = q @ x + c + (a.T @ sol[n:] if me else 0.0)
    scale = 1.0 + np.linalg.norm(c, np.inf)
    if np.linalg.norm(stat, np.inf) > 1e-6 * scale:
        return Solution(SolveStatus.UNBOUNDED)
    if me and np.linalg.norm(a @ x - b, np.inf) > 1e-6 * (1.0 + np.linalg.norm(b, np.inf)):
        return Solution(SolveStatus.INFEASIBLE)
    obj = float(0.5 * x @ (q @ x) + c @ x)
    return Solution(SolveStatus.OPTIMAL, x=x, objective=obj, ineq_duals=np.zeros(0))


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _ipm(q, c, a, b, g, h, x0, tol: float, max_iter: int, reg: float = _REG) -> _IpmResult:
    n = q.shape[0]
    me, mi = a.shape[0], g.shape[0]

    x = x0.copy()
    y = np.zeros(me)
    s = np.maximum(h - g @ x, 1.0)
    z = np.clip(1.0 / s, 1e-6, 1e6)   # balanced products z*s ~= 1

    b_scale = 1.0 + (np.linalg.norm(b, np.inf) if me else 0.0)
    h_scale = 1.0 + np.linalg.norm(h, np.inf)
    c_scale = 1.0 + np.linalg.norm(c, np.inf)

    # Best near-feasible iterate: the fallback if late iterations lose the
    # factorization to ill-conditioning but the contract is already met.
    best = None
    best_err = np.inf
    last_step = 1.0

    def _accept_best(iterations):
        if best is not None and best_err <= 1.0:
            bx, bz = best
            return _IpmResult(SolveStatus.OPTIMAL, x=bx, z=bz, iterations=iterations)
        return _IpmResult(SolveStatus.NUMERICAL_FAILURE, iterations=iterations)

    for it in range(1, max_iter + 1):
        qx = q @ x
        rd = qx + c + (a.T @ y if me else 0.0) + g.T @ z
        rp = (a @ x - b) if me else np.zeros(0)
        rg = g @ x + s - h
        mu = float(z @ s) / mi
        obj = float(0.5 * x @ qx + c @ x)

        p_res = max(np.linalg.norm(rp, np.inf) / b_scale if me else 0.0,
                    np.linalg.norm(rg, np.inf) / h_scale)
        d_res = np.linalg.norm(rd, np.inf) / (c_scale + np.linalg.norm(qx, np.inf))
        gap = mu / (1.0 + abs(obj))
        err = max(p_res / 1e-7, d_res / 1e-6, gap / 1e-6)
        if err < best_err:
            best_err = err
            best = (x.copy(), z.copy())
        if p_res <= tol * 10 and d_res <= tol * 10 and mu <= tol * (1.0 + abs(obj)):
            return _IpmResult(SolveStatus.OPTIMAL, x=x, z=z, iterations=it)
        if np.linalg.norm(x, np.inf) > _HUGE:
            if p_res <= 1e-6:
                return _IpmResult(SolveStatus.UNBOUNDED, iterations=it)
            return _IpmResult(SolveStatus.NUMERICAL_FAILURE, iterations=it)

        w = np.minimum(z / np.maximum(s, 1e-14), 1e14)
        m = (q + g.T @ sp.diags(w) @ g + reg * sp.eye(n)).tocsc()
        if me:
            kkt = sp.bmat([[m, a.T], [a, -reg * sp.eye(me)]], format="csc")
        else:
            kkt = m
        m_scale = max(1.0, float(np.abs(kkt.data).max()) if kkt.nnz else 1.0)
        lu = None
        for shift in (0.0, 1e-12 * m_scale, 1e-9 * m_scale, 1e-6 * m_scale):
            try:
                lu = spla.splu((kkt + shift * sp.eye(kkt.shape[0])).tocsc() if shift else kkt)
                break
            except RuntimeError:
                continue
        if lu is None:
            return _accept_best(it)

        def newton(s_inv_rc):
            rx = -rd + g.T @ s_inv_rc - g.T @ (w * rg)
            rhs = np.concatenate([rx, -rp]) if me else rx
            sol = lu.solve(rhs)
            if not np.all(np.isfinite(sol)):
                return None
            dx = sol[:n]
            dy = sol[n:] if me else np.zeros(0)
            ds = -rg - g @ dx
            dz = -s_inv_rc + w * rg + w * (g @ dx)
            return dx, dy, ds, dz

        step_aff = newton(z.copy())
        if step_aff is None:
            return _accept_best(it)
        dx_a, dy_a, ds_a, dz_a = step_aff
        ap = _max_step(s, ds_a)
        ad = _max_step(z, dz_a)
        mu_aff = float((s + ap * ds_a) @ (z + ad * dz_a)) / mi
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        # anti-jamming: when the previous step collapsed, re-center hard
        if last_step < 0.1:
            sigma = max(sigma, 0.5)
        if last_step < 0.01:
            sigma = max(sigma, 0.9)

        corr = (np.clip(ds_a * dz_a, -10.0 * mu, 10.0 * mu) - sigma * mu) / np.maximum(s, 1e-30)
        step = newton(z + corr)
        if step is None:
            return _accept_best(it)
        dx, dy, ds, dz = step
        ap = min(1.0, 0.995 * _max_step(s, ds))
        ad = min(1.0, 0.995 * _max_step(z, dz))
        last_step = min(ap, ad)
        x += ap * dx
        s += ap * ds
        y += ad * dy
        z += ad * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    return _accept_best(max_iter)


def _has_unbounded_ray(q, c, a, g) -> bool:
    """Certify a recession direction: Qd = 0, Ad = 0, Gd <= 0, c'd < 0.

    The direction is searched in the unit box, so the certificate LP is
    always bounded and feasible (d = 0).
    """
    n = q.shape[0]
    rows = [g]
    rhs = [np.zeros(g.shape[0])]
    eq_rows = [a] if a.shape[0] else []
    eq_rhs = [np.zeros(a.shape[0])] if a.shape[0] else []
    if q.nnz:
        eq_rows.append(q.tocsr())
        eq_rhs.append(np.zeros(n))
    a1 = sp.vstack(eq_rows, format="csr") if eq_rows else sp.csr_matrix((0, n))
    b1 = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)
    lo_rows = sp.vstack([sp.eye(n), -sp.eye(n)], format="csr")
    g2 = sp.vstack(rows + [lo_rows], format="csr")
    h2 = np.concatenate(rhs + [np.ones(2 * n)])
    res = _ipm(sp.csr_matrix((n, n)), c, a1, b1, g2, h2, np.zeros(n),
               tol=1e-9, max_iter=100)
    if res.status is not SolveStatus.OPTIMAL:
        return False
    return float(c @ res.x) < -1e-7 * (1.0 + np.linalg.norm(c, np.inf))


def _phase1(a, b, g, h, x_eq, max_iter: int):
    """Minimal uniform inequality violation; None when that LP itself fails."""
    n = g.shape[1]
    mi = g.shape[0]
    g1 = sp.hstack([g, -np.ones((mi, 1))], format="csr")
    t_row = sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    g1 = sp.vstack([g1, t_row], format="csr")
    h1 = np.concatenate([h, [1.0]])
    a1 = sp.hstack([a, sp.csr_matrix((a.shape[0], 1))], format="csr") if a.shape[0] else sp.csr_matrix((0, n + 1))
    c1 = np.zeros(n + 1)
    c1[n] = 1.0
    t0 = max(1.0, float(np.max(g @ x_eq - h)) + 1.0) if mi else 1.0
    x0 = np.concatenate([x_eq, [t0]])
    q1 = sp.csr_matrix((n + 1, n + 1))
    res = _ipm(q1, c1, a1, b, g1, h1, x0, tol=1e-9, max_iter=max_iter)
    if res.status is not SolveStatus.OPTIMAL:
        return None
    return float(res.x[n])
