"""Centrally coordinated robust reserve procurement (approach I).

Procurement co-optimizes the dispatch, the reserve bounds and one
candidate re-dispatch per vertex of the polyhedral uncertainty set in
a single convex QP: if every vertex admits a covered re-dispatch, every
realization inside the set does too, by convexity.  The procured bound
is then the envelope of the per-vertex activations.

During operation the realized ratings are known and the cheapest
re-dispatch inside the procured bounds is a small LP; a schedule that
is already feasible needs (and gets) zero action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import qp
from .errors import InfeasibleError, InputError, UncoveredRealizationError
from .network import GridModel, PtdfMatrices, dlr_base_mw, gen_arrays, nlr_limits
from .uncertainty import PolytopeSet

# Deterministic preference for the lowest-index provider among equals.
_TIE_EPS = 1e-7


@dataclass(frozen=True)
class ProcurementResult:
    """Dispatch plus procured reserve bounds and the vertex actions behind them."""

    p_gen: np.ndarray            # MW per generator
    delta_up: np.ndarray         # procured upward bound, >= 0
    delta_dn: np.ndarray         # procured downward bound, <= 0
    cost_dispatch: float
    cost_procurement: float
    cost_worst_case: float       # max over vertices of the activation cost
    per_vertex_actions: tuple[tuple[np.ndarray, np.ndarray], ...]
    vertices_mw: np.ndarray      # the enforced DLR limits per vertex
    alpha: float
    objective: float

    @property
    def procured_mw(self) -> float:
        return float(self.delta_up.sum() - self.delta_dn.sum())


@dataclass(frozen=True)
class RedispatchAction:
    delta_plus: np.ndarray       # MW >= 0 per generator
    delta_minus: np.ndarray      # MW <= 0 per generator
    cost: float

    @property
    def net(self) -> np.ndarray:
        return self.delta_plus + self.delta_minus


def _flow_operators(grid: GridModel, ptdf: PtdfMatrices):
    """(H_dlr M, H_nlr M, load-induced flows) for injection p - load."""
    m = grid.gen_incidence()
    load = grid.load_vector()
    return (ptdf.h_dlr @ m, ptdf.h_nlr @ m,
            ptdf.h_dlr @ load, ptdf.h_nlr @ load)


def _check_alignment(grid: GridModel, ptdf: PtdfMatrices, line_ids):
    if line_ids is not None and tuple(line_ids) != ptdf.dlr_line_index:
        raise InputError(
            f"uncertainty set lines {tuple(line_ids)} do not match grid DLR "
            f"lines {ptdf.dlr_line_index}")


def dc_opf(grid: GridModel, ptdf: PtdfMatrices,
           dlr_limits_mw: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Plain DC optimal dispatch; DLR lines at the given limits (default nominal).

    Returns (generation MW, dispatch cost).
    """
    ga = gen_arrays(grid)
    n = grid.n_gens
    hd, hn, fd0, fn0 = _flow_operators(grid, ptdf)
    d_lim = np.asarray(dlr_limits_mw, dtype=float) if dlr_limits_mw is not None \
        else dlr_base_mw(grid, ptdf)
    n_lim = nlr_limits(grid, ptdf)

    g = np.vstack([hd, -hd, hn, -hn])
    h = np.concatenate([d_lim + fd0, d_lim - fd0, n_lim + fn0, n_lim - fn0])
    sol = qp.solve(qp.ConvexProgram(
        c=ga.cost_linear, q=2.0 * np.diag(ga.cost_quad),
        a_eq=np.ones((1, n)), b_eq=[grid.total_load],
        g_ineq=g, h_ineq=h, lb=ga.p_min, ub=ga.p_max,
    ))
    if sol.status is qp.SolveStatus.INFEASIBLE:
        raise InfeasibleError("dispatch infeasible at the given line limits")
    if not sol.optimal:
        raise InfeasibleError(f"dispatch solve failed with status {sol.status.value}")
    p = np.clip(sol.x, ga.p_min, ga.p_max)
    return p, float(ga.cost_quad @ p**2 + ga.cost_linear @ p)


def procure_vertex_robust(grid: GridModel, ptdf: PtdfMatrices, w: PolytopeSet,
                          alpha: float = 0.0,
                          schedule_caps_mw: np.ndarray | None = None) -> ProcurementResult:
    """Joint dispatch + reserve procurement covering every vertex of ``w``.

    ``w`` is in per-unit over the DLR lines (same order as
    ``ptdf.dlr_line_index``); vertices convert to MW at each line's
    nominal base.  ``schedule_caps_mw`` optionally caps the scheduled
    (pre-redispatch) DLR flows, the knob swept in the case study.
    """
    if alpha < 0:
        raise InputError("alpha must be >= 0")
    _check_alignment(grid, ptdf, w.line_ids)
    k = len(ptdf.dlr_line_index)
    if w.dim != k:
        raise InputError(f"uncertainty set dimension {w.dim} != DLR line count {k}")

    ga = gen_arrays(grid)
    n = grid.n_gens
    base = dlr_base_mw(grid, ptdf)
    verts_mw = np.atleast_2d(w.vertices) * base[None, :]
    n_v = verts_mw.shape[0]
    hd, hn, fd0, fn0 = _flow_operators(grid, ptdf)
    n_lim = nlr_limits(grid, ptdf)

    lay = qp.VariableLayout()
    s_p = lay.add("p", n)
    s_up = lay.add("d_up", n)
    s_dn = lay.add("d_dn", n)
    s_v = [(lay.add(f"v_up{i}", n), lay.add(f"v_dn{i}", n)) for i in range(n_v)]
    s_wc = lay.add("c_wc", 1) if alpha > 0 else None
    nx = lay.size

    tie = _TIE_EPS * np.arange(1, n + 1)
    c = np.zeros(nx)
    c[s_p] = ga.cost_linear
    c[s_up] = ga.price_up + tie
    c[s_dn] = ga.price_dn + tie
    # vanishing activation cost: slack vertices get the zero action, binding
    # ones the cheapest covering action, without disturbing the optimum
    for sv_up, sv_dn in s_v:
        c[sv_up] = 1e-6 * ga.act_up
        c[sv_dn] = 1e-6 * ga.act_dn
    if s_wc is not None:
        c[s_wc] = alpha
    q_diag = np.zeros(nx)
    q_diag[s_p] = 2.0 * ga.cost_quad
    q = sp.diags(q_diag)

    lb = np.full(nx, 0.0)
    ub = np.full(nx, np.inf)
    lb[s_p], ub[s_p] = ga.p_min, ga.p_max
    ub[s_up], ub[s_dn] = ga.res_up_max, ga.res_dn_max

    ones = np.ones((1, n))
    a_rows = [sp.csr_matrix((np.ones(n), (np.zeros(n, int), np.arange(s_p.start, s_p.stop))),
                            shape=(1, nx))]
    b_rows = [grid.total_load]
    for i in range(n_v):
        row = sp.lil_matrix((1, nx))
        row[0, s_v[i][0]] = 1.0
        row[0, s_v[i][1]] = -1.0
        a_rows.append(row.tocsr())
        b_rows.append(0.0)

    g_blocks, h_blocks = [], []

    def add_rows(cols_vals, rhs: np.ndarray):
        blk = sp.lil_matrix((rhs.size, nx))
        for sl, matv in cols_vals:
            blk[:, sl] = matv
        g_blocks.append(blk.tocsr())
        h_blocks.append(rhs)

    eye = sp.eye(n).toarray()
    for i, (sv_up, sv_dn) in enumerate(s_v):
        # activation within the procured envelope
        add_rows([(sv_up, eye), (s_up, -eye)], np.zeros(n))
        add_rows([(sv_dn, eye), (s_dn, -eye)], np.zeros(n))
        # line limits after the vertex's re-dispatch
        lim = verts_mw[i]
        add_rows([(s_p, hd), (sv_up, hd), (sv_dn, -hd)], lim + fd0)
        add_rows([(s_p, -hd), (sv_up, -hd), (sv_dn, hd)], lim - fd0)
        add_rows([(s_p, hn), (sv_up, hn), (sv_dn, -hn)], n_lim + fn0)
        add_rows([(s_p, -hn), (sv_up, -hn), (sv_dn, hn)], n_lim - fn0)
        if s_wc is not None:
            row = sp.lil_matrix((1, nx))
            row[0, sv_up] = ga.act_up
            row[0, sv_dn] = ga.act_dn
            row[0, s_wc] = -1.0
            g_blocks.append(row.tocsr())
            h_blocks.append(np.zeros(1))
    if schedule_caps_mw is not None:
        caps = np.asarray(schedule_caps_mw, dtype=float)
        if caps.size != k:
            raise InputError(f"schedule_caps_mw must have length {k}")
        add_rows([(s_p, hd)], caps + fd0)
        add_rows([(s_p, -hd)], caps - fd0)

    sol = qp.solve(qp.ConvexProgram(
        c=c, q=q,
        a_eq=sp.vstack(a_rows, format="csr"), b_eq=np.array(b_rows),
        g_ineq=sp.vstack(g_blocks, format="csr"), h_ineq=np.concatenate(h_blocks),
        lb=lb, ub=ub,
    ))
    if sol.status is qp.SolveStatus.INFEASIBLE:
        bad = _diagnose_vertices(grid, ptdf, verts_mw, schedule_caps_mw)
        raise InfeasibleError(
            "procurement infeasible: no covered re-dispatch exists"
            + (f"; violating vertices (p.u.): {bad}" if bad else ""),
            vertices=bad)
    if not sol.optimal:
        raise InfeasibleError(f"procurement solve failed with status {sol.status.value}")

    x = sol.x
    p = np.clip(x[s_p], ga.p_min, ga.p_max)
    raw_actions = []
    for sv_up, sv_dn in s_v:
        up = np.maximum(x[sv_up], 0.0)
        dn = np.maximum(x[sv_dn], 0.0)
        raw_actions.append((up, -dn))
    d_up = np.maximum(np.maximum(x[s_up], 0.0),
                      np.max([a[0] for a in raw_actions], axis=0))
    d_dn = np.maximum(np.maximum(x[s_dn], 0.0),
                      np.max([-a[1] for a in raw_actions], axis=0))
    d_up = np.minimum(d_up, ga.res_up_max)
    d_dn = np.minimum(d_dn, ga.res_dn_max)

    cost_disp = float(ga.cost_quad @ p**2 + ga.cost_linear @ p)
    cost_proc = float(ga.price_up @ d_up + ga.price_dn @ d_dn)
    prelim = ProcurementResult(
        p_gen=p, delta_up=d_up, delta_dn=-d_dn,
        cost_dispatch=cost_disp, cost_procurement=cost_proc, cost_worst_case=0.0,
        per_vertex_actions=tuple(raw_actions), vertices_mw=verts_mw,
        alpha=alpha, objective=float(sol.objective),
    )
    # Replace the QP's vertex actions (accurate only to the barrier
    # tolerance) with the exact minimal-cost action at each vertex, the
    # action the operator would in fact take.
    actions = []
    for i, vert in enumerate(np.atleast_2d(w.vertices)):
        try:
            act = operate_online(grid, ptdf, prelim, vert)
            actions.append((act.delta_plus, act.delta_minus))
        except (InfeasibleError, InputError):
            actions.append(raw_actions[i])
    cost_wc = max(float(ga.act_up @ up + ga.act_dn @ (-dn)) for up, dn in actions)
    return ProcurementResult(
        p_gen=p, delta_up=d_up, delta_dn=-d_dn,
        cost_dispatch=cost_disp, cost_procurement=cost_proc, cost_worst_case=cost_wc,
        per_vertex_actions=tuple(actions), vertices_mw=verts_mw,
        alpha=alpha, objective=float(sol.objective),
    )


def _diagnose_vertices(grid, ptdf, verts_mw, schedule_caps_mw):
    """Vertices that no re-dispatch can cover even with every cap exhausted."""
    base = dlr_base_mw(grid, ptdf)
    bad = []
    for lim in verts_mw:
        try:
            _single_vertex_feasible(grid, ptdf, lim, schedule_caps_mw)
        except InfeasibleError:
            bad.append(tuple(np.round(lim / base, 6)))
    return bad


def _single_vertex_feasible(grid, ptdf, lim, schedule_caps_mw):
    ga = gen_arrays(grid)
    n = grid.n_gens
    hd, hn, fd0, fn0 = _flow_operators(grid, ptdf)
    n_lim = nlr_limits(grid, ptdf)
    lay = qp.VariableLayout()
    s_p = lay.add("p", n)
    s_up = lay.add("up", n)
    s_dn = lay.add("dn", n)
    nx = lay.size
    lb = np.zeros(nx)
    ub = np.full(nx, np.inf)
    lb[s_p], ub[s_p] = ga.p_min, ga.p_max
    ub[s_up], ub[s_dn] = ga.res_up_max, ga.res_dn_max
    a = sp.lil_matrix((2, nx))
    a[0, s_p] = 1.0
    a[1, s_up] = 1.0
    a[1, s_dn] = -1.0
    g_rows, h_rows = [], []

    def add(cols_vals, rhs):
        blk = sp.lil_matrix((rhs.size, nx))
        for sl, mv in cols_vals:
            blk[:, sl] = mv
        g_rows.append(blk.tocsr())
        h_rows.append(rhs)

    add([(s_p, hd), (s_up, hd), (s_dn, -hd)], lim + fd0)
    add([(s_p, -hd), (s_up, -hd), (s_dn, hd)], lim - fd0)
    add([(s_p, hn), (s_up, hn), (s_dn, -hn)], n_lim + fn0)
    add([(s_p, -hn), (s_up, -hn), (s_dn, hn)], n_lim - fn0)
    if schedule_caps_mw is not None:
        caps = np.asarray(schedule_caps_mw, dtype=float)
        add([(s_p, hd)], caps + fd0)
        add([(s_p, -hd)], caps - fd0)
    sol = qp.solve(qp.ConvexProgram(
        c=np.zeros(nx), a_eq=a.tocsr(), b_eq=np.array([grid.total_load, 0.0]),
        g_ineq=sp.vstack(g_rows, format="csr"), h_ineq=np.concatenate(h_rows),
        lb=lb, ub=ub,
    ))
    if sol.status is qp.SolveStatus.INFEASIBLE:
        raise InfeasibleError("vertex cannot be covered")


def operate_online(grid: GridModel, ptdf: PtdfMatrices, proc: ProcurementResult,
                   delta_realized_pu: np.ndarray) -> RedispatchAction:
    """Cheapest re-dispatch inside procured bounds for the realized ratings.

    Raises UncoveredRealizationError (naming the overloaded lines) when
    the realization lies outside what the procurement can cover.
    """
    delta = np.atleast_1d(np.asarray(delta_realized_pu, dtype=float))
    k = len(ptdf.dlr_line_index)
    if delta.size != k:
        raise InputError(f"realization must have length {k}")
    if np.any(delta <= 0):
        raise InputError("realized ratings must be positive")

    ga = gen_arrays(grid)
    n = grid.n_gens
    base = dlr_base_mw(grid, ptdf)
    lim_d = delta * base
    lim_n = nlr_limits(grid, ptdf)
    hd, hn, fd0, fn0 = _flow_operators(grid, ptdf)
    f_d0 = hd @ proc.p_gen - fd0
    f_n0 = hn @ proc.p_gen - fn0

    if np.all(np.abs(f_d0) <= lim_d + 1e-9) and np.all(np.abs(f_n0) <= lim_n + 1e-9):
        zero = np.zeros(n)
        return RedispatchAction(delta_plus=zero, delta_minus=zero.copy(), cost=0.0)

    # Only generators with procured headroom can act; the LP stays small.
    act = np.flatnonzero((proc.delta_up > 1e-9) | (-proc.delta_dn > 1e-9))
    na = act.size
    if na == 0:
        lines = _overloaded_lines(ptdf, f_d0, lim_d, f_n0, lim_n)
        raise UncoveredRealizationError(
            f"no reserves procured but lines {lines} are overloaded", lines=lines)

    hd_a, hn_a = hd[:, act], hn[:, act]
    bound = np.maximum(proc.delta_up[act], -proc.delta_dn[act])
    # NLR rows whose zero-action slack exceeds any reachable flow change
    # can never bind; dropping them keeps the LP tiny.
    reach_n = np.abs(hn_a) @ bound
    keep_n = np.flatnonzero(np.abs(f_n0) + reach_n >= lim_n - 1e-9)
    hn_k, lim_nk, f_n0k = hn_a[keep_n], lim_n[keep_n], f_n0[keep_n]

    lay = qp.VariableLayout()
    s_up = lay.add("up", na)
    s_dn = lay.add("dn", na)
    nx = lay.size
    c = np.zeros(nx)
    c[s_up] = ga.act_up[act]
    c[s_dn] = ga.act_dn[act]
    lb = np.zeros(nx)
    ub = np.concatenate([proc.delta_up[act], -proc.delta_dn[act]])
    a = sp.csr_matrix(np.concatenate([np.ones(na), -np.ones(na)])[None, :])
    shift = np.vstack([hd_a, -hd_a, hn_k, -hn_k])
    g = sp.csr_matrix(np.hstack([shift, -shift]))
    h = np.concatenate([lim_d - f_d0, lim_d + f_d0, lim_nk - f_n0k, lim_nk + f_n0k])

    sol = qp.solve(qp.ConvexProgram(c=c, a_eq=a, b_eq=[0.0],
                                    g_ineq=g, h_ineq=h, lb=lb, ub=ub))
    if sol.status is qp.SolveStatus.INFEASIBLE:
        lines = _irreparable_lines(grid, ptdf, proc, act, lim_d, lim_n, f_d0, f_n0)
        raise UncoveredRealizationError(
            f"realization outside the covered set; overloaded lines: {lines}",
            lines=lines)
    if not sol.optimal:
        raise InfeasibleError(f"online re-dispatch failed with status {sol.status.value}")

    up = np.zeros(n)
    dn = np.zeros(n)
    up[act] = np.maximum(sol.x[s_up], 0.0)
    dn[act] = np.maximum(sol.x[s_dn], 0.0)
    cost = float(ga.act_up @ up + ga.act_dn @ dn)
    return RedispatchAction(delta_plus=up, delta_minus=-dn, cost=cost)


def procurement_to_doc(proc: ProcurementResult, grid: GridModel,
                       ptdf: PtdfMatrices) -> dict:
    """Documented report: costs, reserves per generator, per-vertex actions."""
    base = dlr_base_mw(grid, ptdf)
    return {
        "approach": "I",
        "grid_name": grid.name,
        "dlr_lines": list(ptdf.dlr_line_index),
        "alpha": proc.alpha,
        "generators": [g.name for g in grid.generators],
        "p_gen_mw": proc.p_gen.tolist(),
        "delta_up_mw": proc.delta_up.tolist(),
        "delta_dn_mw": proc.delta_dn.tolist(),
        "cost_dispatch": proc.cost_dispatch,
        "cost_procurement": proc.cost_procurement,
        "cost_worst_case": proc.cost_worst_case,
        "objective": proc.objective,
        "vertices_pu": (proc.vertices_mw / base[None, :]).tolist(),
        "per_vertex_actions": [
            {"plus_mw": up.tolist(), "minus_mw": dn.tolist()}
            for up, dn in proc.per_vertex_actions
        ],
    }


def procurement_from_doc(doc: dict, grid: GridModel,
                         ptdf: PtdfMatrices) -> ProcurementResult:
    """Rebuild a ProcurementResult from its report document."""
    if doc.get("approach") != "I":
        raise InputError("not an approach-I procurement report")
    names = [g.name for g in grid.generators]
    if doc.get("generators") != names:
        raise InputError("procurement report generators do not match the grid")
    if tuple(doc.get("dlr_lines", ())) != ptdf.dlr_line_index:
        raise InputError("procurement report DLR lines do not match the grid")
    base = dlr_base_mw(grid, ptdf)
    verts_pu = np.asarray(doc["vertices_pu"], dtype=float)
    actions = tuple(
        (np.asarray(a["plus_mw"], dtype=float), np.asarray(a["minus_mw"], dtype=float))
        for a in doc["per_vertex_actions"]
    )
    return ProcurementResult(
        p_gen=np.asarray(doc["p_gen_mw"], dtype=float),
        delta_up=np.asarray(doc["delta_up_mw"], dtype=float),
        delta_dn=np.asarray(doc["delta_dn_mw"], dtype=float),
        cost_dispatch=float(doc["cost_dispatch"]),
        cost_procurement=float(doc["cost_procurement"]),
        cost_worst_case=float(doc["cost_worst_case"]),
        per_vertex_actions=actions,
        vertices_mw=verts_pu * base[None, :],
        alpha=float(doc.get("alpha", 0.0)),
        objective=float(doc.get("objective", 0.0)),
    )


def _overloaded_lines(ptdf, f_d0, lim_d, f_n0, lim_n):
    lines = [ptdf.dlr_line_index[i] for i in np.flatnonzero(np.abs(f_d0) > lim_d + 1e-9)]
    lines += [ptdf.nlr_line_index[i] for i in np.flatnonzero(np.abs(f_n0) > lim_n + 1e-9)]
    return lines


def _irreparable_lines(grid, ptdf, proc, act, lim_d, lim_n, f_d0, f_n0):
    """Lines still overloaded at the violation-minimizing re-dispatch."""
    ga = gen_arrays(grid)
    na = act.size
    k = lim_d.size
    mn = lim_n.size
    hd_a = ptdf.h_dlr @ grid.gen_incidence()[:, act]
    hn_a = ptdf.h_nlr @ grid.gen_incidence()[:, act]
    lay = qp.VariableLayout()
    s_up = lay.add("up", na)
    s_dn = lay.add("dn", na)
    s_sl = lay.add("slack", k + mn)
    nx = lay.size
    c = np.zeros(nx)
    c[s_sl] = 1.0
    lb = np.zeros(nx)
    ub = np.concatenate([proc.delta_up[act], -proc.delta_dn[act], np.full(k + mn, np.inf)])
    a = sp.lil_matrix((1, nx))
    a[0, s_up] = 1.0
    a[0, s_dn] = -1.0
    g = sp.lil_matrix((2 * (k + mn), nx))
    sl_eye = np.eye(k + mn)
    g[: k + mn, s_up] = np.vstack([hd_a, hn_a])
    g[: k + mn, s_dn] = -np.vstack([hd_a, hn_a])
    g[: k + mn, s_sl] = -sl_eye
    g[k + mn:, s_up] = -np.vstack([hd_a, hn_a])
    g[k + mn:, s_dn] = np.vstack([hd_a, hn_a])
    g[k + mn:, s_sl] = -sl_eye
    h = np.concatenate([
        np.concatenate([lim_d - f_d0, lim_n - f_n0]),
        np.concatenate([lim_d + f_d0, lim_n + f_n0]),
    ])
    sol = qp.solve(qp.ConvexProgram(c=c, a_eq=a.tocsr(), b_eq=[0.0],
                                    g_ineq=g.tocsr(), h_ineq=h, lb=lb, ub=ub))
    if not sol.optimal:
        return _overloaded_lines(ptdf, f_d0, lim_d, f_n0, lim_n)
    slack = sol.x[s_sl]
    ids = list(ptdf.dlr_line_index) + list(ptdf.nlr_line_index)
    return [ids[i] for i in np.flatnonzero(slack > 1e-6)]
