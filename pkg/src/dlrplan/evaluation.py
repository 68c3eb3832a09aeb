"""Monte Carlo evaluation and case-study sweeps.

Costs are compared against the status quo, the dispatch with every line
at its nominal (static) rating.  For each sampled rating realization,
approach I runs the online re-dispatch LP and approach II evaluates its
affine policy; per-sample feasibility is recorded, and realizations the
plan cannot cover are priced with a separate penalty, never folded
silently into the mean operating cost.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import affine_policy as ap
from . import robust_dispatch as rd
from .errors import InfeasibleError, InputError, UncoveredRealizationError
from .network import GridModel, PtdfMatrices, dlr_base_mw, gen_arrays, nlr_limits
from .uncertainty import (
    EllipsoidSet,
    PolytopeSet,
    RatingForecast,
    build_ellipsoid,
    build_polytope,
    uniform_polytope_samples,
)

# Default guarantee candidates for approach II, as fractions of the
# forecast mean, when the scenario does not pin the flow caps.
DEFAULT_Y_FRACTIONS = (0.85, 0.95, 1.0, 1.05)


@dataclass(frozen=True)
class ScenarioConfig:
    """One evaluation scenario: grid, forecast, and method parameters."""

    grid: GridModel
    ptdf: PtdfMatrices
    forecast: RatingForecast
    gamma: float = 0.95
    alpha: float = 0.0
    approach: str = "both"               # "I", "II" or "both"
    flow_caps_mw: tuple[float, ...] | None = None
    sample_count: int = 1000
    seed: int = 0
    facets: int = 8
    y_grid_mw: tuple[tuple[float, ...], ...] | None = None
    infeasibility_penalty: float = 10_000.0   # $ per uncovered sample

    def __post_init__(self):
        if self.sample_count < 1:
            raise InputError("sample_count must be >= 1")
        if self.approach not in ("I", "II", "both"):
            raise InputError(f"approach must be I, II or both, got {self.approach!r}")
        if self.flow_caps_mw is not None:
            caps = tuple(float(c) for c in self.flow_caps_mw)
            if any(c <= 0 for c in caps):
                raise InputError("flow caps must be positive")
            object.__setattr__(self, "flow_caps_mw", caps)

    def ellipsoid(self) -> EllipsoidSet:
        return build_ellipsoid(self.forecast, self.gamma)

    def polytope(self) -> PolytopeSet:
        return build_polytope(self.ellipsoid(), facets_per_2d_cycle=self.facets)


@dataclass(frozen=True)
class ApproachReport:
    label: str
    dispatch_cost: float
    procured_mw: float
    procurement_cost: float
    mean_operational_cost: float
    total_cost: float
    savings_pct: float
    feasible: np.ndarray
    mean_penalty_cost: float

    @property
    def feasibility_rate(self) -> float:
        return float(np.mean(self.feasible))


@dataclass(frozen=True)
class EvaluationReport:
    status_quo_cost: float
    rows: tuple[ApproachReport, ...]
    sample_count: int
    seed: int

    def row(self, label: str) -> ApproachReport:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def status_quo_cost(grid: GridModel, ptdf: PtdfMatrices) -> float:
    """Dispatch cost with every line at its nominal rating."""
    _, cost = rd.dc_opf(grid, ptdf)
    return cost


def draw_realizations(forecast: RatingForecast, count: int, seed: int) -> np.ndarray:
    """Seeded N(mu, Sigma) rating draws, floored at a tiny positive value."""
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(forecast.mu, forecast.sigma, size=count,
                                    method="svd")
    return np.maximum(draws, 1e-6)


def _eval_approach_one(cfg: ScenarioConfig, proc: rd.ProcurementResult,
                       draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    costs = np.zeros(draws.shape[0])
    feasible = np.ones(draws.shape[0], dtype=bool)
    for i, delta in enumerate(draws):
        try:
            act = rd.operate_online(cfg.grid, cfg.ptdf, proc, delta)
            costs[i] = act.cost
        except (UncoveredRealizationError, InfeasibleError, InputError):
            feasible[i] = False
    return costs, feasible


def _eval_approach_two(cfg: ScenarioConfig, pp: ap.PolicyProcurement,
                       draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid, ptdf = cfg.grid, cfg.ptdf
    ga = gen_arrays(grid)
    pol = pp.policy
    base = pol.dlr_base_mw
    deficits = np.maximum(0.0, pol.y_mw[None, :] - draws * base[None, :])
    cost_coef = pol.d_up.T @ ga.act_up + pol.d_dn.T @ ga.act_dn
    costs = deficits @ cost_coef

    m_inc = grid.gen_incidence()
    load = grid.load_vector()
    hd_m = ptdf.h_dlr @ m_inc
    hn_m = ptdf.h_nlr @ m_inc
    f_d0 = hd_m @ pp.p_gen - ptdf.h_dlr @ load
    f_n0 = hn_m @ pp.p_gen - ptdf.h_nlr @ load
    actions = deficits @ pol.d.T                      # samples x gens
    flows_d = f_d0[None, :] + deficits @ (hd_m @ pol.d).T
    flows_n = f_n0[None, :] + deficits @ (hn_m @ pol.d).T
    lim_n = nlr_limits(grid, ptdf)
    tol = 1e-6
    ok_d = np.all(np.abs(flows_d) <= draws * base[None, :] + tol, axis=1)
    ok_n = np.all(np.abs(flows_n) <= lim_n[None, :] + tol, axis=1)
    ok_env = np.all(actions <= pol.delta_up[None, :] + tol, axis=1) & \
        np.all(actions >= pol.delta_dn[None, :] - tol, axis=1)
    return costs, ok_d & ok_n & ok_env


def monte_carlo_eval(cfg: ScenarioConfig, proc) -> EvaluationReport:
    """Evaluate one procurement over seeded N(mu, Sigma) realizations.

    ``proc`` is a ProcurementResult (approach I) or PolicyProcurement
    (approach II).  The mean operating cost of approach I runs over the
    covered samples; uncovered ones appear in the feasibility flags and
    the separate penalty mean.
    """
    draws = draw_realizations(cfg.forecast, cfg.sample_count, cfg.seed)
    sq = status_quo_cost(cfg.grid, cfg.ptdf)
    if isinstance(proc, rd.ProcurementResult):
        label = "I"
        costs, feasible = _eval_approach_one(cfg, proc, draws)
        mean_op = float(costs[feasible].mean()) if feasible.any() else 0.0
        disp, proc_cost = proc.cost_dispatch, proc.cost_procurement
        procured = proc.procured_mw
    elif isinstance(proc, ap.PolicyProcurement):
        label = "II"
        costs, feasible = _eval_approach_two(cfg, proc, draws)
        mean_op = float(costs.mean())
        disp, proc_cost = proc.cost_dispatch, proc.cost_procurement
        procured = proc.procured_mw
    else:
        raise InputError(f"unsupported procurement type {type(proc).__name__}")
    total = disp + proc_cost + mean_op
    row = ApproachReport(
        label=label, dispatch_cost=disp, procured_mw=procured,
        procurement_cost=proc_cost, mean_operational_cost=mean_op,
        total_cost=total, savings_pct=100.0 * (sq - total) / sq,
        feasible=feasible,
        mean_penalty_cost=cfg.infeasibility_penalty * float(1.0 - feasible.mean()),
    )
    return EvaluationReport(status_quo_cost=sq, rows=(row,),
                            sample_count=cfg.sample_count, seed=cfg.seed)


def procure_for_config(cfg: ScenarioConfig):
    """Run the procurement(s) the scenario asks for.

    Returns {label: procurement}.  Approach I uses the flow caps as
    schedule limits; approach II uses them as the guarantee y, or grid
    searches its default candidates.
    """
    out = {}
    caps = np.asarray(cfg.flow_caps_mw, dtype=float) if cfg.flow_caps_mw else None
    if cfg.approach in ("I", "both"):
        w = cfg.polytope()
        out["I"] = rd.procure_vertex_robust(cfg.grid, cfg.ptdf, w, alpha=cfg.alpha,
                                            schedule_caps_mw=caps)
    if cfg.approach in ("II", "both"):
        e = cfg.ellipsoid()
        if caps is not None:
            out["II"] = ap.procure_affine(cfg.grid, cfg.ptdf, e, caps,
                                          facets=cfg.facets)
        else:
            base = dlr_base_mw(cfg.grid, cfg.ptdf)
            if cfg.y_grid_mw is not None:
                grid_y = [np.asarray(y, dtype=float) for y in cfg.y_grid_mw]
            else:
                grid_y = [frac * cfg.forecast.mu * base for frac in DEFAULT_Y_FRACTIONS]
            _, out["II"] = ap.select_y(cfg.grid, cfg.ptdf, e, grid_y,
                                       facets=cfg.facets)
    return out


def evaluate_scenario(cfg: ScenarioConfig) -> EvaluationReport:
    """Procure per the scenario and Monte Carlo-evaluate each approach."""
    procs = procure_for_config(cfg)
    rows = []
    sq = status_quo_cost(cfg.grid, cfg.ptdf)
    for label in ("I", "II"):
        if label in procs:
            rep = monte_carlo_eval(cfg, procs[label])
            rows.append(rep.rows[0])
    return EvaluationReport(status_quo_cost=sq, rows=tuple(rows),
                            sample_count=cfg.sample_count, seed=cfg.seed)


def audit_robust_feasibility(cfg: ScenarioConfig, proc, count: int = 10_000,
                             seed: int | None = None) -> float:
    """Feasibility rate over samples drawn inside the uncertainty set.

    Approach I audits against the polytope it procured for; approach II
    against the gamma-ellipsoid.
    """
    seed = cfg.seed if seed is None else seed
    if isinstance(proc, rd.ProcurementResult):
        draws = uniform_polytope_samples(cfg.polytope(), count, seed)
        _, feasible = _eval_approach_one(cfg, proc, draws)
        return float(feasible.mean())
    if isinstance(proc, ap.PolicyProcurement):
        e = cfg.ellipsoid()
        rng = np.random.default_rng(seed)
        k = e.dim
        direction = rng.standard_normal((count, k))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = np.sqrt(e.rho) * rng.uniform(0.0, 1.0, size=count) ** (1.0 / k)
        draws = e.mu[None, :] + (direction * radius[:, None]) @ e.b.T
        draws = np.maximum(draws, 1e-6)
        _, feasible = _eval_approach_two(cfg, proc, draws)
        return float(feasible.mean())
    raise InputError(f"unsupported procurement type {type(proc).__name__}")


def sweep_flow_limits(cfg: ScenarioConfig, limits_grid) -> list[dict]:
    """Procured reserves and savings for each DLR flow-limit cap.

    One output row per (cap vector, approach); infeasible caps are
    reported with a status instead of failing the sweep.
    """
    rows: list[dict] = []
    for caps in limits_grid:
        caps_t = tuple(float(c) for c in np.atleast_1d(caps))
        sub = replace(cfg, flow_caps_mw=caps_t)
        try:
            report = evaluate_scenario(sub)
        except (InfeasibleError, InputError) as exc:
            for label in ("I", "II") if cfg.approach == "both" else (cfg.approach,):
                rows.append(_sweep_row(caps_t, label, None, status=f"infeasible: {exc}"))
            continue
        for r in report.rows:
            rows.append(_sweep_row(caps_t, r.label, r))
    return rows


def _sweep_row(caps, label, r: ApproachReport | None, status: str = "ok") -> dict:
    row = {f"cap_mw_{i + 1}": c for i, c in enumerate(caps)}
    row.update({
        "approach": label,
        "status": status,
        "procured_mw": r.procured_mw if r else float("nan"),
        "dispatch_cost": r.dispatch_cost if r else float("nan"),
        "procurement_cost": r.procurement_cost if r else float("nan"),
        "mean_operational_cost": r.mean_operational_cost if r else float("nan"),
        "total_cost": r.total_cost if r else float("nan"),
        "savings_pct": r.savings_pct if r else float("nan"),
        "feasibility_rate": r.feasibility_rate if r else float("nan"),
    })
    return row


def sweep_mu_sigma(cfg: ScenarioConfig, mu_grid, sigma_grid) -> list[dict]:
    """Cost reduction and operating cost across forecast (mu, sigma) points.

    Every DLR line gets the same mu and standard deviation, matching the
    case study's uncorrelated sweep.
    """
    mu_grid = [float(m) for m in mu_grid]
    sigma_grid = [float(s) for s in sigma_grid]
    if not mu_grid or not sigma_grid:
        raise InputError("mu_grid and sigma_grid must be nonempty")
    k = cfg.forecast.dim
    rows: list[dict] = []
    for mu in mu_grid:
        for sd in sigma_grid:
            forecast = RatingForecast(
                mu=np.full(k, mu), sigma=np.diag(np.full(k, sd**2)),
                lead_time_hours=cfg.forecast.lead_time_hours,
                line_ids=cfg.forecast.line_ids,
            )
            sub = replace(cfg, forecast=forecast)
            try:
                report = evaluate_scenario(sub)
            except (InfeasibleError, InputError) as exc:
                for label in ("I", "II") if cfg.approach == "both" else (cfg.approach,):
                    rows.append({"mu_pu": mu, "sigma_pu": sd, "approach": label,
                                 "status": f"infeasible: {exc}",
                                 "mean_operational_cost": float("nan"),
                                 "total_cost": float("nan"),
                                 "savings_pct": float("nan")})
                continue
            for r in report.rows:
                rows.append({
                    "mu_pu": mu, "sigma_pu": sd, "approach": r.label, "status": "ok",
                    "procured_mw": r.procured_mw,
                    "mean_operational_cost": r.mean_operational_cost,
                    "total_cost": r.total_cost,
                    "savings_pct": r.savings_pct,
                })
    return rows
