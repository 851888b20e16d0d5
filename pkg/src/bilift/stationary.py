"""The augmented functional, its stationarity system, and the path checks.

The augmented functional adds to the base functional a correction built from
the all-norms overlap under the per-level measures:

    correction = -sign(s) s beta^2 / (2 sqrt(n))
                 * sum_{k=1..r+1} [ p_{k-1} q_{k-1} <Q>_{gamma_k}
                                    - p_k q_k <Q>_{gamma_{k+1}} ] m_k omega(k; p)

(the k = r+1 bracket's second term vanishes because p_{r+1} = q_{r+1} = 0).
Constant-magnitude ensembles are assumed throughout; for unit-norm ensembles
<Q> is identically 1 and the correction collapses to plain schedule
arithmetic.

Stationarity in p/q is solved by a damped fixed point: each q_k is driven to
the normalized y-overlap under the split-(k) measure (blended across the two
first-level measures for k = 1), and symmetrically for p.  The first interior
exponent is pinned at 1 - eps (the exact limit degenerates the bottom
reweighting); deeper exponents are driven by a secant step on the finite
difference of the augmented functional.  Interior-exponent stationarity has
no closed form, so those residuals always come from finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import finite_difference
from .errors import ConstantMagnitudeRequired, NoConvergence, UnitNormRequired
from .measures import overlap_outer_values, request_key
from .model import LiftingSchedule, ProblemConfig, omega, sgn
from .nested import EstimateWithError, SamplePlan, psi_outer_values, summarize


def _gamma_k_measure(k: int):
    """Measure carrying level-k coupling in the correction sum: gamma_k."""
    if k == 1:
        return "g1"
    if k == 2:
        return "g21"
    return ("gk", k - 1)


def psi1_outer_values(cfg: ProblemConfig, t, plan: SamplePlan, seed: int) -> np.ndarray:
    """Per-outer-sample values of the augmented functional."""
    if not cfg.ensemble.is_constant_magnitude(tol=1e-9):
        raise ConstantMagnitudeRequired(
            "the augmented functional assumes constant magnitudes"
        )
    sc, sch = cfg.scalars, cfg.schedule
    if sc.beta == 0.0:
        return psi_outer_values(cfg, t, plan, seed)
    r = sch.r
    requests = [(_gamma_k_measure(k), "xx_yy") for k in range(1, r + 2)]
    vals = overlap_outer_values(cfg, t, plan, seed, requests, include_psi=True)
    pv, qv, mv = sch.pvec, sch.qvec, sch.mvec
    c0 = -sgn(sc.s) * sc.s * sc.beta**2 / (2.0 * math.sqrt(cfg.ensemble.n))
    corr = np.zeros_like(vals["psi"])
    for k in range(1, r + 2):
        qk = vals[request_key(_gamma_k_measure(k), "xx_yy")]
        bracket = pv[k - 1] * qv[k - 1] * qk
        if k <= r and pv[k] * qv[k] != 0.0:
            qk1 = vals[request_key(_gamma_k_measure(k + 1), "xx_yy")]
            bracket = bracket - pv[k] * qv[k] * qk1
        corr = corr + c0 * mv[k] * omega(k, sc.p_exp) * bracket
    return vals["psi"] + corr


def psi1(cfg: ProblemConfig, t, plan: SamplePlan, seed: int = 0) -> EstimateWithError:
    return summarize(psi1_outer_values(cfg, t, plan, seed), plan, seed)


def unit_norm_correction(schedule: LiftingSchedule, scalars, n: int) -> float:
    """The correction term when <Q> == 1: plain schedule arithmetic."""
    pv, qv, mv = schedule.pvec, schedule.qvec, schedule.mvec
    c0 = -sgn(scalars.s) * scalars.s * scalars.beta**2 / (2.0 * math.sqrt(n))
    total = 0.0
    for k in range(1, schedule.r + 2):
        total += (pv[k - 1] * qv[k - 1] - pv[k] * qv[k]) * mv[k] * omega(k, scalars.p_exp)
    return c0 * total


@dataclass(frozen=True)
class Residual:
    name: str
    estimate: EstimateWithError
    pinned: bool = False


@dataclass(frozen=True)
class ResidualReport:
    residuals: tuple

    def by_name(self, name):
        for res in self.residuals:
            if res.name == name:
                return res
        raise KeyError(name)

    def norm(self, include_pinned=False) -> float:
        vals = [
            abs(r.estimate.value)
            for r in self.residuals
            if include_pinned or not r.pinned
        ]
        return max(vals) if vals else 0.0


def _pq_overlap_requests(r: int):
    reqs = [("g21", f) for f in ("xx_yty", "xtx_yy", "xx_yy")]
    reqs += [("g22", f) for f in ("xx_yty", "xtx_yy", "xx_yy")]
    for k1 in range(2, r + 1):
        reqs += [(("gk", k1), f) for f in ("xx_yty", "xtx_yy", "xx_yy")]
    return reqs


def stationarity_residuals(
    cfg: ProblemConfig,
    t: float,
    plan: SamplePlan,
    seed: int,
    h: float = 1e-3,
    pinned: tuple = (),
) -> ResidualReport:
    """Gradient of the augmented functional at the current schedule.

    The p/q rows use their measure-expectation closed forms; the m rows are
    central finite differences of the augmented functional (no closed form
    exists; the stationarity system just sets them to zero).  Order:
    p1..pr, q1..qr, m1..mr.
    """
    if not cfg.ensemble.is_constant_magnitude(tol=1e-9):
        raise ConstantMagnitudeRequired("stationarity assumes constant magnitudes")
    sc, sch = cfg.scalars, cfg.schedule
    r = sch.r
    pv, qv, mv = sch.pvec, sch.qvec, sch.mvec
    out = []
    if sc.beta == 0.0:
        zero = EstimateWithError(0.0, 0.0, plan, seed, 0)
        for prefix in ("p", "q", "m"):
            for k1 in range(1, r + 1):
                out.append(Residual(f"{prefix}{k1}", zero, f"{prefix}{k1}" in pinned))
        return ResidualReport(tuple(out))
    vals = overlap_outer_values(cfg, t, plan, seed, _pq_overlap_requests(r))
    c0 = sgn(sc.s) * sc.s * sc.beta**2 / (2.0 * math.sqrt(cfg.ensemble.n))
    p = sc.p_exp

    def row(kind, k1):
        over = "xx_yty" if kind == "p" else "xtx_yy"
        coef = qv[k1] if kind == "p" else pv[k1]
        if k1 == 1:
            a = coef * vals[request_key("g21", "xx_yy")] - vals[request_key("g21", over)]
            b = coef * vals[request_key("g22", "xx_yy")] - vals[request_key("g22", over)]
            arr = (mv[1] - mv[2]) * p * a - mv[1] * (p - 1.0) * b
        else:
            ms = ("gk", k1)
            a = coef * vals[request_key(ms, "xx_yy")] - vals[request_key(ms, over)]
            arr = (mv[k1] - mv[k1 + 1]) * p * a
        return summarize((1.0 - t) * c0 * arr, plan, seed)

    for k1 in range(1, r + 1):
        out.append(Residual(f"p{k1}", row("p", k1), f"p{k1}" in pinned))
    for k1 in range(1, r + 1):
        out.append(Residual(f"q{k1}", row("q", k1), f"q{k1}" in pinned))
    for k1 in range(1, r + 1):
        est = finite_difference(
            ("m", k1),
            cfg,
            t,
            h,
            plan,
            seed,
            psi_fn=lambda c, tt: psi1_outer_values(c, tt, plan, seed),
        )
        out.append(Residual(f"m{k1}", est, f"m{k1}" in pinned))
    return ResidualReport(tuple(out))


@dataclass(frozen=True)
class StationaryPoint:
    t: float
    pbar: tuple
    qbar: tuple
    mbar: tuple
    residual_norm: float
    psi1_value: EstimateWithError
    converged: bool
    sweeps: int
    trace: tuple = ()

    def schedule(self, r: int) -> LiftingSchedule:
        return LiftingSchedule(r=r, pvec=self.pbar, qvec=self.qbar, mvec=self.mbar)


@dataclass
class SolverOptions:
    mode: str = "complete"  # or "pq-only"
    m1_eps: float = 1e-2
    damping: float = 0.7
    tol: float = 1e-3
    max_sweeps: int = 25
    m_step: float = 0.5
    raise_on_failure: bool = True


def _project_monotone(interior, head):
    """Clip interior entries into [0, head] and restore the non-increasing order."""
    out = []
    prev = head
    for v in interior:
        v = min(max(v, 0.0), prev)
        out.append(v)
        prev = v
    return out


def _sweep_seed(seed: int, sweep: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(97, sweep))
    return int(ss.generate_state(1)[0])


def solve_stationary(
    cfg: ProblemConfig,
    t: float,
    plan: SamplePlan,
    seed: int = 0,
    options: SolverOptions = None,
) -> StationaryPoint:
    """Damped fixed-point iteration on the p/q overlap equations.

    In "complete" mode the first interior exponent is pinned at 1 - eps and
    deeper interior exponents are driven by a secant step on the finite
    difference of the augmented functional.  In "pq-only" mode the exponent
    vector stays fixed (the modulo-m frame).  At beta = 0 every feasible point
    is stationary and the initial guess is returned unchanged.
    """
    opts = options or SolverOptions()
    if not cfg.ensemble.is_constant_magnitude(tol=1e-9):
        raise ConstantMagnitudeRequired("solver assumes constant magnitudes")
    sc = cfg.scalars
    sch = cfg.schedule
    r = sch.r
    if opts.mode == "complete":
        mvec = list(sch.mvec)
        mvec[1] = 1.0 - opts.m1_eps
        sch = sch.replace(mvec=tuple(mvec))
    if sc.beta == 0.0:
        cfg0 = cfg.with_schedule(sch)
        val = psi1(cfg0, t, plan, _sweep_seed(seed, 999))
        return StationaryPoint(t, sch.pvec, sch.qvec, sch.mvec, 0.0, val, True, 0)

    p = sc.p_exp
    trace = []
    m_state = {}  # k1 -> (m_prev, g_prev) for the secant step
    residual_norm = math.inf
    sweeps = 0
    for sweep in range(opts.max_sweeps):
        sweeps = sweep + 1
        cfg_cur = cfg.with_schedule(sch)
        sweep_seed = _sweep_seed(seed, sweep)
        vals = overlap_outer_values(
            cfg_cur, t, plan, sweep_seed, _pq_overlap_requests(r)
        )
        mv = sch.mvec

        def mean(ms, f):
            return float(np.mean(vals[request_key(ms, f)]))

        q_new, p_new, mism = [], [], []
        for k1 in range(1, r + 1):
            if k1 == 1:
                wa = (mv[1] - mv[2]) * p
                wb = mv[1] * (1.0 - p)
                den = wa * mean("g21", "xx_yy") + wb * mean("g22", "xx_yy")
                qn = (wa * mean("g21", "xx_yty") + wb * mean("g22", "xx_yty")) / den
                pn = (wa * mean("g21", "xtx_yy") + wb * mean("g22", "xtx_yy")) / den
            else:
                ms = ("gk", k1)
                den = mean(ms, "xx_yy")
                qn = mean(ms, "xx_yty") / den
                pn = mean(ms, "xtx_yy") / den
            q_new.append(qn)
            p_new.append(pn)
            mism.append(abs(sch.qvec[k1] - qn))
            mism.append(abs(sch.pvec[k1] - pn))

        m_resid = []
        if opts.mode == "complete":
            for k1 in range(2, r + 1):
                g = finite_difference(
                    ("m", k1),
                    cfg_cur,
                    t,
                    1e-3,
                    plan,
                    sweep_seed,
                    psi_fn=lambda c, tt: psi1_outer_values(c, tt, plan, sweep_seed),
                ).value
                m_resid.append((k1, g))

        residual_norm = max(mism + [abs(g) for _, g in m_resid]) if (mism or m_resid) else 0.0
        trace.append({"sweep": sweep, "residual": residual_norm,
                      "pvec": sch.pvec, "qvec": sch.qvec, "mvec": sch.mvec})
        if residual_norm < opts.tol:
            break

        al = opts.damping
        p_int = [
            (1 - al) * sch.pvec[k1] + al * p_new[k1 - 1] for k1 in range(1, r + 1)
        ]
        q_int = [
            (1 - al) * sch.qvec[k1] + al * q_new[k1 - 1] for k1 in range(1, r + 1)
        ]
        p_int = _project_monotone(p_int, sch.pvec[0])
        q_int = _project_monotone(q_int, sch.qvec[0])
        pvec = (sch.pvec[0], *p_int, 0.0)
        qvec = (sch.qvec[0], *q_int, 0.0)
        mvec = list(sch.mvec)
        for k1, g in m_resid:
            prev = m_state.get(k1)
            if prev is not None and abs(g - prev[1]) > 1e-14:
                step = -g * (mvec[k1] - prev[0]) / (g - prev[1])
            else:
                step = -opts.m_step * g
            m_state[k1] = (mvec[k1], g)
            mvec[k1] = min(max(mvec[k1] + max(-0.2, min(0.2, step)), 1e-3), 0.999)
        sch = LiftingSchedule(r=r, pvec=pvec, qvec=qvec, mvec=tuple(mvec))

    converged = residual_norm < opts.tol
    val = psi1(cfg.with_schedule(sch), t, plan, _sweep_seed(seed, 999))
    point = StationaryPoint(
        t, sch.pvec, sch.qvec, sch.mvec, residual_norm, val, converged, sweeps,
        tuple(trace),
    )
    if not converged and opts.raise_on_failure:
        raise NoConvergence(
            f"residual {residual_norm:.3g} > tol {opts.tol:g} after {sweeps} sweeps",
            best=point,
            trace=trace,
        )
    return point


@dataclass(frozen=True)
class PathReport:
    ts: tuple
    points: tuple
    psi1_values: tuple
    std_errors: tuple
    spread: float
    max_se: float
    slack: float
    passed: bool

    def to_dict(self):
        return {
            "ts": list(self.ts),
            "psi1": list(self.psi1_values),
            "std_errors": list(self.std_errors),
            "spread": self.spread,
            "max_se": self.max_se,
            "slack": self.slack,
            "pass": self.passed,
        }


def path_invariance(
    cfg: ProblemConfig,
    t_grid,
    plan: SamplePlan,
    seed: int = 0,
    options: SolverOptions = None,
    slack_c: float = 0.5,
) -> PathReport:
    """Solve the stationarity system along a t-grid (warm-started) and check
    that the augmented functional stays flat within noise plus a finite-size
    slack of slack_c / sqrt(n)."""
    t_grid = tuple(float(v) for v in t_grid)
    if not t_grid or min(t_grid) != 0.0 or max(t_grid) != 1.0:
        raise ValueError("the grid must cover t = 0 and t = 1")
    opts = options or SolverOptions()
    points = []
    guess = cfg
    for i, t in enumerate(t_grid):
        pt = solve_stationary(guess, t, plan, seed=seed + i, options=opts)
        points.append(pt)
        guess = cfg.with_schedule(pt.schedule(cfg.schedule.r))
        if opts.mode == "complete":
            # keep the solved point as the warm start, exponents included
            guess = cfg.with_schedule(
                LiftingSchedule(cfg.schedule.r, pt.pbar, pt.qbar, pt.mbar)
            )
    vals = [pt.psi1_value.value for pt in points]
    ses = [pt.psi1_value.std_error for pt in points]
    spread = max(vals) - min(vals)
    max_se = max(ses)
    slack = slack_c / math.sqrt(cfg.ensemble.n)
    passed = spread < 5.0 * max_se + slack
    return PathReport(
        t_grid, tuple(points), tuple(vals), tuple(ses), spread, max_se, slack, passed
    )


@dataclass(frozen=True)
class CorollaryReport:
    lhs: EstimateWithError
    rhs: EstimateWithError
    correction: float
    difference: float
    combined_se: float
    slack: float
    passed: bool

    def to_dict(self):
        return {
            "lhs": self.lhs.value,
            "rhs": self.rhs.value,
            "correction": self.correction,
            "difference": self.difference,
            "combined_se": self.combined_se,
            "slack": self.slack,
            "pass": self.passed,
        }


def corollary_endpoint_check(
    cfg: ProblemConfig,
    plan: SamplePlan,
    seed: int = 0,
    options: SolverOptions = None,
    slack_c: float = 0.5,
) -> CorollaryReport:
    """Decoupled-functional endpoint relation on unit-norm ensembles.

    Solves the stationary points at t = 0 and t = 1 and compares the t = 1
    decoupled functional against the t = 0 one plus the collapsed correction
    evaluated at the t = 0 point.
    """
    if not cfg.ensemble.is_unit_norm(tol=1e-9):
        raise UnitNormRequired("the endpoint relation assumes unit norms")
    opts = options or SolverOptions()
    pt0 = solve_stationary(cfg, 0.0, plan, seed=seed, options=opts)
    warm = cfg.with_schedule(pt0.schedule(cfg.schedule.r))
    pt1 = solve_stationary(warm, 1.0, plan, seed=seed + 1, options=opts)
    sch0 = pt0.schedule(cfg.schedule.r)
    sch1 = pt1.schedule(cfg.schedule.r)
    corr = unit_norm_correction(sch0, cfg.scalars, cfg.ensemble.n)
    vals1 = psi_outer_values(cfg.with_schedule(sch1), 1.0, plan, seed + 2, decoupled=True)
    vals0 = psi_outer_values(cfg.with_schedule(sch0), 0.0, plan, seed + 3, decoupled=True)
    lhs = summarize(vals1, plan, seed + 2)
    rhs = summarize(corr + vals0, plan, seed + 3)
    diff = lhs.value - rhs.value
    comb = math.hypot(lhs.std_error, rhs.std_error)
    slack = slack_c / math.sqrt(cfg.ensemble.n)
    return CorollaryReport(lhs, rhs, corr, diff, comb, slack, abs(diff) < 4 * comb + slack)


@dataclass(frozen=True)
class ModuloMReport:
    m_grid: tuple
    lhs: tuple
    rhs: tuple
    rhs_min: float
    min_gap: float
    combined_se: float
    slack: float
    passed: bool

    def to_dict(self):
        return {
            "m_grid": [list(m) for m in self.m_grid],
            "lhs": list(self.lhs),
            "rhs": list(self.rhs),
            "rhs_min": self.rhs_min,
            "min_gap": self.min_gap,
            "combined_se": self.combined_se,
            "slack": self.slack,
            "pass": self.passed,
        }


def modulo_m_bound(
    cfg: ProblemConfig,
    m_grid,
    plan: SamplePlan,
    seed: int = 0,
    options: SolverOptions = None,
    slack_c: float = 0.5,
) -> ModuloMReport:
    """Lower bound over an exponent grid: for every fixed m, the t = 1
    decoupled value must dominate the grid minimum of correction + t = 0
    value (each solved in the pq-only frame)."""
    if not cfg.ensemble.is_unit_norm(tol=1e-9):
        raise UnitNormRequired("the modulo-m frame check assumes unit norms")
    base = options or SolverOptions()
    lhs_vals, rhs_vals, ses = [], [], []
    for i, mvec in enumerate(m_grid):
        sch = cfg.schedule.replace(mvec=tuple(mvec))
        opts = SolverOptions(
            mode="pq-only", damping=base.damping, tol=base.tol,
            max_sweeps=base.max_sweeps, raise_on_failure=base.raise_on_failure,
        )
        pt0 = solve_stationary(cfg.with_schedule(sch), 0.0, plan, seed=seed + 10 * i, options=opts)
        pt1 = solve_stationary(cfg.with_schedule(sch), 1.0, plan, seed=seed + 10 * i + 1, options=opts)
        sch0 = pt0.schedule(cfg.schedule.r)
        sch1 = pt1.schedule(cfg.schedule.r)
        corr = unit_norm_correction(sch0, cfg.scalars, cfg.ensemble.n)
        v1 = summarize(
            psi_outer_values(cfg.with_schedule(sch1), 1.0, plan, seed + 10 * i + 2, decoupled=True),
            plan, seed,
        )
        v0 = summarize(
            psi_outer_values(cfg.with_schedule(sch0), 0.0, plan, seed + 10 * i + 3, decoupled=True),
            plan, seed,
        )
        lhs_vals.append(v1.value)
        rhs_vals.append(corr + v0.value)
        ses.append(math.hypot(v1.std_error, v0.std_error))
    rhs_min = min(rhs_vals)
    comb = max(ses)
    slack = slack_c / math.sqrt(cfg.ensemble.n)
    gaps = [lhs - rhs_min for lhs in lhs_vals]
    passed = all(g >= -(4 * comb + slack) for g in gaps)
    return ModuloMReport(
        tuple(tuple(m) for m in m_grid),
        tuple(lhs_vals),
        tuple(rhs_vals),
        rhs_min,
        min(gaps),
        comb,
        slack,
        passed,
    )
