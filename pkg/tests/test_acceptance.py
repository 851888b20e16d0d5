"""Acceptance battery: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -m acceptance -s`` (or let the full suite pick it up).  The
battery covers the six benchmark configs (l in {1,2,3}, n,m in {1,3,5},
r in {1,2}, s in {-0.7,1,2.5}, p in {1,2}, beta in {0,0.5,1.5}) plus the
fully symmetric unit-norm instance used by the stationarity checks.
"""

import json
import os
import time

import numpy as np
import pytest

from bilift import battery as bat
from bilift.calculus import (
    dpsi_dp,
    dpsi_dp_first_level,
    dpsi_dq,
    dpsi_dt,
    finite_difference,
    verify_identity,
)
from bilift.cli import run_suite
from bilift.measures import overlap_outer_values, request_key, overlap_requests
from bilift.model import ModelScalars, ProblemConfig
from bilift.nested import SamplePlan, estimate_psi, psi_outer_values
from bilift.oracles import naive_overlap, psi_beta0, psi_l1, quadrature_psi
from bilift.randomness import OUTER, StreamKey, ibp_selfcheck
from bilift.stationary import (
    SolverOptions,
    corollary_endpoint_check,
    modulo_m_bound,
    path_invariance,
    solve_stationary,
    stationarity_residuals,
)

pytestmark = pytest.mark.acceptance

SEED = 42


@pytest.fixture(scope="module")
def entries():
    return bat.battery()


def _report(criterion, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}"
    if detail:
        line += f" :: {detail}"
    print(line, flush=True)


def test_criterion_1_oracle_consistency(entries):
    """Closed forms, quadrature and the nested MC estimator agree."""
    t0 = time.time()
    # mutual closed-form agreement on the common domain
    import bilift.model as model

    cfg_common = ProblemConfig(
        model.EnsembleSpec(
            xs=np.array([[1.0]]), xbars=np.array([[1.0]]), ys=np.array([[1.0]])
        ),
        ModelScalars(0.0, -0.7, 1.0),
        model.LiftingSchedule(1, (1, 0.5, 0), (1, 0.4, 0), (1, 0.5, 0)),
    )
    a = psi_beta0(cfg_common).value
    b = psi_l1(cfg_common, 0.3).value
    c = quadrature_psi(cfg_common, 0.3, nodes=20).value
    assert abs(a - b) < 1e-9 and abs(a - c) < 1e-9
    l1 = entries["B1"]
    cf = psi_l1(l1.config, l1.t).value
    q1 = quadrature_psi(l1.config, l1.t, nodes=20).value
    assert abs(cf - q1) < 1e-9

    details = []
    ok = True
    for name in ("B1", "B2"):
        ent = entries[name]
        assert ent.quadrature_ok
        t_cfg = time.time()
        quad = q1 if name == "B1" else quadrature_psi(ent.config, ent.t, nodes=20).value
        plan = ent.psi_plan
        est = estimate_psi(ent.config, ent.t, plan, seed=SEED)
        z = (est.value - quad) / est.std_error
        dt = time.time() - t_cfg
        details.append(f"{name}: z={z:+.2f} ({dt:.0f}s)")
        ok &= abs(z) < 4 and dt < 120
        assert abs(z) < 4, (name, est.value, quad, z)
        assert dt < 120, f"{name} took {dt:.0f}s"
    # measured nested-estimator bias where truth is known (1e3 inner samples)
    bias_est = estimate_psi(l1.config, l1.t, SamplePlan((1000, 1000)), seed=SEED)
    bias = abs(bias_est.value - cf)
    details.append(f"l=1 bias={bias:.2e} (3SE={3 * bias_est.std_error:.2e})")
    ok &= bias < 3 * bias_est.std_error
    _report("criterion-1 oracle-consistency", ok, "; ".join(details))
    assert ok
    print(f"    (criterion-1 total {time.time() - t0:.0f}s)")


def test_criterion_2_ibp_selfcheck():
    t0 = time.time()
    report = ibp_selfcheck(100_000, seed=SEED)
    dt = time.time() - t0
    ok = all(r["pass"] for r in report) and dt < 5
    _report(
        "criterion-2 ibp-selfcheck",
        ok,
        ", ".join(f"{r['function']}: z={r['z']:+.2f}" for r in report) + f" ({dt:.1f}s)",
    )
    assert ok


def test_criterion_3_pq_identities(entries):
    t0 = time.time()
    lines, ok = [], True
    for name, ent in entries.items():
        r = ent.config.schedule.r
        for k1 in range(1, r + 1):
            for which in (("dp", k1), ("dq", k1)):
                rep = verify_identity(which, ent.config, ent.t, ent.id_plan,
                                      seed=SEED, h=1e-3)
                lines.append(f"{name}:{rep.which} z={rep.z_score:+.2f}")
                ok &= rep.passed
                assert rep.passed, (name, which, rep.analytic, rep.numeric, rep.z_score)
    # the two first-level codings agree to 1e-12 on identical seeds
    for name in ("B1", "B2", "B3"):
        ent = entries[name]
        a = dpsi_dp(1, ent.config, ent.t, ent.id_plan, SEED)
        b = dpsi_dp_first_level(ent.config, ent.t, ent.id_plan, SEED)
        assert abs(a.value - b.value) <= 1e-12 * max(1.0, abs(a.value)), name
    dt = time.time() - t0
    ok &= dt < 600
    _report("criterion-3 pq-identities", ok, "; ".join(lines) + f" ({dt:.0f}s)")
    assert ok


def test_criterion_4_time_identity(entries):
    t0 = time.time()
    lines, ok = [], True
    for name, ent in entries.items():
        rep = verify_identity(("dt", None), ent.config, ent.t, ent.id_plan,
                              seed=SEED, h=1e-3)
        lines.append(f"{name}: z={rep.z_score:+.2f}")
        ok &= rep.passed
        assert rep.passed, (name, rep.analytic, rep.numeric, rep.z_score)
        # boundary contributions: exact zeros iff p0 = q0 = 1
        res = dpsi_dt(ent.config, ent.t, ent.id_plan, SEED)
        boundary = [c for c in res.breakdown.contributions
                    if c.measure in ("g01", "g02")]
        p0 = ent.config.schedule.pvec[0]
        if ent.config.scalars.beta == 0.0:
            continue
        if p0 == 1.0:
            assert all(c.prefactor == 0.0 and c.estimate.value == 0.0 for c in boundary), name
        else:
            assert all(c.prefactor != 0.0 for c in boundary), name
    dt = time.time() - t0
    ok &= dt < 300
    _report("criterion-4 time-identity", ok, "; ".join(lines) + f" ({dt:.0f}s)")
    assert ok


def test_criterion_5_beta0_exactness(entries):
    ent = entries["B6"]
    cfg = ent.config
    plan = ent.id_plan
    est = estimate_psi(cfg, ent.t, plan, seed=SEED)
    truth = psi_beta0(cfg).value
    ok = abs(est.value - truth) < 1e-12
    assert ok
    for k1 in range(1, cfg.schedule.r + 1):
        assert dpsi_dp(k1, cfg, ent.t, plan, SEED).value == 0.0
        assert dpsi_dq(k1, cfg, ent.t, plan, SEED).value == 0.0
    assert dpsi_dt(cfg, ent.t, plan, SEED).estimate.value == 0.0
    fd = finite_difference(("t", None), cfg, ent.t, 1e-3, SamplePlan((32, 16)), SEED)
    ok &= abs(fd.value) < 1e-10
    _report("criterion-5 beta0-exactness", ok,
            f"|psi - closed| = {abs(est.value - truth):.2e}, fd(t) = {fd.value:.2e}")
    assert ok


def test_criterion_6_measure_correctness(entries):
    from bilift._engine import resolve, eval_outer_sample
    from bilift.measures import coupled

    ok = True
    # factorization identity against the naive enumerator, per draw
    pairs = [
        ("g01", "x2y2"), ("g02", "x2_yty"), ("g02", "x2_yy"),
        ("g1", "xx_yty"), ("g1", coupled(0.5, 0.45)),
        ("g21", "xx_yty"), ("g21", "xtx_yy"), ("g21", "xx_yy"), ("g21", "xtx_yty"),
        ("g22", "xx_yty"), ("g22", coupled(0.5, 0.45)),
    ]
    worst = 0.0
    for name in ("B2", "B3", "B6"):
        ent = entries[name]
        if ent.config.schedule.r != 1:
            continue
        plan = SamplePlan((40, 4))
        ec = resolve(ent.config)
        reqs = overlap_requests(pairs, 1)
        for o in range(2):
            vals = eval_outer_sample(ec, ent.t, plan.counts,
                                     StreamKey(SEED).child(OUTER, o), reqs)
            for ms, fn in pairs:
                nv = naive_overlap(ent.config, ent.t, plan, SEED, o, ms, fn).value
                worst = max(worst, abs(nv - vals[request_key(ms, fn)]))
    ok &= worst < 1e-10

    # weight normalization on random draws
    from bilift.hamiltonian import exponent_tensor, log_partition
    from bilift.measures import base_weights
    from bilift.randomness import sample_block

    ent = entries["B3"]
    for i in range(3):
        blk = sample_block(StreamKey(7).child(1, i), 1, 3, 3)
        tensor = exponent_tensor(ent.config, blk, ent.t)
        lp = log_partition(tensor, ent.config.scalars.beta, ent.config.scalars.s)
        bw = base_weights(lp, tensor, ent.config.scalars)
        ok &= abs(bw.gamma00.sum() - 1.0) < 1e-10
        ok &= bool(np.all(np.abs(bw.gamma0.sum(axis=(0, 1)) - 1.0) < 1e-10))
        ok &= bool(np.all(bw.gamma0 >= 0) and np.all(bw.gamma00 >= 0))

    # replica swap symmetry is exact by construction
    from bilift._engine import _contract

    rng = np.random.default_rng(1)
    seg = {"Sy": slice(0, 3), "Sx": slice(3, 6), "Sn": slice(6, 7),
           "W": slice(7, 16), "dim": 16}
    va, vb = rng.normal(size=16), rng.normal(size=16)
    for fn in ("xx_yty", "xtx_yy", "xx_yy", "xtx_yty", coupled(0.3, 0.8)):
        ok &= bool(np.array_equal(_contract(va, vb, fn, seg), _contract(vb, va, fn, seg)))

    # constant-magnitude all-norms equality across measures, shared seeds
    ent = entries["B4"]
    plan = SamplePlan((60, 20, 8))
    vals = overlap_outer_values(
        ent.config, ent.t, plan, SEED,
        [("g1", "xx_yy"), ("g21", "xx_yy"), ("g22", "xx_yy"), (("gk", 2), "xx_yy")],
    )
    q = (1.3 * 0.8) ** 2
    sq_worst = max(float(np.max(np.abs(arr - q))) for arr in vals.values())
    ok &= sq_worst < 1e-12
    _report("criterion-6 measure-correctness", ok,
            f"max |naive - engine| = {worst:.2e}, all-norms dev = {sq_worst:.2e}")
    assert ok


def test_criterion_7_stationarity_and_invariance():
    t0 = time.time()
    cfg = bat.symmetric_instance()
    plan = SamplePlan((800, 300))
    opts = SolverOptions(damping=1.0, tol=1e-3, raise_on_failure=False)
    rep = path_invariance(cfg, (0.0, 0.25, 0.5, 0.75, 1.0), plan, seed=SEED,
                          options=opts)
    ok = rep.passed
    for pt in rep.points:
        ok &= pt.converged and pt.residual_norm < 1e-3
    # fresh-seed residuals at the solved endpoints
    for pt in (rep.points[0], rep.points[-1]):
        solved = cfg.with_schedule(pt.schedule(cfg.schedule.r))
        fresh = stationarity_residuals(solved, pt.t, plan, seed=SEED + 777,
                                       pinned=("m1",))
        for res in fresh.residuals:
            if res.pinned:
                continue
            se = max(res.estimate.std_error, 1e-15)
            ok &= abs(res.estimate.value) < max(4 * se, 1e-10)
    dt = time.time() - t0
    ok &= dt < 900
    _report(
        "criterion-7 stationarity-invariance", ok,
        f"spread={rep.spread:.2e} vs 5*maxSE+slack={5 * rep.max_se + rep.slack:.2e} ({dt:.0f}s)",
    )
    assert ok


def test_criterion_8_corollaries():
    cfg = bat.symmetric_instance()
    plan = SamplePlan((800, 300))
    opts = SolverOptions(damping=1.0, raise_on_failure=False)
    rep = corollary_endpoint_check(cfg, plan, seed=SEED, options=opts)
    ok = rep.passed
    grid = [(1.0, 0.3, 0.0), (1.0, 0.6, 0.0), (1.0, 0.99, 0.0)]
    repm = modulo_m_bound(cfg, grid, plan, seed=SEED, options=opts)
    ok &= repm.passed
    # tight at the complete-frame exponent (the 0.99 grid entry)
    gap_at_mbar = repm.lhs[2] - repm.rhs_min
    tight = abs(gap_at_mbar) < 4 * repm.combined_se + repm.slack
    ok &= tight
    _report(
        "criterion-8 corollaries", ok,
        f"endpoint diff={rep.difference:+.3e} (4SE+slack={4 * rep.combined_se + rep.slack:.2e}); "
        f"min gap={repm.min_gap:+.3e}; gap@mbar={gap_at_mbar:+.3e}",
    )
    assert ok


def _strip_volatile(report):
    return {k: v for k, v in report.items() if k != "wall_clock_s"}


def test_criterion_9_reproducibility(entries):
    t0 = time.time()
    rep1, code1 = run_suite("all", seed=SEED, quiet=True)
    rep2, code2 = run_suite("all", seed=SEED, quiet=True)
    same = json.dumps(_strip_volatile(rep1), sort_keys=True) == json.dumps(
        _strip_volatile(rep2), sort_keys=True
    )
    ok = same and code1 == 0 and code2 == 0

    # thread-count invariance on representative estimates
    ent = entries["B5"]
    old = os.environ.get("SFL_THREADS")
    try:
        os.environ["SFL_THREADS"] = "1"
        v1 = psi_outer_values(ent.config, ent.t, SamplePlan((60, 20, 10)), SEED)
        o1 = overlap_outer_values(ent.config, ent.t, SamplePlan((60, 20, 10)), SEED,
                                  [("g21", "xx_yty"), (("gk", 2), "xx_yy")])
        os.environ["SFL_THREADS"] = "4"
        v4 = psi_outer_values(ent.config, ent.t, SamplePlan((60, 20, 10)), SEED)
        o4 = overlap_outer_values(ent.config, ent.t, SamplePlan((60, 20, 10)), SEED,
                                  [("g21", "xx_yty"), (("gk", 2), "xx_yy")])
    finally:
        if old is None:
            os.environ.pop("SFL_THREADS", None)
        else:
            os.environ["SFL_THREADS"] = old
    ok &= bool(np.array_equal(v1, v4))
    for key in o1:
        ok &= bool(np.array_equal(o1[key], o4[key]))
    dt = time.time() - t0
    _report("criterion-9 reproducibility", ok,
            f"suite all pass={rep1['pass']}, bit-identical={same}, "
            f"thread-invariant ({dt:.0f}s)")
    assert ok
    assert rep1["pass"], [c["name"] for c in rep1["checks"] if not c["pass"]]
