"""Command-line front end: estimators, identity checks, suites, reports.

Exit codes: 0 all checks passed, 1 at least one check failed, 2 config error.
The JSON reports echo the fully resolved configuration; re-running from the
echoed config with the same seed reproduces every value bitwise.  SFL_THREADS
caps the worker count and never affects values.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__, battery
from .calculus import verify_identity
from .errors import BiliftError, ConfigError
from .measures import coupled, overlap_expectation
from .model import (
    EnsembleSpec,
    LiftingSchedule,
    ModelScalars,
    ProblemConfig,
    TiltSpec,
    load_config,
    save_config,
    validate,
)
from .nested import SamplePlan, estimate_psi, estimate_psi_S
from .oracles import psi_beta0, psi_l1, quadrature_psi
from .randomness import ibp_selfcheck
from .stationary import (
    SolverOptions,
    corollary_endpoint_check,
    modulo_m_bound,
    path_invariance,
    psi1,
    solve_stationary,
    stationarity_residuals,
)

FUNCTIONAL_ALIASES = {
    "xy": "xx_yty",
    "yx": "xtx_yy",
    "norms": "xx_yy",
    "cross": "xtx_yty",
    "diag": "x2y2",
    "g02xy": "x2_yty",
    "g02norms": "x2_yy",
}


def _parse_measure(text: str):
    if text.startswith("gk:"):
        return ("gk", int(text.split(":")[1]))
    return text


def _parse_functional(text: str):
    if text.startswith("coupled:"):
        _, pc, qc = text.split(":")
        return coupled(float(pc), float(qc))
    return FUNCTIONAL_ALIASES.get(text, text)


def _estimate_dict(est):
    return {
        "value": est.value,
        "std_error": est.std_error,
        "plan": list(est.plan.counts) if est.plan else None,
        "seed": est.seed,
    }


def _emit(payload, out_path=None, quiet=False):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    if not quiet:
        print(text)


def _load(args) -> ProblemConfig:
    return load_config(args.config).validated()


def cmd_psi(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    fn = estimate_psi_S if args.decoupled else estimate_psi
    est = fn(cfg, args.t, plan, seed=args.seed)
    _emit(_estimate_dict(est), args.out, args.quiet)
    return 0


def cmd_overlap(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    est = overlap_expectation(
        _parse_measure(args.measure),
        _parse_functional(args.functional),
        cfg,
        args.t,
        plan,
        seed=args.seed,
    )
    payload = _estimate_dict(est)
    payload.update({"measure": args.measure, "functional": args.functional})
    _emit(payload, args.out, args.quiet)
    return 0


def _parse_which(text: str):
    out = []
    for item in text.split(","):
        item = item.strip()
        if item == "dt":
            out.append(("dt", None))
        elif item.startswith("dp:"):
            out.append(("dp", int(item.split(":")[1])))
        elif item.startswith("dq:"):
            out.append(("dq", int(item.split(":")[1])))
        else:
            raise ConfigError(f"unknown identity selector {item!r}")
    return out


def cmd_check(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    reports = [
        verify_identity(which, cfg, args.t, plan, seed=args.seed, h=args.h)
        for which in _parse_which(args.which)
    ]
    _emit([r.to_dict() for r in reports], args.out, args.quiet)
    return 0 if all(r.passed for r in reports) else 1


def cmd_stationarize(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    opts = SolverOptions(mode=args.mode, tol=args.tol, raise_on_failure=False)
    pt = solve_stationary(cfg, args.t, plan, seed=args.seed, options=opts)
    res = stationarity_residuals(
        cfg.with_schedule(pt.schedule(cfg.schedule.r)), args.t, plan,
        seed=args.seed + 1, pinned=("m1",) if args.mode == "complete" else (),
    )
    payload = {
        "t": pt.t,
        "pbar": list(pt.pbar),
        "qbar": list(pt.qbar),
        "mbar": list(pt.mbar),
        "residual_norm": pt.residual_norm,
        "converged": pt.converged,
        "sweeps": pt.sweeps,
        "psi1": _estimate_dict(pt.psi1_value),
        "fresh_residuals": {
            r.name: {"value": r.estimate.value, "std_error": r.estimate.std_error,
                     "pinned": r.pinned}
            for r in res.residuals
        },
    }
    _emit(payload, args.out, args.quiet)
    return 0 if pt.converged else 1


def _parse_grid(text: str):
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        count = int(round((hi - lo) / step)) + 1
        return [lo + i * step for i in range(count)]
    return [float(v) for v in text.split(",")]


def cmd_path(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    opts = SolverOptions(raise_on_failure=False)
    rep = path_invariance(cfg, _parse_grid(args.grid), plan, seed=args.seed, options=opts)
    _emit(rep.to_dict(), args.out, args.quiet)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("t,psi1,std_error\n")
            for t, v, se in zip(rep.ts, rep.psi1_values, rep.std_errors):
                fh.write(f"{t},{v},{se}\n")
    return 0 if rep.passed else 1


def cmd_corollary6(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    rep = corollary_endpoint_check(
        cfg, plan, seed=args.seed, options=SolverOptions(raise_on_failure=False)
    )
    _emit(rep.to_dict(), args.out, args.quiet)
    return 0 if rep.passed else 1


def cmd_modulo_m(args):
    cfg = _load(args)
    plan = SamplePlan.parse(args.plan)
    grid = []
    for chunk in args.m_grid.split(";"):
        grid.append(tuple(float(v) for v in chunk.split(",")))
    rep = modulo_m_bound(
        cfg, grid, plan, seed=args.seed, options=SolverOptions(raise_on_failure=False)
    )
    _emit(rep.to_dict(), args.out, args.quiet)
    return 0 if rep.passed else 1


def cmd_oracle(args):
    cfg = _load(args)
    if args.method == "beta0":
        res = psi_beta0(cfg)
    elif args.method == "l1":
        res = psi_l1(cfg, args.t)
    elif args.method == "quadrature":
        res = quadrature_psi(cfg, args.t, nodes=args.nodes)
    else:
        raise ConfigError(f"unknown oracle method {args.method!r}")
    _emit({"value": res.value, "method": res.method}, args.out, args.quiet)
    return 0


def cmd_ibp(args):
    report = ibp_selfcheck(args.n, seed=args.seed)
    _emit(report, args.out, args.quiet)
    return 0 if all(r["pass"] for r in report) else 1


def cmd_make_ensemble(args):
    rng = np.random.default_rng(args.seed)
    l, n, m = args.l, args.n, args.m
    if args.kind == "random-unit-sphere":
        xs = rng.standard_normal((l, n))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        xbars = rng.standard_normal((l, n))
        xbars /= np.linalg.norm(xbars, axis=1, keepdims=True)
        ys = rng.standard_normal((l, m))
        ys /= np.linalg.norm(ys, axis=1, keepdims=True)
    elif args.kind == "symmetric":
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        y = rng.standard_normal(m)
        y /= np.linalg.norm(y)
        xs = np.tile(x, (l, 1))
        xbars = xs.copy()
        ys = np.tile(y, (l, 1))
    elif args.kind == "custom":
        cfg = load_config(args.from_config)
        xs, xbars, ys = cfg.ensemble.xs, cfg.ensemble.xbars, cfg.ensemble.ys
    else:
        raise ConfigError(f"unknown ensemble kind {args.kind!r}")
    r = args.r
    interior = [round(0.5 * (r - k + 1) / r, 6) for k in range(1, r + 1)]
    schedule = LiftingSchedule(
        r=r,
        pvec=(1.0, *interior, 0.0),
        qvec=(1.0, *interior, 0.0),
        mvec=(1.0, *([0.5] * r), 0.0),
    )
    cfg = ProblemConfig(
        EnsembleSpec(xs=xs, xbars=xbars, ys=ys, tilt=TiltSpec("zero")),
        ModelScalars(beta=args.beta, s=args.s, p_exp=args.p_exp),
        schedule,
    )
    rep = validate(cfg.ensemble, cfg.scalars, cfg.schedule)
    if not rep.ok:
        raise ConfigError("generated config invalid: " + "; ".join(rep.codes()))
    save_config(cfg, args.out)
    if not args.quiet:
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def run_suite(suite: str, seed: int = 42, quiet: bool = False, out=None):
    """Execute a named check battery; returns (report, exit_code)."""
    t_start = time.time()
    entries = battery.battery()
    checks = []

    def record(name, passed, detail):
        checks.append({"name": name, "pass": bool(passed), "detail": detail})
        if not quiet:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")

    if suite in ("oracles", "all"):
        for rep in ibp_selfcheck(100_000, seed=seed):
            record(f"ibp:{rep['function']}", rep["pass"], rep)
        for name in ("B1", "B2"):
            ent = entries[name]
            cf = None
            if ent.config.ensemble.l == 1:
                cf = psi_l1(ent.config, ent.t).value
            if ent.config.scalars.beta == 0.0:
                cf = psi_beta0(ent.config).value
            est = estimate_psi(ent.config, ent.t, ent.suite_plan, seed=seed)
            quad = quadrature_psi(ent.config, ent.t, nodes=14).value
            z = (est.value - quad) / est.std_error if est.std_error else 0.0
            ok = abs(z) < 4 and (cf is None or abs(cf - quad) < 1e-9)
            record(
                f"oracle:{name}",
                ok,
                {"mc": est.value, "quadrature": quad, "closed_form": cf, "z": z},
            )
        ent = entries["B6"]
        cf = psi_beta0(ent.config).value
        est = estimate_psi(ent.config, ent.t, SamplePlan((64, 16)), seed=seed)
        record(
            "oracle:B6-beta0",
            abs(est.value - cf) < 1e-12,
            {"mc": est.value, "closed_form": cf},
        )

    if suite in ("identities", "all"):
        for name, ent in entries.items():
            which = [("dp", k) for k in range(1, ent.config.schedule.r + 1)]
            which += [("dq", k) for k in range(1, ent.config.schedule.r + 1)]
            which.append(("dt", None))
            for w in which:
                rep = verify_identity(w, ent.config, ent.t, ent.suite_plan, seed=seed)
                record(f"identity:{name}:{rep.which}", rep.passed, rep.to_dict())

    if suite in ("invariance", "all"):
        cfg = battery.symmetric_instance()
        plan = SamplePlan((800, 300))
        rep = path_invariance(
            cfg,
            (0.0, 0.25, 0.5, 0.75, 1.0),
            plan,
            seed=seed,
            options=SolverOptions(damping=1.0, raise_on_failure=False),
        )
        record("invariance:path", rep.passed, rep.to_dict())

    if suite in ("corollaries", "all"):
        cfg = battery.symmetric_instance()
        plan = SamplePlan((800, 300))
        rep = corollary_endpoint_check(
            cfg, plan, seed=seed, options=SolverOptions(damping=1.0, raise_on_failure=False)
        )
        record("corollary:endpoint", rep.passed, rep.to_dict())
        grid = [(1.0, 0.3, 0.0), (1.0, 0.6, 0.0), (1.0, 0.99, 0.0)]
        repm = modulo_m_bound(
            cfg, grid, plan, seed=seed,
            options=SolverOptions(damping=1.0, raise_on_failure=False),
        )
        record("corollary:modulo-m", repm.passed, repm.to_dict())

    report = {
        "version": __version__,
        "suite": suite,
        "seed": seed,
        "configs": {
            name: {"config": ent.config.to_dict(), "t": ent.t,
                   "plan": list(ent.suite_plan.counts)}
            for name, ent in entries.items()
        },
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
        "wall_clock_s": round(time.time() - t_start, 3),
    }
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report, (0 if report["pass"] else 1)


def cmd_suite(args):
    report, code = run_suite(args.suite, seed=args.seed, quiet=args.quiet, out=args.out)
    if not args.quiet:
        print(json.dumps({k: v for k, v in report.items() if k != "checks"}, indent=2))
    return code


def build_parser():
    ap = argparse.ArgumentParser(
        prog="bilift",
        description="Multilevel interpolating functionals of bilinear Gaussian "
        "ensembles: estimators, derivative identities, stationary paths.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True, plan_default="1000,300"):
        if config:
            p.add_argument("--config", required=True, help="JSON problem config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--plan", default=plan_default, help="per-level sample counts N1,N2,...")
        p.add_argument("--t", type=float, default=0.5)
        p.add_argument("--out", help="write the JSON report here")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("psi", help="estimate the interpolating functional")
    common(p)
    p.add_argument("--decoupled", action="store_true", help="drop the coupled u4 term")
    p.set_defaults(fn=cmd_psi)

    p = sub.add_parser("overlap", help="estimate one overlap functional")
    common(p)
    p.add_argument("--measure", required=True, help="g01|g02|g1|g21|g22|gk:K")
    p.add_argument("--functional", required=True, help="xy|yx|norms|cross|diag|g02xy|g02norms|coupled:PC:QC")
    p.set_defaults(fn=cmd_overlap)

    p = sub.add_parser("check", help="verify derivative identities against finite differences")
    common(p)
    p.add_argument("--which", default="dp:1,dq:1,dt", help="comma list: dp:K, dq:K, dt")
    p.add_argument("--h", type=float, default=1e-3)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("stationarize", help="solve the stationarity system at one t")
    common(p)
    p.add_argument("--mode", choices=("complete", "pq-only"), default="complete")
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(fn=cmd_stationarize)

    p = sub.add_parser("path", help="stationary-path flatness along a t grid")
    common(p)
    p.add_argument("--grid", default="0:1:0.25", help="lo:hi:step or comma list; must cover 0 and 1")
    p.add_argument("--csv", help="write t,psi1,std_error rows here")
    p.set_defaults(fn=cmd_path)

    p = sub.add_parser("corollary6", help="decoupled endpoint relation on unit norms")
    common(p)
    p.set_defaults(fn=cmd_corollary6)

    p = sub.add_parser("modulo-m", help="exponent-grid lower bound check")
    common(p)
    p.add_argument("--m-grid", required=True, help="semicolon-separated mvec rows, e.g. '1,0.3,0;1,0.6,0'")
    p.set_defaults(fn=cmd_modulo_m)

    p = sub.add_parser("oracle", help="closed-form / quadrature reference values")
    common(p)
    p.add_argument("--method", required=True, choices=("beta0", "l1", "quadrature"))
    p.add_argument("--nodes", type=int, default=20)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("ibp", help="Gaussian integration-by-parts self-check")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_ibp)

    p = sub.add_parser("suite", help="run a named check battery")
    p.add_argument("--suite", default="all",
                   choices=("identities", "invariance", "corollaries", "oracles", "all"))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_suite)

    p = sub.add_parser("make-ensemble", help="generate a problem config")
    p.add_argument("--kind", default="random-unit-sphere",
                   choices=("random-unit-sphere", "symmetric", "custom"))
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--p-exp", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--from-config", help="source config for kind=custom")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_make_ensemble)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BiliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
