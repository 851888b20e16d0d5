"""Shared Monte Carlo traversal for the multilevel functional and its measures.

One outer sample fixes (G, level r+1).  Below it, every level k = r..2 carries
a batch of draws; level 1 carries the innermost batch.  The partition chain

    zeta_1 = sum_i3 (mean_j Z_i3^{m1})^p,   zeta_k = mean_j zeta_{k-1}^{m_k/m_{k-1}}

is folded bottom-up in the log domain.  Measure values ride along: at level k
a sample j is weighted by zeta_{k-1,j}^{m_k/m_{k-1}} normalized over the batch,
and at level 1 by Z_i3^{m1} normalized over the batch, which is the sample
realization of the reweighted conditional expectations defining the measures.

Replica structure: two-replica measures keep two independent random chains,
A and B.  A split at level k means the branches share all randomness above k
and use chain-B draws at and below k.  Branch values are vector moment tuples
(the factorization device: every supported overlap functional is a contraction
of per-replica linear statistics), contracted at the split.

Determinism: every draw derives from StreamKey(seed, path); reductions run in
index order; SFL_THREADS only partitions the outer loop over pure functions of
per-sample keys, so it cannot change values.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateM, MeasureLevelMismatch, UnsupportedFunctional
from .hamiltonian import bilinear_term, level_contribution
from .model import ProblemConfig
from .numutil import logmeanexp, logsumexp, softmax
from .randomness import OUTER, StreamKey, sample_G, sample_level, sample_level_batch

LN2 = np.log(2.0)

TWO_REPLICA_FUNCTIONALS = ("xx_yty", "xtx_yy", "xx_yy", "xtx_yty")
DIAG_FUNCTIONALS = ("x2y2",)
G02_FUNCTIONALS = ("x2_yty", "x2_yy")


def normalize_measure(measure):
    """Canonical measure key; 'g2' is an alias of 'g21', deep splits are ('gk', k1)."""
    if isinstance(measure, tuple):
        tag, k1 = measure
        if tag != "gk":
            raise UnsupportedFunctional(f"unknown measure {measure!r}")
        return ("gk", int(k1))
    if measure == "g2":
        return "g21"
    if measure in ("g01", "g02", "g1", "g21", "g22"):
        return measure
    if isinstance(measure, str) and measure.startswith("gk:"):
        return ("gk", int(measure.split(":", 1)[1]))
    raise UnsupportedFunctional(f"unknown measure {measure!r}")


def validate_request(measure, functional, r: int):
    measure = normalize_measure(measure)
    ftag = functional[0] if isinstance(functional, tuple) else functional
    if isinstance(measure, tuple):
        k1 = measure[1]
        if not 2 <= k1 <= r:
            raise MeasureLevelMismatch(f"gk split {k1} requires 2 <= k1 <= r={r}")
    if measure == "g01":
        if ftag not in DIAG_FUNCTIONALS:
            raise UnsupportedFunctional(f"{functional!r} not valid under g01")
    elif measure == "g02":
        if ftag not in G02_FUNCTIONALS:
            raise UnsupportedFunctional(f"{functional!r} not valid under g02")
    else:
        if ftag not in TWO_REPLICA_FUNCTIONALS and ftag != "coupled":
            raise UnsupportedFunctional(f"{functional!r} not valid under {measure!r}")
    return measure, functional


@dataclass(frozen=True)
class _Resolved:
    X: np.ndarray
    Y: np.ndarray
    xn: np.ndarray
    yn: np.ndarray
    F: np.ndarray
    beta: float
    s: float
    p: float
    r: int
    mvec: tuple
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n: int
    m: int
    l: int

    def segments(self, components):
        """Slice table for a moment tuple holding the given components."""
        widths = {"Sy": self.m, "Sx": self.n, "Sn": 1, "W": self.n * self.m}
        seg, off = {}, 0
        for name in ("Sy", "Sx", "Sn", "W"):
            if name in components:
                seg[name] = slice(off, off + widths[name])
                off += widths[name]
        seg["dim"] = off
        return seg


FUNCTIONAL_COMPONENTS = {
    "xx_yty": ("Sy",),
    "xtx_yy": ("Sx",),
    "xx_yy": ("Sn",),
    "xtx_yty": ("W",),
    "coupled": ("Sy", "Sx", "Sn", "W"),
}


def resolve(cfg: ProblemConfig) -> _Resolved:
    cfg.validated()
    ens = cfg.ensemble
    coeffs = cfg.coefficients()
    mvec = cfg.schedule.mvec
    if any(v <= 0 for v in mvec[1:-1]):
        raise DegenerateM("interior m entries must be strictly positive")
    return _Resolved(
        X=ens.xs,
        Y=ens.ys,
        xn=ens.xnorms,
        yn=ens.ynorms,
        F=ens.tilt_table(),
        beta=cfg.scalars.beta,
        s=cfg.scalars.s,
        p=cfg.scalars.p_exp,
        r=cfg.schedule.r,
        mvec=mvec,
        a=coeffs.a,
        b=coeffs.b,
        c=coeffs.c,
        n=ens.n,
        m=ens.m,
        l=ens.l,
    )


def psi_normalizer(ec: _Resolved) -> float:
    return ec.p * abs(ec.s) * np.sqrt(ec.n) * ec.mvec[ec.r]


def _contract(va, vb, functional, seg_a, seg_b=None):
    """Contract two replica tuples per the requested functional.

    The two sides may carry differently laid out tuples; each side's segment
    table locates its components.
    """
    seg_b = seg_a if seg_b is None else seg_b
    ftag = functional[0] if isinstance(functional, tuple) else functional

    def dot(name):
        return (va[..., seg_a[name]] * vb[..., seg_b[name]]).sum(-1)

    if ftag == "xx_yty":
        return dot("Sy")
    if ftag == "xtx_yy":
        return dot("Sx")
    if ftag == "xx_yy":
        return dot("Sn")
    if ftag == "xtx_yty":
        return dot("W")
    if ftag == "coupled":
        _, pc, qc = functional
        return pc * qc * dot("Sn") - pc * dot("Sy") - qc * dot("Sx") + dot("W")
    raise UnsupportedFunctional(f"{functional!r} is not a two-replica functional")


class _BottomPass:
    """Reduced bottom-level quantities for one (chain base, level-1 batch)."""

    __slots__ = ("logEZ", "logz1", "gamma00", "V", "V3", "scalars", "seg")

    def __init__(self, logEZ, logz1, gamma00, V, V3, scalars, seg):
        self.logEZ = logEZ  # (R, l3)
        self.logz1 = logz1  # (R,)
        self.gamma00 = gamma00  # (R, l3)
        self.V = V  # branch tuple (R, D) or None
        self.V3 = V3  # per-i3 tuple (R, l3, D) or None
        self.scalars = scalars  # name -> (R,) bottom value
        self.seg = seg


def _bottom_pass(ec, base_rows, u4, u2, h, t, decoupled, needs, chunk_elems=24_000_000):
    """Reduce the level-1 batch under every upper node (row).

    base_rows: (R, l, l) exponent bases; u4/u2/h: (R, N1, ...) level-1 draws.
    Moment components are only materialized when some request needs them;
    the heavy contractions run as batched matrix products.
    """
    R = base_rows.shape[0]
    n1 = u4.shape[1]
    l = ec.l
    m1 = ec.mvec[1]
    components = tuple(needs.get("components", ()))
    need_tuple = bool(components)
    need_scalars = tuple(needs.get("scalars", ()))
    g1_functionals = needs.get("g1_functionals", {})
    seg = ec.segments(components)
    dim = seg["dim"]
    per_row = n1 * l * max(l, dim if (need_tuple or need_scalars) else 0, 4)
    rows_per_chunk = max(1, int(chunk_elems // max(1, per_row)))
    out_logEZ = np.empty((R, l))
    out_logz1 = np.empty(R)
    out_V3 = np.empty((R, l, dim)) if need_tuple else None
    out_scalars = {name: np.empty(R) for name in need_scalars}
    xn2 = ec.xn**2
    for lo in range(0, R, rows_per_chunk):
        hi = min(R, lo + rows_per_chunk)
        contrib1 = level_contribution(
            t, ec.a[0], ec.b[0], ec.c[0], u4[lo:hi], u2[lo:hi], h[lo:hi],
            ec.X, ec.Y, ec.xn, ec.yn, decoupled=decoupled,
        )
        E = base_rows[lo:hi, None, :, :] + contrib1  # (a, s, l1, l2)
        E *= ec.beta
        lcb = logsumexp(E, axis=-1)  # (a, s, l1)
        logC = lcb[..., :, None] + ec.beta * ec.F  # (a, s, l1, l3)
        logZ = logsumexp(ec.s * logC, axis=-2)  # (a, s, l3)
        logEZ = logmeanexp(m1 * logZ, axis=1)  # (a, l3)
        out_logEZ[lo:hi] = logEZ
        out_logz1[lo:hi] = logsumexp(ec.p * logEZ, axis=-1)
        if not (need_tuple or need_scalars):
            continue
        uw = softmax(m1 * logZ, axis=1)  # (a, s, l3)
        gamma00 = softmax(ec.p * logEZ, axis=-1)  # (a, l3)
        om2 = np.exp(E - lcb[..., :, None])  # i2 | i1
        om1T = np.exp(ec.s * logC - logZ[..., None, :]).swapaxes(-1, -2)  # (a,s,l3,l1)
        ybar = om2 @ ec.Y  # (a, s, l1, m)
        ynbar = om2 @ ec.yn  # (a, s, l1)
        tup = None
        if need_tuple:
            parts = []
            if "Sy" in seg:
                parts.append(om1T @ (ec.xn[:, None] * ybar))
            if "Sx" in seg:
                parts.append(om1T @ (ynbar[..., None] * ec.X))
            if "Sn" in seg:
                parts.append(om1T @ (ec.xn * ynbar)[..., None])
            if "W" in seg:
                k = (ec.X[:, :, None] * ybar[..., None, :]).reshape(
                    ybar.shape[:3] + (ec.n * ec.m,)
                )
                parts.append(om1T @ k)
            tup = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)
            # tup: (a, s, l3, dim)
            out_V3[lo:hi] = np.einsum("asc,ascd->acd", uw, tup)
        for name in need_scalars:
            if name.startswith("g1:"):
                stat = _contract(tup, tup, g1_functionals[name], seg)  # (a, s, l3)
            elif name == "x2y2":
                y2bar = om2 @ (ec.yn**2)
                stat = (om1T @ (xn2 * y2bar)[..., None])[..., 0]
            elif name == "x2_yty":
                stat = (om1T @ (xn2 * (ybar * ybar).sum(-1))[..., None])[..., 0]
            elif name == "x2_yy":
                stat = (om1T @ (xn2 * ynbar**2)[..., None])[..., 0]
            else:
                raise UnsupportedFunctional(name)
            val3 = (uw * stat).sum(axis=1)  # (a, l3)
            out_scalars[name][lo:hi] = (gamma00 * val3).sum(-1)
    gamma00 = softmax(ec.p * out_logEZ, axis=-1)
    V = None
    if need_tuple:
        V = (gamma00[..., None] * out_V3).sum(axis=1)
    return _BottomPass(out_logEZ, out_logz1, gamma00, V, out_V3, out_scalars, seg)


class _OuterEval:
    """All chains, bottom passes and folds for a single outer sample."""

    def __init__(self, ec, t, counts, okey, decoupled=False):
        self.ec = ec
        self.t = t
        self.counts = counts  # (N1, ..., N_{r+1})
        self.okey = okey
        self.decoupled = decoupled
        r = ec.r
        self.tree_shape = tuple(counts[k - 1] for k in range(r, 1, -1))  # levels r..2
        self.R = int(np.prod(self.tree_shape)) if self.tree_shape else 1
        G = sample_G(okey, ec.n, ec.m)
        u4, u2, h = sample_level(okey, r + 1, (ec.n, ec.m))
        base = np.sqrt(t) * bilinear_term(G, ec.X, ec.Y)
        base = base + level_contribution(
            t, ec.a[r], ec.b[r], ec.c[r], u4, u2, h, ec.X, ec.Y, ec.xn, ec.yn,
            decoupled=decoupled,
        )
        self.base0 = base
        self._tree_contribs = {}
        self._bases = {}
        self._level1 = {}
        self._passes = {}

    def _tree_contrib(self, k: int, batch: int):
        key = (k, batch)
        if key not in self._tree_contribs:
            ec, r = self.ec, self.ec.r
            shape_k = tuple(self.counts[j - 1] for j in range(r, k - 1, -1))
            u4, u2, h = sample_level_batch(
                self.okey, k, shape_k, (ec.n, ec.m), batch=batch
            )
            self._tree_contribs[key] = level_contribution(
                self.t, ec.a[k - 1], ec.b[k - 1], ec.c[k - 1], u4, u2, h,
                ec.X, ec.Y, ec.xn, ec.yn, decoupled=self.decoupled,
            )
        return self._tree_contribs[key]

    def base_rows(self, b_levels: frozenset):
        """Exponent bases (R, l, l) with chain-B draws at the given levels."""
        if b_levels not in self._bases:
            ec, r = self.ec, self.ec.r
            l = ec.l
            if self.tree_shape:
                base = np.broadcast_to(self.base0, self.tree_shape + (l, l)).copy()
            else:
                base = self.base0[None, :, :].copy()
            for k in range(r, 1, -1):
                batch = 1 if k in b_levels else 0
                contrib = self._tree_contrib(k, batch)
                pad = (1,) * (k - 2)
                base += contrib.reshape(contrib.shape[: r - k + 1] + pad + (l, l))
            self._bases[b_levels] = base.reshape(self.R, l, l)
        return self._bases[b_levels]

    def level1_arrays(self, batch: int):
        if batch not in self._level1:
            ec = self.ec
            shape = self.tree_shape + (self.counts[0],)
            u4, u2, h = sample_level_batch(self.okey, 1, shape, (ec.n, ec.m), batch=batch)
            n1 = self.counts[0]
            self._level1[batch] = (
                u4.reshape(self.R, n1),
                u2.reshape(self.R, n1, ec.m),
                h.reshape(self.R, n1, ec.n),
            )
        return self._level1[batch]

    def bottom(self, b_levels: frozenset, batch: int, needs) -> _BottomPass:
        key = (
            b_levels,
            batch,
            tuple(needs.get("components", ())),
            tuple(sorted(needs.get("scalars", ()))),
        )
        if key not in self._passes:
            u4, u2, h = self.level1_arrays(batch)
            self._passes[key] = _bottom_pass(
                self.ec, self.base_rows(b_levels), u4, u2, h, self.t,
                self.decoupled, needs,
            )
        return self._passes[key]

    # -- folding -------------------------------------------------------

    def to_tree(self, flat, n_trailing=0):
        trailing = flat.shape[flat.ndim - n_trailing:] if n_trailing else ()
        return flat.reshape(self.tree_shape + tuple(trailing))

    def fold_up(self, vals, logz, from_level=2, upto=None, n_trailing=0):
        """Weighted fold of per-node values through levels [from_level, upto].

        vals has the tree axes for levels r..from_level (outermost first) plus
        n_trailing component axes; logz matches vals without the trailing axes
        and holds log zeta_{from_level - 1} per node.  Returns the folded
        values and log zeta_{upto}.
        """
        mv = self.ec.mvec
        upto = self.ec.r if upto is None else upto
        for k in range(from_level, upto + 1):
            ratio = mv[k] / mv[k - 1]
            w = softmax(ratio * logz, axis=-1)
            wexp = w.reshape(w.shape + (1,) * n_trailing)
            vals = (wexp * vals).sum(axis=-1 - n_trailing)
            logz = logmeanexp(ratio * logz, axis=-1)
        return vals, logz

    def fold_logz(self, logz_flat, upto=None):
        mv = self.ec.mvec
        upto = self.ec.r if upto is None else upto
        logz = self.to_tree(logz_flat)
        for k in range(2, upto + 1):
            logz = logmeanexp(mv[k] / mv[k - 1] * logz, axis=-1)
        return logz


def _needs_for(requests):
    """Union of bottom-pass requirements across all requests."""
    need = {("A", 0): {"components": set(), "scalars": set(), "g1_functionals": {}}}

    def ensure(key):
        if key not in need:
            need[key] = {"components": set(), "scalars": set(), "g1_functionals": {}}
        return need[key]

    def comps(functional):
        ftag = functional[0] if isinstance(functional, tuple) else functional
        return FUNCTIONAL_COMPONENTS[ftag]

    for req in requests:
        if req == ("psi",):
            continue
        _, measure, functional = req
        if measure == "g01":
            need[("A", 0)]["scalars"].add("x2y2")
        elif measure == "g02":
            ftag = functional if isinstance(functional, str) else functional[0]
            need[("A", 0)]["scalars"].add(ftag)
        elif measure == "g1":
            name = "g1:" + _fname(functional)
            need[("A", 0)]["scalars"].add(name)
            need[("A", 0)]["g1_functionals"][name] = functional
            need[("A", 0)]["components"].update(comps(functional))
        elif measure in ("g21", "g22"):
            need[("A", 0)]["components"].update(comps(functional))
            ensure(("A", 1))["components"].update(comps(functional))
        else:  # ("gk", k1)
            k1 = measure[1]
            need[("A", 0)]["components"].update(comps(functional))
            ensure((("B", k1), 1))["components"].update(comps(functional))
    for cfg in need.values():
        cfg["components"] = tuple(
            c for c in ("Sy", "Sx", "Sn", "W") if c in cfg["components"]
        )
    return need


def _fname(functional):
    if isinstance(functional, tuple):
        return ":".join(str(x) for x in functional)
    return functional


def request_id(req):
    if req == ("psi",):
        return "psi"
    _, measure, functional = req
    mt = measure if isinstance(measure, str) else f"gk:{measure[1]}"
    return f"{mt}|{_fname(functional)}"


def eval_outer_sample(ec, t, counts, okey, requests, decoupled=False):
    """Return {request_id: value} for one outer sample."""
    ev = _OuterEval(ec, t, counts, okey, decoupled=decoupled)
    needs = _needs_for(requests)
    out = {}

    passA = ev.bottom(frozenset(), 0, needs[("A", 0)])
    logz_treeA = ev.to_tree(passA.logz1)
    logzA_full = ev.fold_logz(passA.logz1)

    pooled_cache = {}

    def pooled_bottom(other):
        key = id(other)
        if key not in pooled_cache:
            logEZ = np.logaddexp(passA.logEZ, other.logEZ) - LN2
            logz1 = logsumexp(ec.p * logEZ, axis=-1)
            gamma00 = softmax(ec.p * logEZ, axis=-1)
            pooled_cache[key] = (logz1, gamma00)
        return pooled_cache[key]

    for req in requests:
        rid = request_id(req)
        if req == ("psi",):
            out[rid] = float(logzA_full) / psi_normalizer(ec)
            continue
        _, measure, functional = req
        if measure in ("g01", "g02", "g1"):
            if measure == "g1":
                name = "g1:" + _fname(functional)
            elif measure == "g01":
                name = "x2y2"
            else:
                name = functional if isinstance(functional, str) else functional[0]
            vals, _ = ev.fold_up(ev.to_tree(passA.scalars[name]), logz_treeA)
            out[rid] = float(vals)
        elif measure == "g21":
            passB = ev.bottom(frozenset(), 1, needs[("A", 1)])
            v = _contract(passA.V, passB.V, functional, passA.seg, passB.seg)
            logz1_pool, _ = pooled_bottom(passB)
            vals, _ = ev.fold_up(ev.to_tree(v), ev.to_tree(logz1_pool))
            out[rid] = float(vals)
        elif measure == "g22":
            passB = ev.bottom(frozenset(), 1, needs[("A", 1)])
            v3 = _contract(passA.V3, passB.V3, functional, passA.seg, passB.seg)
            logz1_pool, gamma00_pool = pooled_bottom(passB)
            v = (gamma00_pool * v3).sum(-1)
            vals, _ = ev.fold_up(ev.to_tree(v), ev.to_tree(logz1_pool))
            out[rid] = float(vals)
        else:  # ("gk", k1): branches split at level k1
            k1 = measure[1]
            passB = ev.bottom(frozenset(range(2, k1 + 1)), 1, needs[(("B", k1), 1)])
            va, logzA = ev.fold_up(
                ev.to_tree(passA.V, 1), logz_treeA, upto=k1, n_trailing=1
            )
            vb, logzB = ev.fold_up(
                ev.to_tree(passB.V, 1), ev.to_tree(passB.logz1), upto=k1, n_trailing=1
            )
            v = _contract(va, vb, functional, passA.seg, passB.seg)
            logz_pool = np.logaddexp(logzA, logzB) - LN2
            vals, _ = ev.fold_up(v, logz_pool, from_level=k1 + 1)
            out[rid] = float(vals)
    return out


def thread_count() -> int:
    raw = os.environ.get("SFL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def outer_values(cfg: ProblemConfig, t, counts, seed, requests, decoupled=False):
    """Per-outer-sample values for every request: {request_id: (N_outer,) array}.

    A pure function of (cfg, t, counts, seed, requests); the thread count only
    partitions the loop.
    """
    ec = resolve(cfg)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    requests = list(requests)
    if len(counts) != ec.r + 1:
        raise ValueError(f"plan has {len(counts)} levels, schedule needs {ec.r + 1}")
    n_outer = counts[-1]
    root = StreamKey(seed)

    def one(o):
        okey = root.child(OUTER, o)
        return eval_outer_sample(ec, t, counts, okey, requests, decoupled=decoupled)

    workers = thread_count()
    if workers == 1:
        rows = [one(o) for o in range(n_outer)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, range(n_outer)))
    return {
        request_id(req): np.array([row[request_id(req)] for row in rows])
        for req in requests
    }
