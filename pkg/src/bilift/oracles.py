"""Independent reference values: closed forms, quadrature, naive enumeration.

Everything here is coded against the raw definitions and deliberately avoids
the estimator code paths (anti-circularity).  The only shared layer is the
stream-key convention, which is the public randomness contract: the naive
enumerator must see the identical draws the estimator saw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionTooLarge, UnsupportedFunctional
from .model import ProblemConfig, omega, sgn
from .nested import QUADRATURE_MAX_DIM, SamplePlan, gaussian_dimension
from .numutil import logsumexp, softmax
from .randomness import OUTER, StreamKey, sample_G, sample_level, sample_level_batch


@dataclass(frozen=True)
class OracleResult:
    value: float
    method: str


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def psi_beta0(cfg: ProblemConfig) -> OracleResult:
    """At beta = 0 the partition sum is the constant l^(s+1), so the whole
    recursion telescopes:  psi = (1 + (s+1) m1 p) log(l) / (p |s| sqrt(n) m1).
    """
    if cfg.scalars.beta != 0.0:
        raise ValueError("closed form requires beta = 0")
    l = cfg.ensemble.l
    s, p = cfg.scalars.s, cfg.scalars.p_exp
    m1 = cfg.schedule.mvec[1]
    n = cfg.ensemble.n
    value = (1.0 + (s + 1.0) * m1 * p) * math.log(l) / (p * abs(s) * math.sqrt(n) * m1)
    return OracleResult(value, "closed-form-beta0")


def psi_l1(cfg: ProblemConfig, t: float, decoupled: bool = False) -> OracleResult:
    """Single-configuration closed form via the level-by-level Gaussian MGF.

    With one configuration the exponent is Gaussian with mean equal to the
    tilt value f and a per-level variance v_k = |x|^2 |y|^2 [(1-t)(b_k^2 +
    c_k^2) + t a_k^2].  Each level's randomness enters linearly, so raising
    inner means to powers telescopes through MGFs; the outer level drops out
    (zero mean inside the log) and the first level keeps weight 1 while
    deeper levels pick up the outer exponent p:

        psi = sign(s) beta f / sqrt(n)
            + sign(s) s beta^2 / (2 sqrt(n)) * sum_{k=1..r} omega(k; p) m_k v_k.
    """
    ens = cfg.ensemble
    if ens.l != 1:
        raise ValueError("closed form requires l = 1")
    coeffs = cfg.coefficients()
    beta, s, p = cfg.scalars.beta, cfg.scalars.s, cfg.scalars.p_exp
    n = ens.n
    r = cfg.schedule.r
    mvec = cfg.schedule.mvec
    S = float(ens.xnorms[0] ** 2 * ens.ynorms[0] ** 2)
    f = float(ens.tilt_table()[0, 0])
    acc = 0.0
    for k in range(1, r + 1):
        vk = (1.0 - t) * (coeffs.b[k - 1] ** 2 + coeffs.c[k - 1] ** 2)
        if not decoupled:
            vk += t * coeffs.a[k - 1] ** 2
        acc += omega(k, p) * mvec[k] * S * vk
    value = sgn(s) * beta * f / math.sqrt(n) + sgn(s) * s * beta**2 / (2.0 * math.sqrt(n)) * acc
    return OracleResult(value, "closed-form-l1")


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature
# ---------------------------------------------------------------------------


def _gh(nodes: int):
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / w.sum()


def _quad_workers() -> int:
    import os

    raw = os.environ.get("SFL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            return 1
    return max(1, min(4, os.cpu_count() or 1))


class _QuadModel:
    """Per-level node systems: additive (l, l) exponent contributions."""

    def __init__(self, cfg: ProblemConfig, t: float, nodes: int, decoupled: bool):
        ens = cfg.ensemble
        coeffs = cfg.coefficients()
        self.cfg = cfg
        self.t = t
        self.beta = cfg.scalars.beta
        self.s = cfg.scalars.s
        self.p = cfg.scalars.p_exp
        self.mvec = cfg.schedule.mvec
        self.r = cfg.schedule.r
        self.l = ens.l
        self.F = ens.tilt_table()
        self.nodes = nodes
        X, Y = ens.xs, ens.ys
        xn, yn = ens.xnorms, ens.ynorms
        st, s1t = math.sqrt(t), math.sqrt(1.0 - t)
        self.xq, self.wq = _gh(nodes)

        def units_level(k):
            units = []
            if not decoupled:
                units.append(st * coeffs.a[k - 1] * np.outer(xn, yn))
            for d in range(ens.m):
                units.append(s1t * coeffs.b[k - 1] * np.outer(xn, Y[:, d]))
            for d in range(ens.n):
                units.append(s1t * coeffs.c[k - 1] * np.outer(X[:, d], yn))
            return units

        g_units = [
            st * np.outer(X[:, b], Y[:, a])
            for a in range(ens.m)
            for b in range(ens.n)
        ]
        self.outer_rows, self.outer_logw = self._system(g_units + units_level(self.r + 1))
        self.level_rows = {}
        self.level_logw = {}
        for k in range(1, self.r + 1):
            self.level_rows[k], self.level_logw[k] = self._system(units_level(k))

    def _system(self, units):
        rows = np.zeros((1, self.l, self.l))
        logw = np.zeros(1)
        for unit in units:
            contrib = self.xq[:, None, None] * unit[None, :, :]
            rows = (rows[:, None, :, :] + contrib[None, :, :, :]).reshape(-1, self.l, self.l)
            logw = (logw[:, None] + np.log(self.wq)[None, :]).reshape(-1)
        return rows, logw

    # -- log zeta_k per upper row, recursively -------------------------

    def zeta_rows(self, k: int, rows: np.ndarray, chunk_elems: int = 2_000_000) -> np.ndarray:
        if k == 1:
            return self._zeta1_rows(rows)
        sysr, logw = self.level_rows[k], self.level_logw[k]
        J = sysr.shape[0]
        ratio = self.mvec[k] / self.mvec[k - 1]
        out = np.empty(rows.shape[0])
        block = max(1, chunk_elems // max(1, J))
        for lo in range(0, rows.shape[0], block):
            hi = min(rows.shape[0], lo + block)
            expanded = (rows[lo:hi, None, :, :] + sysr[None, :, :, :]).reshape(
                -1, self.l, self.l
            )
            rec = self.zeta_rows(k - 1, expanded).reshape(hi - lo, J)
            out[lo:hi] = logsumexp(ratio * rec + logw[None, :], axis=1)
        return out

    def _zeta1_rows(self, rows: np.ndarray, block: int = None) -> np.ndarray:
        """Bottom level via a scaled matrix product over the i2 sum.

        Works in the scaled exponential domain: one matmul per i1 for the i2
        sum, then fused power operations for the s and m1 exponents.  Scale
        offsets keep every intermediate inside float64 range for the node
        magnitudes the dimension guard admits.
        """
        inner, logw = self.level_rows[1], self.level_logw[1]
        beta, s, p, m1, l = self.beta, self.s, self.p, self.mvec[1], self.l
        J = inner.shape[0]
        if block is None:
            block = max(32, int(2_000_000 // max(1, J * l)))
        so = beta * rows.max(axis=0)  # (l1, l2)
        si = beta * inner.max(axis=0)
        M1 = so + si
        Mi1 = M1.max(axis=1)  # (l1,)
        V = np.exp(beta * inner - si[None, :, :])  # (J, l1, l2)
        w = np.exp(logw)
        # log Z(i3) = log sum_i1 Cb_i1^s e^{s beta F(i1, i3)}; pull out the
        # dominant offset per i3 so the exp-domain sum stays finite.
        offs = s * (Mi1[:, None] + beta * self.F)  # (l1, l3)
        shiftZ = offs.max(axis=0)  # (l3,)
        zs_scale = np.exp(offs - shiftZ[None, :])  # (l1, l3)
        out = np.empty(rows.shape[0])

        def run_block(lo):
            hi = min(rows.shape[0], lo + block)
            U = np.exp(beta * rows[lo:hi] - so[None, :, :])
            Zs = 0.0
            for i1 in range(l):
                scale = np.exp(M1[i1] - Mi1[i1])
                prod = (U[:, i1, :] * scale[None, :]) @ V[:, i1, :].T  # (b, J)
                cbs = np.power(np.maximum(prod, 1e-280), s)
                Zs = Zs + cbs[:, :, None] * zs_scale[i1][None, None, :]
            # E_j w_j Z^{m1}: fold the shift back in the log domain
            ez = np.einsum("j,bjc->bc", w, np.power(Zs, m1))
            logEZ = np.log(np.maximum(ez, 1e-300)) + m1 * shiftZ[None, :]
            res = logsumexp(p * logEZ, axis=-1)
            if not np.all(np.isfinite(res)):
                raise FloatingPointError(
                    "quadrature bottom overflowed; reduce beta or node count"
                )
            out[lo:hi] = res

        starts = list(range(0, rows.shape[0], block))
        workers = _quad_workers()
        if workers == 1 or len(starts) == 1:
            for lo in starts:
                run_block(lo)
        else:
            # blocks are independent and write disjoint slices; scheduling
            # cannot change the values
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(run_block, starts))
        return out


def quadrature_psi(
    cfg: ProblemConfig, t: float, nodes: int = 20, decoupled: bool = False
) -> OracleResult:
    """Deterministic tensor-product Gauss-Hermite evaluation of the functional."""
    dim = gaussian_dimension(cfg)
    if dim > QUADRATURE_MAX_DIM:
        raise DimensionTooLarge(f"Gaussian dimension {dim} > {QUADRATURE_MAX_DIM}")
    qm = _QuadModel(cfg, t, nodes, decoupled)
    logz = qm.zeta_rows(qm.r, qm.outer_rows)
    norm = qm.p * abs(qm.s) * math.sqrt(cfg.ensemble.n) * qm.mvec[qm.r]
    value = float(np.sum(np.exp(qm.outer_logw) * logz) / norm)
    return OracleResult(value, "quadrature")


def quadrature_overlap(
    cfg: ProblemConfig, t: float, measure, functional, nodes: int = 12
) -> OracleResult:
    """Exact measure-weighted overlap for one-level schedules (r = 1).

    With exact conditional expectations the two replica chains coincide, so
    two-replica measures are plain products of exact inner averages; no
    independent-batch device is needed.
    """
    if cfg.schedule.r != 1:
        raise DimensionTooLarge("overlap quadrature is implemented for r = 1 only")
    dim = gaussian_dimension(cfg)
    if dim > QUADRATURE_MAX_DIM:
        raise DimensionTooLarge(f"Gaussian dimension {dim} > {QUADRATURE_MAX_DIM}")
    from ._engine import normalize_measure

    measure = normalize_measure(measure)
    if isinstance(measure, tuple):
        raise DimensionTooLarge("deep-split measures need r >= 2")
    qm = _QuadModel(cfg, t, nodes, decoupled=False)
    ens = cfg.ensemble
    X, Y = ens.xs, ens.ys
    xn, yn = ens.xnorms, ens.ynorms
    beta, s, p, m1 = qm.beta, qm.s, qm.p, qm.mvec[1]
    inner, logwi = qm.level_rows[1], qm.level_logw[1]
    rows, logwo = qm.outer_rows, qm.outer_logw
    total = 0.0
    block = max(1, 2_000_000 // max(1, inner.shape[0] * qm.l * qm.l))
    for lo in range(0, rows.shape[0], block):
        hi = min(rows.shape[0], lo + block)
        E = rows[lo:hi, None, :, :] + inner[None, :, :, :]  # (b, J, l1, l2)
        lcb = logsumexp(beta * E, axis=-1)
        logC = lcb[..., :, None] + beta * qm.F
        logZ = logsumexp(s * logC, axis=-2)  # (b, J, l3)
        logEZ = logsumexp(m1 * logZ + logwi[None, :, None], axis=1)
        gamma00 = softmax(p * logEZ, axis=-1)  # (b, l3)
        uw = softmax(m1 * logZ + logwi[None, :, None], axis=1)  # (b, J, l3)
        om2 = np.exp(beta * E - lcb[..., :, None])
        om1 = np.exp(s * logC - logZ[..., None, :])
        ybar = om2 @ Y
        ynbar = om2 @ yn
        if measure == "g01":
            y2bar = om2 @ (yn**2)
            stat = np.einsum("bjic,i,bji->bjc", om1, xn**2, y2bar)
            vals = ((uw * stat).sum(axis=1) * gamma00).sum(-1)
        elif measure == "g02":
            if functional == "x2_yty":
                stat = np.einsum("bjic,i,bji->bjc", om1, xn**2, (ybar * ybar).sum(-1))
            elif functional == "x2_yy":
                stat = np.einsum("bjic,i,bji->bjc", om1, xn**2, ynbar**2)
            else:
                raise UnsupportedFunctional(f"{functional!r} under g02")
            vals = ((uw * stat).sum(axis=1) * gamma00).sum(-1)
        else:
            sy = np.einsum("bjic,i,bjim->bjcm", om1, xn, ybar)
            sx = np.einsum("bjic,bji,io->bjco", om1, ynbar, X)
            snn = np.einsum("bjic,i,bji->bjc", om1, xn, ynbar)
            w4 = np.einsum("bjic,io,bjim->bjcom", om1, X, ybar)
            tup = np.concatenate(
                [sy, sx, snn[..., None], w4.reshape(w4.shape[:3] + (-1,))], axis=-1
            )
            if measure == "g1":
                stat = _contract_pair(tup, tup, functional, ens.n, ens.m)
                vals = ((uw * stat).sum(axis=1) * gamma00).sum(-1)
            else:
                V3 = np.einsum("bjc,bjcd->bcd", uw, tup)
                if measure == "g22":
                    stat3 = _contract_pair(V3, V3, functional, ens.n, ens.m)
                    vals = (gamma00 * stat3).sum(-1)
                else:  # g21
                    V = np.einsum("bc,bcd->bd", gamma00, V3)
                    vals = _contract_pair(V, V, functional, ens.n, ens.m)
        total += float(np.sum(np.exp(logwo[lo:hi]) * vals))
    return OracleResult(total, "quadrature")


def _contract_pair(va, vb, functional, n, m):
    segs = {
        "Sy": slice(0, m),
        "Sx": slice(m, m + n),
        "Sn": slice(m + n, m + n + 1),
        "W": slice(m + n + 1, m + n + 1 + n * m),
    }
    ftag = functional[0] if isinstance(functional, tuple) else functional
    sy = (va[..., segs["Sy"]] * vb[..., segs["Sy"]]).sum(-1)
    sx = (va[..., segs["Sx"]] * vb[..., segs["Sx"]]).sum(-1)
    sn = (va[..., segs["Sn"]] * vb[..., segs["Sn"]]).sum(-1)
    ww = (va[..., segs["W"]] * vb[..., segs["W"]]).sum(-1)
    if ftag == "xx_yty":
        return sy
    if ftag == "xtx_yy":
        return sx
    if ftag == "xx_yy":
        return sn
    if ftag == "xtx_yty":
        return ww
    if ftag == "coupled":
        _, pc, qc = functional
        return pc * qc * sn - pc * sy - qc * sx + ww
    raise UnsupportedFunctional(functional)


# ---------------------------------------------------------------------------
# naive per-draw enumeration (factorization cross-check)
# ---------------------------------------------------------------------------


def naive_overlap(
    cfg: ProblemConfig,
    t: float,
    plan: SamplePlan,
    seed: int,
    outer_index: int,
    measure,
    functional,
) -> OracleResult:
    """Per-draw measure value by direct index enumeration with explicit weights.

    Re-derives the identical randomness from the stream-key contract and
    contracts the full replica-index functional tensor in the linear domain,
    so it validates both the moment factorization and the weighting logic of
    the sampled estimator.  Small instances only (l <= 3).
    """
    from ._engine import normalize_measure

    ens = cfg.ensemble
    if ens.l > 3:
        raise ValueError("naive enumeration is limited to l <= 3")
    measure = normalize_measure(measure)
    plan = plan.for_r(cfg.schedule.r)
    counts = plan.counts
    r = cfg.schedule.r
    coeffs = cfg.coefficients()
    beta, s, p = cfg.scalars.beta, cfg.scalars.s, cfg.scalars.p_exp
    mvec = cfg.schedule.mvec
    X, Y = ens.xs, ens.ys
    xn, yn = ens.xnorms, ens.ynorms
    F = ens.tilt_table()
    okey = StreamKey(seed).child(OUTER, outer_index)
    G = sample_G(okey, ens.n, ens.m)
    u4o, u2o, ho = sample_level(okey, r + 1, (ens.n, ens.m))

    def d0_base(u4, u2, h, k):
        st, s1t = math.sqrt(t), math.sqrt(1.0 - t)
        a_k, b_k, c_k = coeffs.a[k - 1], coeffs.b[k - 1], coeffs.c[k - 1]
        yproj = np.atleast_1d(np.asarray(u2) @ Y.T)
        xproj = np.atleast_1d(np.asarray(h) @ X.T)
        out = s1t * b_k * xn[:, None] * yproj[None, :]
        out += s1t * c_k * xproj[:, None] * yn[None, :]
        out += st * a_k * u4 * np.outer(xn, yn)
        return out

    base_outer = math.sqrt(t) * (X @ G.T @ Y.T) + d0_base(u4o, u2o, ho, r + 1)

    def bottom(batch):
        """The level-1 batch exactly as the estimator drew it."""
        n1 = counts[0]
        u4, u2, h = sample_level_batch(okey, 1, _tree_shape(counts, r) + (n1,),
                                       (ens.n, ens.m), batch=batch)
        u4 = u4.reshape(-1, n1)
        u2 = u2.reshape(-1, n1, ens.m)
        h = h.reshape(-1, n1, ens.n)
        return u4, u2, h

    def bottom_state(base, u4, u2, h, row):
        n1 = counts[0]
        l = ens.l
        logZ = np.empty((n1, l))
        w1 = np.empty((n1, l, l))  # (j, i1, i3): C^s / Z
        cond = np.empty((n1, l, l))  # (j, i1, i2): A / C (i3-independent)
        for j in range(n1):
            d0 = base + d0_base(u4[row, j], u2[row, j], h[row, j], 1)
            lA = beta * d0  # (i1, i2)
            lcb = logsumexp(lA, axis=1)  # (i1,)
            logC = lcb[:, None] + beta * F  # (i1, i3)
            logZ[j] = logsumexp(s * logC, axis=0)
            w1[j] = np.exp(s * logC - logZ[j][None, :])
            cond[j] = np.exp(lA - lcb[:, None])
        logEZ = logsumexp(mvec[1] * logZ, axis=0) - math.log(n1)
        uw = softmax(mvec[1] * logZ, axis=0)  # (j, i3)
        gamma00 = softmax(p * logEZ)
        logz1 = float(logsumexp(p * logEZ))
        return logZ, w1, cond, uw, gamma00, logz1, logEZ

    if r != 1:
        raise ValueError("the naive enumerator covers r = 1; deeper trees are "
                         "validated through the identity suite")

    u4a, u2a, ha = bottom(0)
    stateA = bottom_state(base_outer, u4a, u2a, ha, 0)
    if measure in ("g1", "g21", "g22"):
        F4 = _functional_tensor(functional, X, Y, xn, yn)

    def gamma0_bar(state):
        _, w1, cond, uw, _, _, _ = state
        # mean over j under the bottom weights, per i3: (i1, i2, i3)
        g0 = w1[:, :, None, :] * cond[:, :, :, None]  # (j, i1, i2, i3)
        return np.einsum("jc,jabc->abc", uw, g0)

    if measure == "g01":
        g0b = gamma0_bar(stateA)
        F2 = np.outer(xn**2, yn**2)
        vals = np.einsum("abc,ab->c", g0b, F2)
        value = float((stateA[4] * vals).sum())
    elif measure == "g02":
        _, w1, cond, uw, gamma00, _, _ = stateA
        if functional == "x2_yty":
            F3 = np.einsum("a,cm,dm->acd", xn**2, Y, Y)
        elif functional == "x2_yy":
            F3 = np.einsum("a,c,d->acd", xn**2, yn, yn)
        else:
            raise UnsupportedFunctional(f"{functional!r} under g02")
        per_j = np.einsum("jaz,jac,jad,acd->jz", w1, cond, cond, F3)
        vals = (uw * per_j).sum(axis=0)
        value = float((gamma00 * vals).sum())
    elif measure == "g1":
        _, w1, cond, uw, gamma00, _, _ = stateA
        g0 = w1[:, :, None, :] * cond[:, :, :, None]  # (j, i1, i2, i3)
        per_j = np.einsum("jabz,jcdz,abcd->jz", g0, g0, F4)
        vals = (uw * per_j).sum(axis=0)
        value = float((gamma00 * vals).sum())
    elif measure in ("g21", "g22"):
        u4b, u2b, hb = bottom(1)
        stateB = bottom_state(base_outer, u4b, u2b, hb, 0)
        gA, gB = gamma0_bar(stateA), gamma0_bar(stateB)
        if measure == "g21":
            valA = np.einsum("z,abz->ab", stateA[4], gA)
            valB = np.einsum("z,abz->ab", stateB[4], gB)
            value = float(np.einsum("ab,cd,abcd->", valA, valB, F4))
        else:
            logEZ_pool = np.logaddexp(stateA[6], stateB[6]) - math.log(2.0)
            gamma00_pool = softmax(p * logEZ_pool)
            per_i3 = np.einsum("abz,cdz,abcd->z", gA, gB, F4)
            value = float((gamma00_pool * per_i3).sum())
    else:
        raise UnsupportedFunctional(f"naive enumeration lacks measure {measure!r}")
    return OracleResult(value, "naive-enumeration")


def _tree_shape(counts, r):
    return tuple(counts[k - 1] for k in range(r, 1, -1))


def _functional_tensor(functional, X, Y, xn, yn):
    """Full F4[i1, i2, p1, p2] tensor of a two-replica functional."""
    ftag = functional[0] if isinstance(functional, tuple) else functional
    yty = Y @ Y.T
    xtx = X @ X.T
    if ftag == "xx_yty":
        return np.einsum("i,p,qj->ijpq", xn, xn, yty)
    if ftag == "xtx_yy":
        return np.einsum("ip,j,q->ijpq", xtx, yn, yn)
    if ftag == "xx_yy":
        return np.einsum("i,p,j,q->ijpq", xn, xn, yn, yn)
    if ftag == "xtx_yty":
        return np.einsum("ip,qj->ijpq", xtx, yty)
    if ftag == "coupled":
        _, pc, qc = functional
        px = pc * np.outer(xn, xn) - xtx
        qy = qc * np.outer(yn, yn) - yty
        return np.einsum("ip,jq->ijpq", px, qy)
    raise UnsupportedFunctional(functional)
