"""Gibbs-type configuration measures and overlap expectations.

The supported overlap functionals are contractions of per-replica linear
statistics (an exact algebraic identity, not an approximation), which drops
the cost from O(l^6) six-index sums to O(l^3 (n + m)) moment accumulations:

    xx_yty    |x_i1| |x_p1| y_p2^T y_i2
    xtx_yy    x_p1^T x_i1 |y_i2| |y_p2|
    xx_yy     |x_i1| |x_p1| |y_i2| |y_p2|        (the all-norms functional)
    xtx_yty   x_p1^T x_i1 y_p2^T y_i2
    coupled   (pc |x||x'| - x'^T x)(qc |y||y'| - y'^T y), parameters (pc, qc)
    x2y2      |x_i1|^2 |y_i2|^2                  (diagonal, single replica)
    x2_yty    |x_i1|^2 y_p2^T y_i2               (shared i1)
    x2_yy     |x_i1|^2 |y_i2| |y_p2|             (shared i1)

Measures: g01, g02, g1 (single chain), g21 (alias g2), g22 and ('gk', k1)
with two replica chains.  Self-normalized weights carry an O(1/N) ratio bias;
it is documented and bounded by the quadrature oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _engine
from .model import ProblemConfig
from .nested import EstimateWithError, SamplePlan, summarize
from .numutil import softmax
from .randomness import OUTER, StreamKey

FUNCTIONALS = (
    "xx_yty",
    "xtx_yy",
    "xx_yy",
    "xtx_yty",
    "x2y2",
    "x2_yty",
    "x2_yy",
)

MEASURES = ("g01", "g02", "g1", "g21", "g2", "g22")


def coupled(pcoef: float, qcoef: float):
    """The product functional used by the time-derivative and stationarity forms."""
    return ("coupled", float(pcoef), float(qcoef))


@dataclass(frozen=True)
class BaseWeights:
    """Per-draw base measures: gamma00 over i3 and gamma0 over (i1, i2; i3)."""

    gamma00: np.ndarray  # (l,)
    gamma0: np.ndarray  # (l, l, l) indexed [i1, i2, i3]


def base_weights(logpart, tensor, scalars, log_inner_means=None, m1: float = 1.0) -> BaseWeights:
    """Normalized base measures for one draw, computed in the log domain.

    gamma0(i1, i2; i3) = (C^s / Z) (A / C).  gamma00 uses the provided log
    inner means of Z^{m1} when available; otherwise the single-draw surrogate
    Z^{m1} stands in for the inner mean.
    """
    s = scalars.s
    beta = scalars.beta
    logA = beta * tensor.d0  # (i1, i2, i3)
    log_gamma0 = (
        (s - 1.0) * logpart.logC[:, None, :]
        + logA
        - logpart.logZ[None, None, :]
    )
    gamma0 = np.exp(log_gamma0)
    if log_inner_means is None:
        source = m1 * logpart.logZ
    else:
        source = np.asarray(log_inner_means, dtype=float)
    gamma00 = softmax(scalars.p_exp * source)
    return BaseWeights(gamma00=gamma00, gamma0=gamma0)


def overlap_requests(requests, r: int):
    """Validate and normalize a list of (measure, functional) pairs."""
    out = []
    for measure, functional in requests:
        measure, functional = _engine.validate_request(measure, functional, r)
        out.append(("ov", measure, functional))
    return out


def overlap_outer_values(
    cfg: ProblemConfig,
    t: float,
    plan: SamplePlan,
    seed: int,
    requests,
    include_psi: bool = False,
):
    """Per-outer-sample values for several (measure, functional) requests.

    All requests share one traversal (common random numbers), so linear
    combinations formed per outer sample carry the right covariances.
    Returns {request_id: (N_outer,) array}; the id of (measure, functional)
    is given by :func:`request_key`.
    """
    plan = plan.for_r(cfg.schedule.r)
    reqs = overlap_requests(requests, cfg.schedule.r)
    if include_psi:
        reqs = [("psi",)] + reqs
    return _engine.outer_values(cfg, t, plan.counts, seed, reqs)


def request_key(measure, functional) -> str:
    measure = _engine.normalize_measure(measure)
    return _engine.request_id(("ov", measure, functional))


def overlap_expectation(
    measure,
    functional,
    cfg: ProblemConfig,
    t: float,
    plan: SamplePlan,
    seed: int = 0,
) -> EstimateWithError:
    """Estimate one overlap functional under one measure."""
    vals = overlap_outer_values(cfg, t, plan, seed, [(measure, functional)])
    return summarize(vals[request_key(measure, functional)], plan, seed)


def materialize_outer(
    cfg: ProblemConfig, t: float, plan: SamplePlan, seed: int, outer_index: int
):
    """Expose one outer sample's raw evaluation state for oracle cross-checks.

    Returns the resolved arrays, the per-chain exponent bases and the level-1
    draws, so an independent implementation can recompute any measure from
    the raw definitions on identical randomness.
    """
    ec = _engine.resolve(cfg)
    plan = plan.for_r(cfg.schedule.r)
    okey = StreamKey(seed).child(OUTER, outer_index)
    ev = _engine._OuterEval(ec, t, plan.counts, okey)
    return ec, ev


def phi_u1_weights(ec, logZ: np.ndarray) -> np.ndarray:
    """Bottom reweighting: samples j weighted by Z_i3^{m1}, normalized per i3."""
    return softmax(ec.mvec[1] * logZ, axis=0)


def level_weights(ec, log_zeta_prev: np.ndarray, k: int) -> np.ndarray:
    """Level-k reweighting: zeta_{k-1}^{m_k / m_{k-1}} normalized over the batch."""
    ratio = ec.mvec[k] / ec.mvec[k - 1]
    return softmax(ratio * np.asarray(log_zeta_prev, dtype=float), axis=-1)
