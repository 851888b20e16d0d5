"""Nested estimators for the multilevel functional and its decoupled variant.

The estimator is deliberately simple: plain nested Monte Carlo with the inner
means raised to powers, which is biased at finite sample counts.  Sample
counts are exposed per level and the bias is documented rather than debiased;
acceptance rests on closed-form and quadrature oracles, not on vanishing bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _engine
from .errors import DegenerateM, DimensionTooLarge
from .hamiltonian import exponent_base
from .model import ProblemConfig
from .numutil import logmeanexp, logsumexp
from .randomness import GaussianBlock, StreamKey, sample_level_batch

QUADRATURE_MAX_DIM = 12


def gaussian_dimension(cfg: ProblemConfig) -> int:
    n, m, r = cfg.ensemble.n, cfg.ensemble.m, cfg.schedule.r
    return m * n + (r + 1) * (1 + m + n)


@dataclass(frozen=True)
class SamplePlan:
    """Per-level sample counts N[k], k = 1..r+1; the last entry is the outer
    sample count.  Backend 'quadrature' replaces sampling with deterministic
    Gauss-Hermite sums (oracle-grade, small dimensions only)."""

    counts: tuple
    backend: str = "monte-carlo"
    nodes: int = 20

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.backend not in ("monte-carlo", "quadrature"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if any(c < 2 for c in self.counts):
            raise ValueError("every level needs at least 2 samples")

    @classmethod
    def parse(cls, text: str) -> "SamplePlan":
        return cls(counts=tuple(int(x) for x in str(text).split(",")))

    def for_r(self, r: int) -> "SamplePlan":
        """Truncate or validate the plan against a lifting level."""
        if len(self.counts) < r + 1:
            raise ValueError(f"plan has {len(self.counts)} levels, need {r + 1}")
        return SamplePlan(self.counts[: r + 1], self.backend, self.nodes)


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    plan: SamplePlan = None
    seed: int = None
    n_outer: int = 0

    def __repr__(self):
        return f"EstimateWithError({self.value:.8g} +- {self.std_error:.3g})"


def summarize(values: np.ndarray, plan, seed) -> EstimateWithError:
    values = np.asarray(values, dtype=float)
    n = values.size
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EstimateWithError(float(values.mean()), se, plan, seed, n)


@dataclass(frozen=True)
class Zeta1Estimate:
    """First-level recursion value for one draw of the upper randomness."""

    log_zeta1: float
    log_inner_means: np.ndarray  # per i3, log of the inner mean of Z^{m1}
    n_inner: int


def estimate_zeta1(
    cfg: ProblemConfig,
    t: float,
    upper: GaussianBlock,
    n_inner: int,
    key: StreamKey,
    decoupled: bool = False,
    inner_draws=None,
) -> Zeta1Estimate:
    """log zeta_1 = log sum_i3 (mean_j Z_i3^{m1})^p for one upper draw.

    The same n_inner level-1 draws are shared across all i3: the i3 terms
    differ only through the tilt, so common inner randomness matches the
    probability structure and reduces variance.  ``inner_draws`` may inject an
    explicit (u4, u2, h) batch, e.g. for degenerate-sample tests.
    """
    ec = _engine.resolve(cfg)
    m1 = ec.mvec[1]
    base = exponent_base(cfg, _upper_only(upper, cfg), t, decoupled=decoupled)
    if inner_draws is None:
        u4, u2, h = sample_level_batch(key, 1, (n_inner,), (ec.n, ec.m))
    else:
        u4, u2, h = (np.asarray(a, dtype=float) for a in inner_draws)
        n_inner = u4.shape[0]
    from .hamiltonian import level_contribution

    contrib = level_contribution(
        t, ec.a[0], ec.b[0], ec.c[0], u4, u2, h, ec.X, ec.Y, ec.xn, ec.yn,
        decoupled=decoupled,
    )
    E = base[None, :, :] + contrib
    lcb = logsumexp(ec.beta * E, axis=-1)
    logC = lcb[..., :, None] + ec.beta * ec.F
    logZ = logsumexp(ec.s * logC, axis=-2)  # (n_inner, l3)
    log_inner = logmeanexp(m1 * logZ, axis=0)
    log_zeta1 = float(logsumexp(ec.p * log_inner, axis=-1))
    return Zeta1Estimate(log_zeta1, log_inner, n_inner)


def _upper_only(block: GaussianBlock, cfg: ProblemConfig) -> GaussianBlock:
    """Zero out the level-1 entries so the base holds levels 2..r+1 plus G."""
    u4 = block.u4.copy()
    u2 = block.u2.copy()
    h = block.h.copy()
    u4[0] = 0.0
    u2[0] = 0.0
    h[0] = 0.0
    return GaussianBlock(G=block.G, u4=u4, u2=u2, h=h)


def psi_outer_values(
    cfg: ProblemConfig, t: float, plan: SamplePlan, seed: int, decoupled: bool = False
) -> np.ndarray:
    """Per-outer-sample values of the normalized log functional."""
    plan = plan.for_r(cfg.schedule.r)
    vals = _engine.outer_values(
        cfg, t, plan.counts, seed, [("psi",)], decoupled=decoupled
    )
    return vals["psi"]


def estimate_psi(
    cfg: ProblemConfig, t: float, plan: SamplePlan, seed: int = 0
) -> EstimateWithError:
    """Nested estimate of the interpolating functional at time t."""
    if cfg.schedule.mvec[cfg.schedule.r] <= 0:
        raise DegenerateM("m_r must be positive (it normalizes the functional)")
    if plan.backend == "quadrature":
        from .oracles import quadrature_psi

        if gaussian_dimension(cfg) > QUADRATURE_MAX_DIM:
            raise DimensionTooLarge(
                f"Gaussian dimension {gaussian_dimension(cfg)} > {QUADRATURE_MAX_DIM}"
            )
        res = quadrature_psi(cfg, t, nodes=plan.nodes)
        return EstimateWithError(res.value, 0.0, plan, seed, 0)
    plan = plan.for_r(cfg.schedule.r)
    return summarize(psi_outer_values(cfg, t, plan, seed), plan, seed)


def estimate_psi_S(
    cfg: ProblemConfig, t: float, plan: SamplePlan, seed: int = 0
) -> EstimateWithError:
    """Same functional with the coupled u4 term removed from the exponent."""
    if plan.backend == "quadrature":
        from .oracles import quadrature_psi

        if gaussian_dimension(cfg) > QUADRATURE_MAX_DIM:
            raise DimensionTooLarge(
                f"Gaussian dimension {gaussian_dimension(cfg)} > {QUADRATURE_MAX_DIM}"
            )
        res = quadrature_psi(cfg, t, nodes=plan.nodes, decoupled=True)
        return EstimateWithError(res.value, 0.0, plan, seed, 0)
    plan = plan.for_r(cfg.schedule.r)
    return summarize(psi_outer_values(cfg, t, plan, seed, decoupled=True), plan, seed)
