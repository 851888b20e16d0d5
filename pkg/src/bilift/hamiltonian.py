"""Interpolating exponent tensor and log-domain partition objects.

The exponent for one randomness draw is, entrywise over (i1, i2, i3),

    d0 = sqrt(t) y_i2^T G x_i1
       + sqrt(1-t) |x_i1| y_i2^T (sum_k b_k u2_k)
       + sqrt(t) |x_i1| |y_i2| (sum_k a_k u4_k)
       + sqrt(1-t) |y_i2| (sum_k c_k h_k)^T x_i1
       + tilt(i1, i3),

with k running over 1..r+1.  The decoupled variant drops the u4 term.  All
partition arithmetic stays in the log domain: exponents of size beta*d0 in the
hundreds are routine even at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import ProblemConfig
from .numutil import logsumexp
from .randomness import GaussianBlock


@dataclass(frozen=True)
class ExponentTensor:
    """d0[i1, i2, i3] for one draw, at interpolation time t."""

    d0: np.ndarray
    t: float


@dataclass(frozen=True)
class LogPartitionTensor:
    """log C[i1, i3] and log Z[i3] for one draw."""

    logC: np.ndarray
    logZ: np.ndarray


def bilinear_term(G: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """(i1, i2) matrix of y_i2^T G x_i1."""
    return (xs @ G.T) @ ys.T


def level_contribution(
    t: float,
    a_k: float,
    b_k: float,
    c_k: float,
    u4,
    u2,
    h,
    xs: np.ndarray,
    ys: np.ndarray,
    xnorm: np.ndarray,
    ynorm: np.ndarray,
    decoupled: bool = False,
) -> np.ndarray:
    """One level's additive contribution to the exponent, (..., i1, i2).

    Accepts a single draw (u4 scalar, u2 (m,), h (n,)) or a batch with leading
    sample axes.
    """
    u4 = np.asarray(u4, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    h = np.asarray(h, dtype=float)
    st = np.sqrt(t)
    s1t = np.sqrt(1.0 - t)
    yproj = u2 @ ys.T  # (..., i2)
    xproj = h @ xs.T  # (..., i1)
    out = s1t * b_k * (xnorm[:, None] * yproj[..., None, :])
    out = out + s1t * c_k * (xproj[..., :, None] * ynorm)
    if not decoupled:
        out = out + st * a_k * (u4[..., None, None] * np.outer(xnorm, ynorm))
    return out


def exponent_base(
    cfg: ProblemConfig, block: GaussianBlock, t: float, decoupled: bool = False
) -> np.ndarray:
    """The (i1, i2) part of the exponent (everything except the tilt)."""
    ens = cfg.ensemble
    coeffs = cfg.coefficients()
    if block.G.shape != (ens.m, ens.n):
        raise DimensionMismatch(f"G has shape {block.G.shape}, expected ({ens.m}, {ens.n})")
    if block.u2.shape[1] != ens.m or block.h.shape[1] != ens.n:
        raise DimensionMismatch("level draws do not match ensemble dimensions")
    if block.u4.shape[0] != cfg.schedule.r + 1:
        raise DimensionMismatch(
            f"block carries {block.u4.shape[0]} levels, schedule needs {cfg.schedule.r + 1}"
        )
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    xn, yn = ens.xnorms, ens.ynorms
    base = np.sqrt(t) * bilinear_term(block.G, ens.xs, ens.ys)
    for k in range(1, cfg.schedule.r + 2):
        base = base + level_contribution(
            t,
            coeffs.a[k - 1],
            coeffs.b[k - 1],
            coeffs.c[k - 1],
            block.u4[k - 1],
            block.u2[k - 1],
            block.h[k - 1],
            ens.xs,
            ens.ys,
            xn,
            yn,
            decoupled=decoupled,
        )
    return base


def exponent_tensor(cfg: ProblemConfig, block: GaussianBlock, t: float) -> ExponentTensor:
    base = exponent_base(cfg, block, t)
    tilt = cfg.ensemble.tilt_table()
    return ExponentTensor(d0=base[:, :, None] + tilt[:, None, :], t=t)


def exponent_tensor_S(cfg: ProblemConfig, block: GaussianBlock, t: float) -> ExponentTensor:
    """Decoupled variant: the sqrt(t)|x||y| u4 term is removed."""
    base = exponent_base(cfg, block, t, decoupled=True)
    tilt = cfg.ensemble.tilt_table()
    return ExponentTensor(d0=base[:, :, None] + tilt[:, None, :], t=t)


def log_partition(tensor: ExponentTensor, beta: float, s: float) -> LogPartitionTensor:
    """logC[i1, i3] = LSE_i2(beta d0), logZ[i3] = LSE_i1(s logC).

    s < 0 is unproblematic: s*logC is an ordinary real before the outer
    log-sum-exp.
    """
    logC = logsumexp(beta * tensor.d0, axis=1)
    logZ = logsumexp(s * logC, axis=0)
    return LogPartitionTensor(logC=logC, logZ=logZ)
