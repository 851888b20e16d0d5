import math

import numpy as np
import pytest

from bilift.errors import DimensionMismatch
from bilift.hamiltonian import (
    ExponentTensor,
    exponent_tensor,
    exponent_tensor_S,
    log_partition,
)
from bilift.model import (
    EnsembleSpec,
    LiftingSchedule,
    ModelScalars,
    ProblemConfig,
    TiltSpec,
)
from bilift.randomness import GaussianBlock, StreamKey, sample_block


def _zero_block(r, n, m):
    return GaussianBlock(
        G=np.zeros((m, n)),
        u4=np.zeros(r + 1),
        u2=np.zeros((r + 1, m)),
        h=np.zeros((r + 1, n)),
    )


def _cfg(l=2, n=2, m=2, beta=1.0, s=2.0, p=1.0, tilt=None, schedule=None):
    xs = np.eye(max(n, l))[:l, :n].astype(float)
    if l > n:
        xs = np.ones((l, n))
    ys = np.eye(max(m, l))[:l, :m].astype(float)
    if l > m:
        ys = np.ones((l, m))
    return ProblemConfig(
        EnsembleSpec(xs=xs, xbars=xs.copy(), ys=ys, tilt=tilt or TiltSpec()),
        ModelScalars(beta=beta, s=s, p_exp=p),
        schedule or LiftingSchedule(1, (1, 0.5, 0), (1, 0.5, 0), (1, 0.5, 0)),
    )


def test_zero_gaussians_zero_tilt_gives_zero():
    cfg = _cfg()
    tensor = exponent_tensor(cfg, _zero_block(1, 2, 2), t=0.3)
    assert np.all(tensor.d0 == 0.0)


def test_single_config_direct_substitution():
    # l=1, n=m=1, unit vectors, t=1: d0 = g + a1 u4_1 + a2 u4_2 + tilt
    cfg = _cfg(l=1, n=1, m=1, tilt=TiltSpec("inner-product", coefficient=0.7))
    blk = _zero_block(1, 1, 1)
    blk = GaussianBlock(
        G=np.array([[1.3]]), u4=np.array([0.4, -0.2]), u2=blk.u2, h=blk.h
    )
    coeffs = cfg.coefficients()
    expected = 1.3 + coeffs.a[0] * 0.4 + coeffs.a[1] * (-0.2) + 0.7
    tensor = exponent_tensor(cfg, blk, t=1.0)
    assert abs(tensor.d0[0, 0, 0] - expected) < 1e-14


def test_separable_tilt_structure(small_config):
    blk = sample_block(StreamKey(4).child(1, 0), 1, 3, 3)
    tensor = exponent_tensor(small_config, blk, t=0.6)
    F = small_config.ensemble.tilt_table()
    # the i3 dependence enters only through the tilt
    diff = tensor.d0[:, :, 0] - tensor.d0[:, :, 1]
    expected = (F[:, 0] - F[:, 1])[:, None] * np.ones((1, 2))
    assert np.allclose(diff, expected, atol=1e-12)


def test_endpoint_terms_vanish(small_config):
    blk = sample_block(StreamKey(4).child(1, 1), 1, 3, 3)
    ens = small_config.ensemble
    t0 = exponent_tensor(small_config, blk, t=0.0)
    # at t=0 the G term is absent
    blk2 = GaussianBlock(G=2.0 * blk.G, u4=blk.u4, u2=blk.u2, h=blk.h)
    t0b = exponent_tensor(small_config, blk2, t=0.0)
    assert np.array_equal(t0.d0, t0b.d0)
    # at t=1 the u2/h terms are absent
    t1 = exponent_tensor(small_config, blk, t=1.0)
    blk3 = GaussianBlock(G=blk.G, u4=blk.u4, u2=3.0 * blk.u2, h=-blk.h)
    t1b = exponent_tensor(small_config, blk3, t=1.0)
    assert np.array_equal(t1.d0, t1b.d0)


def test_variance_decomposition():
    # Var(d0 - tilt) = |x|^2 |y|^2 (t + (1-t) p0 + t p0 q0 + (1-t) q0)
    cfg = _cfg(l=1, n=2, m=3, schedule=LiftingSchedule(1, (0.8, 0.3, 0), (0.7, 0.2, 0), (1, 0.5, 0)))
    xs = np.array([[1.2, 0.5]])
    ys = np.array([[0.3, -0.7, 0.4]])
    cfg = ProblemConfig(
        EnsembleSpec(xs=xs, xbars=xs.copy(), ys=ys), cfg.scalars, cfg.schedule
    )
    t = 0.35
    S = np.linalg.norm(xs) ** 2 * np.linalg.norm(ys) ** 2
    expected = S * (t + (1 - t) * 0.8 + t * 0.8 * 0.7 + (1 - t) * 0.7)
    draws = 10_000
    vals = np.empty(draws)
    for i in range(draws):
        blk = sample_block(StreamKey(6).child(1, i), 1, 2, 3)
        vals[i] = exponent_tensor(cfg, blk, t).d0[0, 0, 0]
    var = vals.var(ddof=1)
    se = var * math.sqrt(2.0 / (draws - 1))
    assert abs(var - expected) < 4 * se


def test_decoupled_variant(small_config):
    blk = sample_block(StreamKey(4).child(1, 2), 1, 3, 3)
    # a == 0 schedule: variants agree bitwise
    sch = small_config.schedule
    flat = sch.replace(pvec=(0.6, 0.6, 0.0), qvec=(0.0, 0.0, 0.0))
    cfg = small_config.with_schedule(flat)
    a = exponent_tensor(cfg, blk, 0.4).d0
    b = exponent_tensor_S(cfg, blk, 0.4).d0
    assert np.array_equal(a, b)
    # t=0 removes the coupled term regardless of the schedule
    a = exponent_tensor(small_config, blk, 0.0).d0
    b = exponent_tensor_S(small_config, blk, 0.0).d0
    assert np.array_equal(a, b)
    # otherwise they differ
    a = exponent_tensor(small_config, blk, 0.7).d0
    b = exponent_tensor_S(small_config, blk, 0.7).d0
    assert not np.allclose(a, b)


def test_dimension_mismatch(small_config):
    blk = sample_block(StreamKey(4).child(1, 3), 1, 2, 3)  # wrong n
    with pytest.raises(DimensionMismatch):
        exponent_tensor(small_config, blk, 0.5)


def test_log_partition_uniform():
    d0 = np.zeros((3, 3, 3))
    lp = log_partition(ExponentTensor(d0, 0.5), beta=1.0, s=2.0)
    assert np.allclose(lp.logC, math.log(3))
    assert np.allclose(lp.logZ, math.log(27))


def test_log_partition_negative_s():
    d0 = np.zeros((2, 2, 2))
    lp = log_partition(ExponentTensor(d0, 0.5), beta=1.0, s=-1.0)
    assert np.allclose(lp.logZ, 0.0)


def test_log_partition_matches_naive():
    rng = np.random.default_rng(0)
    d0 = rng.normal(size=(2, 2, 2)) * 10
    beta, s = 1.5, -0.7
    lp = log_partition(ExponentTensor(d0, 0.5), beta, s)
    A = np.exp(beta * d0)
    C = A.sum(axis=1)
    Z = (C**s).sum(axis=0)
    assert np.allclose(lp.logC, np.log(C), rtol=1e-10)
    assert np.allclose(lp.logZ, np.log(Z), rtol=1e-10)


def test_log_partition_large_exponents_stable():
    rng = np.random.default_rng(1)
    d0 = rng.normal(size=(2, 2, 2)) * 500
    lp = log_partition(ExponentTensor(d0, 0.5), beta=1.4, s=2.0)
    assert np.all(np.isfinite(lp.logC)) and np.all(np.isfinite(lp.logZ))


def test_shift_covariance():
    rng = np.random.default_rng(2)
    d0 = rng.normal(size=(3, 3, 3))
    beta, s, delta = 1.3, -0.6, 2.5
    lp = log_partition(ExponentTensor(d0, 0.5), beta, s)
    lp2 = log_partition(ExponentTensor(d0 + delta, 0.5), beta, s)
    assert np.allclose(lp2.logC, lp.logC + beta * delta, atol=1e-12)
    assert np.allclose(lp2.logZ, lp.logZ + s * beta * delta, atol=1e-12)


def test_monotone_in_beta_for_positive_s():
    rng = np.random.default_rng(3)
    d0 = np.abs(rng.normal(size=(2, 2, 2)))
    z1 = log_partition(ExponentTensor(d0, 0.5), 0.5, 2.0).logZ
    z2 = log_partition(ExponentTensor(d0, 0.5), 1.5, 2.0).logZ
    assert np.all(z2 >= z1)
