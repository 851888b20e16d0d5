import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilift.errors import NonMonotoneSchedule
from bilift.model import (
    EnsembleSpec,
    LiftingSchedule,
    ModelScalars,
    ProblemConfig,
    TiltSpec,
    config_from_dict,
    derive_coefficients,
    load_config,
    save_config,
    validate,
)


def test_boundary_schedule():
    c = derive_coefficients(LiftingSchedule(1, (1, 0, 0), (1, 0, 0), (1, 0.5, 0)))
    assert np.allclose(c.a, [1, 0])
    assert np.allclose(c.b, [1, 0])
    assert np.allclose(c.c, [1, 0])


def test_halfway_schedule():
    c = derive_coefficients(LiftingSchedule(1, (1, 0.5, 0), (1, 0.5, 0), (1, 0.5, 0)))
    assert np.allclose(c.a, [math.sqrt(0.75), 0.5])
    assert np.allclose(c.b, [math.sqrt(0.5), math.sqrt(0.5)])
    assert np.allclose(c.c, [math.sqrt(0.5), math.sqrt(0.5)])


def test_two_level_schedule():
    c = derive_coefficients(
        LiftingSchedule(2, (1, 0.9, 0.4, 0), (1, 0.8, 0.3, 0), (1, 0.5, 0.3, 0))
    )
    assert np.allclose(c.a, [math.sqrt(1 - 0.72), math.sqrt(0.72 - 0.12), math.sqrt(0.12)])


def test_nonmonotone_raises():
    with pytest.raises(NonMonotoneSchedule):
        derive_coefficients(LiftingSchedule(1, (0.5, 1.0, 0), (1, 0.5, 0), (1, 0.5, 0)))


def test_telescoping_sums():
    sch = LiftingSchedule(2, (0.9, 0.7, 0.2, 0), (0.8, 0.5, 0.1, 0), (1, 0.6, 0.3, 0))
    c = derive_coefficients(sch)
    assert abs(np.sum(c.b**2) - 0.9) < 1e-12
    assert abs(np.sum(c.c**2) - 0.8) < 1e-12
    assert abs(np.sum(c.a**2) - 0.72) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=5),
    st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=5),
)
def test_schedule_roundtrip_from_b(raw_p, raw_q):
    r = min(len(raw_p), len(raw_q)) - 1
    pvec = sorted(raw_p[: r + 1], reverse=True) + [0.0]
    qvec = sorted(raw_q[: r + 1], reverse=True) + [0.0]
    sch = LiftingSchedule(r, tuple(pvec), tuple(qvec), (1.0, *([0.5] * r), 0.0))
    c = derive_coefficients(sch)
    rebuilt = [0.0]
    for k in range(r + 1, 0, -1):
        rebuilt.insert(0, rebuilt[0] + c.b[k - 1] ** 2)
    assert np.allclose(rebuilt, pvec, atol=1e-12)


def test_derive_is_deterministic():
    sch = LiftingSchedule(1, (1, 0.5, 0), (1, 0.4, 0), (1, 0.5, 0))
    c1, c2 = derive_coefficients(sch), derive_coefficients(sch)
    assert np.array_equal(c1.a, c2.a)


def _spec(l=2, n=2, m=2):
    return EnsembleSpec(
        xs=np.eye(n)[:l] if l <= n else np.ones((l, n)),
        xbars=np.eye(n)[:l] if l <= n else np.ones((l, n)),
        ys=np.eye(m)[:l] if l <= m else np.ones((l, m)),
    )


def test_validate_clean(small_config):
    rep = validate(small_config.ensemble, small_config.scalars, small_config.schedule)
    assert rep.ok


def test_validate_nonmonotone_pvec():
    rep = validate(
        _spec(),
        ModelScalars(1.0, 1.0, 1.0),
        LiftingSchedule(2, (1, 0.2, 0.5, 0), (1, 0.5, 0.2, 0), (1, 0.5, 0.3, 0)),
    )
    assert "pvec not non-increasing" in rep.codes()


def test_validate_zero_s():
    rep = validate(
        _spec(),
        ModelScalars(1.0, 0.0, 1.0),
        LiftingSchedule(1, (1, 0.5, 0), (1, 0.5, 0), (1, 0.5, 0)),
    )
    assert "s must be nonzero" in rep.codes()


def test_validate_mvec_endpoints():
    rep = validate(
        _spec(),
        ModelScalars(1.0, 1.0, 1.0),
        LiftingSchedule(1, (1, 0.5, 0), (1, 0.5, 0), (0.9, 0.5, 0.1)),
    )
    codes = rep.codes()
    assert "mvec head not one" in codes and "mvec tail not zero" in codes


def test_beta_zero_is_allowed():
    rep = validate(
        _spec(),
        ModelScalars(0.0, 1.0, 1.0),
        LiftingSchedule(1, (1, 0.5, 0), (1, 0.5, 0), (1, 0.5, 0)),
    )
    assert rep.ok


def test_norm_flags():
    spec = _spec(l=2, n=2, m=2)
    assert spec.is_unit_norm() and spec.is_constant_magnitude()
    spec2 = EnsembleSpec(
        xs=np.array([[2.0, 0.0], [0.0, 2.0]]),
        xbars=np.array([[2.0, 0.0], [0.0, 2.0]]),
        ys=np.array([[1.0, 0.0], [0.0, 1.0]]),
    )
    assert spec2.is_constant_magnitude() and not spec2.is_unit_norm()


def test_tilt_tables():
    xs = np.array([[1.0, 0.0], [0.0, 1.0]])
    spec = EnsembleSpec(xs=xs, xbars=xs, ys=xs, tilt=TiltSpec("inner-product", 2.0))
    assert np.allclose(spec.tilt_table(), 2.0 * np.eye(2))
    tab = ((0.0, 1.0), (2.0, 3.0))
    spec = EnsembleSpec(xs=xs, xbars=xs, ys=xs, tilt=TiltSpec("tabulated", table=tab))
    assert np.allclose(spec.tilt_table(), np.array(tab))


def test_config_roundtrip(tmp_path, small_config):
    path = tmp_path / "cfg.json"
    save_config(small_config, path)
    loaded = load_config(path)
    assert np.array_equal(loaded.ensemble.xs, small_config.ensemble.xs)
    assert loaded.schedule == small_config.schedule
    assert loaded.scalars == small_config.scalars
    # dict round trip preserves everything bit-for-bit
    again = config_from_dict(loaded.to_dict())
    assert np.array_equal(again.ensemble.ys, small_config.ensemble.ys)
