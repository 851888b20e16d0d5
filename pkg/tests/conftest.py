import numpy as np
import pytest

from bilift.model import (
    EnsembleSpec,
    LiftingSchedule,
    ModelScalars,
    ProblemConfig,
    TiltSpec,
)


def unit_rows(rng, l, d):
    v = rng.standard_normal((l, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def small_config():
    """l=2, r=1 unit-norm instance with a tilt; the workhorse fixture."""
    rng = np.random.default_rng(3)
    return ProblemConfig(
        EnsembleSpec(
            xs=unit_rows(rng, 2, 3),
            xbars=unit_rows(rng, 2, 3),
            ys=unit_rows(rng, 2, 3),
            tilt=TiltSpec("inner-product", coefficient=0.3),
        ),
        ModelScalars(beta=0.9, s=1.4, p_exp=2.0),
        LiftingSchedule(1, (1.0, 0.5, 0.0), (1.0, 0.45, 0.0), (1.0, 0.6, 0.0)),
    ).validated()


@pytest.fixture
def beta0_config():
    return ProblemConfig(
        EnsembleSpec(
            xs=np.array([[1.0, 0.0], [0.0, 1.0]]),
            xbars=np.array([[1.0, 0.0], [0.0, 1.0]]),
            ys=np.array([[1.0, 0.0], [0.0, 1.0]]),
        ),
        ModelScalars(beta=0.0, s=1.0, p_exp=2.0),
        LiftingSchedule(1, (1.0, 0.5, 0.0), (1.0, 0.5, 0.0), (1.0, 0.5, 0.0)),
    ).validated()


@pytest.fixture
def l1_config():
    return ProblemConfig(
        EnsembleSpec(
            xs=np.array([[1.0]]),
            xbars=np.array([[1.0]]),
            ys=np.array([[1.0]]),
            tilt=TiltSpec("inner-product", coefficient=0.4),
        ),
        ModelScalars(beta=1.5, s=1.0, p_exp=2.0),
        LiftingSchedule(1, (1.0, 0.6, 0.0), (1.0, 0.55, 0.0), (1.0, 0.45, 0.0)),
    ).validated()


@pytest.fixture
def r2_config():
    rng = np.random.default_rng(8)
    return ProblemConfig(
        EnsembleSpec(
            xs=unit_rows(rng, 2, 3),
            xbars=unit_rows(rng, 2, 3),
            ys=unit_rows(rng, 2, 3),
            tilt=TiltSpec("inner-product", coefficient=0.2),
        ),
        ModelScalars(beta=0.8, s=1.3, p_exp=2.0),
        LiftingSchedule(
            2, (1.0, 0.65, 0.3, 0.0), (1.0, 0.6, 0.28, 0.0), (1.0, 0.7, 0.4, 0.0)
        ),
    ).validated()
