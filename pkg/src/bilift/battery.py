"""Fixed benchmark instances used by the test suite and the CLI suites.

Six configs span l in {1,2,3}, n,m in {1,3,5}, r in {1,2}, s in {-0.7, 1,
2.5}, p in {1,2}, beta in {0, 0.5, 1.5}, unit-norm and constant-magnitude
ensembles; plus a fully symmetric unit-norm instance for the stationarity
and endpoint checks.  Everything is generated deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EnsembleSpec, LiftingSchedule, ModelScalars, ProblemConfig, TiltSpec
from .nested import SamplePlan, gaussian_dimension, QUADRATURE_MAX_DIM


@dataclass(frozen=True)
class BatteryEntry:
    name: str
    config: ProblemConfig
    t: float
    psi_plan: SamplePlan
    id_plan: SamplePlan
    suite_plan: SamplePlan

    @property
    def quadrature_ok(self) -> bool:
        return gaussian_dimension(self.config) <= QUADRATURE_MAX_DIM


def _unit_rows(rng, l, d):
    v = rng.standard_normal((l, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def battery() -> dict:
    rng = np.random.default_rng(20240811)
    entries = {}

    def add(name, cfg, t, psi_plan, id_plan, suite_plan):
        entries[name] = BatteryEntry(
            name, cfg.validated(), t, psi_plan, id_plan, suite_plan
        )

    add(
        "B1",
        ProblemConfig(
            EnsembleSpec(
                xs=np.array([[1.0]]),
                xbars=np.array([[1.0]]),
                ys=np.array([[1.0]]),
                tilt=TiltSpec("inner-product", coefficient=0.4),
            ),
            ModelScalars(beta=1.5, s=1.0, p_exp=2.0),
            LiftingSchedule(1, (1.0, 0.6, 0.0), (1.0, 0.55, 0.0), (1.0, 0.45, 0.0)),
        ),
        0.5,
        SamplePlan((2000, 500)),
        SamplePlan((1500, 400)),
        SamplePlan((800, 250)),
    )
    add(
        "B2",
        ProblemConfig(
            EnsembleSpec(
                xs=np.array([[1.0], [-1.0]]),
                xbars=np.array([[1.0], [-1.0]]),
                ys=np.array([[1.0], [-1.0]]),
                tilt=TiltSpec("inner-product", coefficient=0.3),
            ),
            ModelScalars(beta=0.5, s=2.5, p_exp=1.0),
            LiftingSchedule(1, (1.0, 0.5, 0.0), (1.0, 0.5, 0.0), (1.0, 0.6, 0.0)),
        ),
        0.35,
        SamplePlan((2000, 500)),
        SamplePlan((1500, 400)),
        SamplePlan((800, 250)),
    )
    add(
        "B3",
        ProblemConfig(
            EnsembleSpec(
                xs=_unit_rows(rng, 2, 3),
                xbars=_unit_rows(rng, 2, 3),
                ys=_unit_rows(rng, 2, 3),
                tilt=TiltSpec("zero"),
            ),
            ModelScalars(beta=1.5, s=-0.7, p_exp=2.0),
            LiftingSchedule(1, (0.8, 0.45, 0.0), (0.8, 0.4, 0.0), (1.0, 0.55, 0.0)),
        ),
        0.7,
        SamplePlan((2000, 500)),
        SamplePlan((1200, 350)),
        SamplePlan((700, 220)),
    )
    add(
        "B4",
        ProblemConfig(
            EnsembleSpec(
                xs=1.3 * _unit_rows(rng, 3, 5),
                xbars=1.3 * _unit_rows(rng, 3, 5),
                ys=0.8 * _unit_rows(rng, 3, 3),
                tilt=TiltSpec("zero"),
            ),
            ModelScalars(beta=0.5, s=1.0, p_exp=2.0),
            LiftingSchedule(
                2, (1.0, 0.7, 0.35, 0.0), (1.0, 0.65, 0.3, 0.0), (1.0, 0.7, 0.4, 0.0)
            ),
        ),
        0.5,
        SamplePlan((2000, 500, 200)),
        SamplePlan((400, 120, 80)),
        SamplePlan((250, 80, 50)),
    )
    add(
        "B5",
        ProblemConfig(
            EnsembleSpec(
                xs=_unit_rows(rng, 2, 3),
                xbars=_unit_rows(rng, 2, 3),
                ys=_unit_rows(rng, 2, 5),
                tilt=TiltSpec("inner-product", coefficient=0.25),
            ),
            ModelScalars(beta=0.5, s=2.5, p_exp=1.0),
            LiftingSchedule(
                2, (1.0, 0.6, 0.3, 0.0), (1.0, 0.55, 0.25, 0.0), (1.0, 0.65, 0.35, 0.0)
            ),
        ),
        0.4,
        SamplePlan((2000, 500, 200)),
        SamplePlan((500, 150, 100)),
        SamplePlan((300, 100, 60)),
    )
    add(
        "B6",
        ProblemConfig(
            EnsembleSpec(
                xs=np.array([[1.0], [-1.0], [1.0]]),
                xbars=np.array([[1.0], [-1.0], [1.0]]),
                ys=_unit_rows(rng, 3, 3),
                tilt=TiltSpec("zero"),
            ),
            ModelScalars(beta=0.0, s=-0.7, p_exp=1.0),
            LiftingSchedule(1, (1.0, 0.5, 0.0), (1.0, 0.4, 0.0), (1.0, 0.5, 0.0)),
        ),
        0.5,
        SamplePlan((2000, 500)),
        SamplePlan((400, 200)),
        SamplePlan((300, 150)),
    )
    return entries


def symmetric_instance(beta: float = 0.8) -> ProblemConfig:
    """Fully symmetric unit-norm instance: all xs equal, all ys equal."""
    rng = np.random.default_rng(7)
    x = _unit_rows(rng, 1, 3)[0]
    y = _unit_rows(rng, 1, 3)[0]
    return ProblemConfig(
        EnsembleSpec(
            xs=np.tile(x, (3, 1)),
            xbars=np.tile(x, (3, 1)),
            ys=np.tile(y, (3, 1)),
            tilt=TiltSpec("zero"),
        ),
        ModelScalars(beta=beta, s=1.0, p_exp=2.0),
        LiftingSchedule(1, (1.0, 0.5, 0.0), (1.0, 0.5, 0.0), (1.0, 0.99, 0.0)),
    ).validated()


def mildly_asymmetric_instance() -> ProblemConfig:
    """Small perturbation of the symmetric instance (non-degenerate overlaps)."""
    rng = np.random.default_rng(11)
    base = _unit_rows(rng, 1, 3)[0]
    xs = np.vstack([base + 0.15 * rng.standard_normal(3) for _ in range(2)])
    xs = xs / np.linalg.norm(xs, axis=1, keepdims=True)
    ys = np.vstack([base + 0.15 * rng.standard_normal(3) for _ in range(2)])
    ys = ys / np.linalg.norm(ys, axis=1, keepdims=True)
    return ProblemConfig(
        EnsembleSpec(xs=xs, xbars=xs.copy(), ys=ys, tilt=TiltSpec("zero")),
        ModelScalars(beta=0.8, s=1.0, p_exp=2.0),
        LiftingSchedule(1, (1.0, 0.6, 0.0), (1.0, 0.6, 0.0), (1.0, 0.9, 0.0)),
    ).validated()
