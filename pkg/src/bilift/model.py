"""Problem definition: vector ensembles, scalar parameters, lifting schedule.

Everything here is immutable after construction; estimator modules treat these
objects as read-only inputs, so they are safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np

from .errors import ConfigError, NonMonotoneSchedule

_TOL = 1e-12


@dataclass(frozen=True)
class TiltSpec:
    """Tilt function coupling the reference vectors to the x-configurations.

    kind is one of:
      * "zero"           -- no tilt
      * "inner-product"  -- coefficient * xbar^T x
      * "tabulated"      -- explicit l x l table over (i1, i3)
    """

    kind: str = "zero"
    coefficient: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "inner-product", "tabulated"):
            raise ConfigError(f"unknown tilt kind {self.kind!r}")

    def values(self, xs: np.ndarray, xbars: np.ndarray) -> np.ndarray:
        """Return the (l, l) table F[i1, i3] = f_{xbar_i3}(x_i1)."""
        l = xs.shape[0]
        if self.kind == "zero":
            return np.zeros((l, l))
        if self.kind == "inner-product":
            return self.coefficient * (xs @ xbars.T)
        tab = np.asarray(self.table, dtype=float)
        if tab.shape != (l, l) or not np.all(np.isfinite(tab)):
            raise ConfigError("tabulated tilt must be a finite l x l table")
        return tab


@dataclass(frozen=True)
class EnsembleSpec:
    """The three vector sets, all of size l, with x-like vectors in R^n and
    y-vectors in R^m."""

    xs: np.ndarray
    xbars: np.ndarray
    ys: np.ndarray
    tilt: TiltSpec = field(default_factory=TiltSpec)

    def __post_init__(self):
        object.__setattr__(self, "xs", _freeze(self.xs))
        object.__setattr__(self, "xbars", _freeze(self.xbars))
        object.__setattr__(self, "ys", _freeze(self.ys))

    @property
    def l(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def m(self) -> int:
        return self.ys.shape[1]

    @property
    def xnorms(self) -> np.ndarray:
        return np.linalg.norm(self.xs, axis=1)

    @property
    def ynorms(self) -> np.ndarray:
        return np.linalg.norm(self.ys, axis=1)

    def tilt_table(self) -> np.ndarray:
        return self.tilt.values(self.xs, self.xbars)

    def is_constant_magnitude(self, tol: float = _TOL) -> bool:
        """All norms equal within each of the three sets."""
        for arr in (self.xs, self.xbars, self.ys):
            nr = np.linalg.norm(arr, axis=1)
            if np.ptp(nr) > tol:
                return False
        return True

    def is_unit_norm(self, tol: float = _TOL) -> bool:
        return (
            np.max(np.abs(self.xnorms - 1.0)) <= tol
            and np.max(np.abs(self.ynorms - 1.0)) <= tol
        )


@dataclass(frozen=True)
class ModelScalars:
    """beta >= 0, replication exponent s != 0, outer exponent p_exp > 0."""

    beta: float
    s: float
    p_exp: float


@dataclass(frozen=True)
class LiftingSchedule:
    """Lifting level r with the monotone vectors p, q and exponents m.

    pvec/qvec/mvec all have r+2 entries indexed 0..r+1, with
    1 >= p_0 >= ... >= p_{r+1} = 0 (same for q), m_0 = 1, m_{r+1} = 0.
    """

    r: int
    pvec: tuple
    qvec: tuple
    mvec: tuple

    def __post_init__(self):
        object.__setattr__(self, "pvec", tuple(float(v) for v in self.pvec))
        object.__setattr__(self, "qvec", tuple(float(v) for v in self.qvec))
        object.__setattr__(self, "mvec", tuple(float(v) for v in self.mvec))

    def replace(self, **kw) -> "LiftingSchedule":
        data = {"r": self.r, "pvec": self.pvec, "qvec": self.qvec, "mvec": self.mvec}
        data.update(kw)
        return LiftingSchedule(**data)

    def perturbed(self, which: str, k: int, delta: float) -> "LiftingSchedule":
        """Return a copy with entry k of pvec/qvec/mvec shifted by delta."""
        vec = list(getattr(self, which))
        vec[k] += delta
        return self.replace(**{which: tuple(vec)})


@dataclass(frozen=True)
class Coefficients:
    """Per-level mixing coefficients a_k, b_k, c_k for k = 1..r+1."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _freeze(self.a))
        object.__setattr__(self, "b", _freeze(self.b))
        object.__setattr__(self, "c", _freeze(self.c))


def derive_coefficients(schedule: LiftingSchedule) -> Coefficients:
    """a_k = sqrt(p_{k-1}q_{k-1} - p_k q_k), b_k = sqrt(p_{k-1} - p_k),
    c_k = sqrt(q_{k-1} - q_k), for k = 1..r+1."""
    p = np.asarray(schedule.pvec)
    q = np.asarray(schedule.qvec)
    ra = p[:-1] * q[:-1] - p[1:] * q[1:]
    rb = p[:-1] - p[1:]
    rc = q[:-1] - q[1:]
    for name, rad in (("a", ra), ("b", rb), ("c", rc)):
        if np.min(rad) < -1e-15:
            raise NonMonotoneSchedule(
                f"negative radicand for coefficient {name}: {rad.min():.3e}"
            )
    return Coefficients(
        a=np.sqrt(np.clip(ra, 0.0, None)),
        b=np.sqrt(np.clip(rb, 0.0, None)),
        c=np.sqrt(np.clip(rc, 0.0, None)),
    )


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self):
        return [i.code for i in self.issues]


def validate(
    spec: EnsembleSpec, scalars: ModelScalars, schedule: LiftingSchedule
) -> ValidationReport:
    """Collect every violated invariant; an empty report means runnable."""
    issues = []

    def bad(code, detail=""):
        issues.append(ValidationIssue(code, detail))

    l = spec.xs.shape[0]
    if l < 1:
        bad("ensemble empty", "l must be >= 1")
    if spec.xs.ndim != 2 or spec.xbars.ndim != 2 or spec.ys.ndim != 2:
        bad("ensemble rank", "vector sets must be 2-d arrays")
        return ValidationReport(tuple(issues))
    if spec.xbars.shape != spec.xs.shape:
        bad("xbars dimension mismatch", f"{spec.xbars.shape} vs {spec.xs.shape}")
    if spec.ys.shape[0] != l:
        bad("ys count mismatch", f"{spec.ys.shape[0]} vs l={l}")
    if not (
        np.all(np.isfinite(spec.xs))
        and np.all(np.isfinite(spec.xbars))
        and np.all(np.isfinite(spec.ys))
    ):
        bad("ensemble not finite")
    if spec.tilt.kind == "tabulated":
        tab = np.asarray(spec.tilt.table, dtype=float)
        if tab.shape != (l, l):
            bad("tilt table shape", f"{tab.shape} != ({l}, {l})")
        elif not np.all(np.isfinite(tab)):
            bad("tilt table not finite")

    if scalars.beta < 0:
        bad("beta must be nonnegative", f"beta={scalars.beta}")
    if scalars.p_exp <= 0:
        bad("p_exp must be positive", f"p_exp={scalars.p_exp}")
    if scalars.s == 0:
        bad("s must be nonzero")

    r = schedule.r
    if r < 1:
        bad("lifting level", "r must be >= 1")
    for name, vec in (("pvec", schedule.pvec), ("qvec", schedule.qvec)):
        if len(vec) != r + 2:
            bad(f"{name} length", f"expected {r + 2}, got {len(vec)}")
            continue
        arr = np.asarray(vec)
        if np.any(np.diff(arr) > _TOL):
            bad(f"{name} not non-increasing")
        if arr[0] > 1 + _TOL:
            bad(f"{name} exceeds one", f"{name}[0]={arr[0]}")
        if abs(arr[-1]) > _TOL:
            bad(f"{name} tail not zero", f"{name}[r+1]={arr[-1]}")
        if np.any(arr < -_TOL):
            bad(f"{name} negative entry")
    if len(schedule.mvec) != r + 2:
        bad("mvec length", f"expected {r + 2}, got {len(schedule.mvec)}")
    else:
        mv = schedule.mvec
        if abs(mv[0] - 1.0) > _TOL:
            bad("mvec head not one", f"m_0={mv[0]}")
        if abs(mv[-1]) > _TOL:
            bad("mvec tail not zero", f"m_(r+1)={mv[-1]}")
        if any(v <= 0 for v in mv[1:-1]):
            bad("mvec interior not positive")
    if not issues:
        try:
            derive_coefficients(schedule)
        except NonMonotoneSchedule as exc:
            bad("coefficient radicand negative", str(exc))
    return ValidationReport(tuple(issues))


@dataclass(frozen=True)
class ProblemConfig:
    """Bundle of the three model layers, the unit every estimator consumes."""

    ensemble: EnsembleSpec
    scalars: ModelScalars
    schedule: LiftingSchedule

    def validated(self) -> "ProblemConfig":
        rep = validate(self.ensemble, self.scalars, self.schedule)
        if not rep.ok:
            raise ConfigError("invalid configuration: " + "; ".join(rep.codes()))
        return self

    def coefficients(self) -> Coefficients:
        return derive_coefficients(self.schedule)

    def with_schedule(self, schedule: LiftingSchedule) -> "ProblemConfig":
        return ProblemConfig(self.ensemble, self.scalars, schedule)

    def to_dict(self) -> dict:
        ens = {
            "l": self.ensemble.l,
            "n": self.ensemble.n,
            "m": self.ensemble.m,
            "xs": self.ensemble.xs.tolist(),
            "xbars": self.ensemble.xbars.tolist(),
            "ys": self.ensemble.ys.tolist(),
            "tilt": _tilt_to_dict(self.ensemble.tilt),
        }
        return {
            "ensemble": ens,
            "scalars": {
                "beta": self.scalars.beta,
                "s": self.scalars.s,
                "p_exp": self.scalars.p_exp,
            },
            "schedule": {
                "r": self.schedule.r,
                "pvec": list(self.schedule.pvec),
                "qvec": list(self.schedule.qvec),
                "mvec": list(self.schedule.mvec),
            },
        }


def _tilt_to_dict(tilt: TiltSpec) -> dict:
    d = {"kind": tilt.kind}
    if tilt.kind == "inner-product":
        d["coefficient"] = tilt.coefficient
    elif tilt.kind == "tabulated":
        d["table"] = [list(row) for row in tilt.table]
    return d


def config_from_dict(data: dict) -> ProblemConfig:
    try:
        ens = data["ensemble"]
        tilt_d = ens.get("tilt", {"kind": "zero"})
        tilt = TiltSpec(
            kind=tilt_d.get("kind", "zero"),
            coefficient=float(tilt_d.get("coefficient", 0.0)),
            table=tuple(tuple(row) for row in tilt_d.get("table", ())),
        )
        spec = EnsembleSpec(
            xs=np.asarray(ens["xs"], dtype=float),
            xbars=np.asarray(ens["xbars"], dtype=float),
            ys=np.asarray(ens["ys"], dtype=float),
            tilt=tilt,
        )
        sc = data["scalars"]
        scalars = ModelScalars(
            beta=float(sc["beta"]), s=float(sc["s"]), p_exp=float(sc["p_exp"])
        )
        sch = data["schedule"]
        schedule = LiftingSchedule(
            r=int(sch["r"]),
            pvec=tuple(sch["pvec"]),
            qvec=tuple(sch["qvec"]),
            mvec=tuple(sch["mvec"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for key in ("l", "n", "m"):
        if key in ens:
            expected = {"l": spec.l, "n": spec.n, "m": spec.m}[key]
            if int(ens[key]) != expected:
                raise ConfigError(
                    f"declared {key}={ens[key]} does not match arrays ({expected})"
                )
    return ProblemConfig(spec, scalars, schedule)


def load_config(path) -> ProblemConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ProblemConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def omega(k: int, p_exp: float) -> float:
    """Level weight: 1 at the first level, p afterwards."""
    return 1.0 if k == 1 else p_exp


def sgn(s: float) -> float:
    return math.copysign(1.0, s) if s != 0 else 0.0


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out
