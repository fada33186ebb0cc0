"""Two-mass-spring-damper benchmark with a Stribeck-like damper on mass 1.

The discrete-time plant from force ``f`` to the position ``y`` of mass 1 is

    B(delta) f = A(delta) y + B(delta) d(delta y),
    d(v) = c1 v + (c2 - c1) v / cosh(alpha v),

with ``delta = (1 - q^-1) / Ts`` and ``A``, ``B`` polynomials in ``delta``
built from the physical parameters. This relation is taken as the exact
discrete-time truth; there is no continuous-time integration.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidInputError, SimulationError
from .signals import PolyOp, Signal, discrete_derivative, filter_rows, poly_rows

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class PlantParams:
    m1: float = 1.0
    m2: float = 2.0
    k1: float = 1.0
    k2: float = 15000.0
    d2: float = 50.0
    c1: float = 1.0
    c2: float = 20.0
    alpha: float = 20.0
    Ts: float = 1e-3  # noqa: N815
    # "physical": coefficients of the equations of motion; "printed": the
    # alternative a2/a3 identities kept for comparison (unstable forward plant)
    convention: str = "physical"

    def __post_init__(self):
        for name in ("m1", "m2", "k2", "d2", "Ts"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be strictly positive")
        if self.convention not in ("physical", "printed"):
            raise InvalidInputError(f"unknown coefficient convention {self.convention!r}")

    @property
    def coeffs(self):
        return derived_coeffs(self)

    def replace(self, **changes):
        return PlantParams(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class DerivedCoeffs:
    """Continuous-style coefficients of ``A(delta)`` (``a0..a4``) and ``B(delta)`` (``b0..b2``)."""

    a: np.ndarray
    b: np.ndarray


def derived_coeffs(params: PlantParams) -> DerivedCoeffs:
    m1, m2, k1, k2, d2 = params.m1, params.m2, params.k1, params.k2, params.d2
    b = np.array([k2, d2, m2], dtype=float)
    if params.convention == "physical":
        a2 = m1 * k2 + k1 * m2 + k2 * m2
        a3 = m1 * d2 + m2 * d2
    else:
        a2 = m2 * k1 + k1 * m1 - k2 * m2
        a3 = m1 * d2
    a = np.array([k1 * k2, d2 * k1, a2, a3, m1 * m2], dtype=float)
    return DerivedCoeffs(a, b)


def delta_polynomial(coefficients, sample_time) -> PolyOp:
    """``sum_i c_i delta^i`` expanded in powers of ``q^-1``."""
    out = PolyOp([0.0])
    for i, c in enumerate(coefficients):
        out = out + discrete_derivative(i, sample_time) * float(c)
    return out


def discrete_polynomials(params: PlantParams):
    """``(A_q, B_q)``: ``A(delta)`` and ``B(delta)`` as coefficient arrays in ``q^-1``."""
    dc = params.coeffs
    return (
        delta_polynomial(dc.a, params.Ts).coefficients,
        delta_polynomial(dc.b, params.Ts).coefficients,
    )


def linear_model_coefficients(params: PlantParams):
    """Monic-normalized coefficients the derivative-basis rational model should recover.

    For ``c2 == c1`` the plant inverse is ``(A(delta) + c1 delta B(delta)) / B(delta)``.
    Returns ``(a, b)`` where ``a`` multiplies ``delta^0..delta^4`` and ``b`` holds
    the ``q^-1, q^-2`` coefficients of the monic denominator.
    """
    dc = params.coeffs
    num = dc.a.copy()
    num[1:4] += params.c1 * dc.b
    lead = delta_polynomial(dc.b, params.Ts).coefficients
    return num / lead[0], lead[1:] / lead[0]


def stribeck(v, params: PlantParams | None = None):
    """``d(v) = c1 v + (c2 - c1) v / cosh(alpha v)``; elementwise."""
    p = params or PlantParams()
    v = np.asarray(v, dtype=float)
    z = np.abs(p.alpha * v)
    sech = np.zeros_like(z)
    small = z < 700.0
    sech[small] = 1.0 / np.cosh(z[small])
    return p.c1 * v + (p.c2 - p.c1) * v * sech


def inverse_feedforward(params: PlantParams, r: Signal) -> Signal:
    """The input ``fhat`` for which the plant output equals ``r`` exactly."""
    a_q, b_q = discrete_polynomials(params)
    rs = r.samples
    vel = poly_rows(discrete_derivative(1, params.Ts).coefficients, rs)
    rhs = poly_rows(a_q, rs) + poly_rows(b_q, stribeck(vel, params))
    fhat = filter_rows(np.array([1.0 / b_q[0]]), b_q / b_q[0], rhs)
    return r.with_samples(fhat)


def simulate_forward(params: PlantParams, f: Signal) -> Signal:
    """Plant output for input ``f``; safeguarded Newton per sample."""
    a_q, b_q = discrete_polynomials(params)
    y, fail = _kernels.plant_forward(
        np.ascontiguousarray(a_q),
        np.ascontiguousarray(b_q),
        np.ascontiguousarray(f.samples, dtype=float),
        float(params.Ts),
        float(params.c1),
        float(params.c2),
        float(params.alpha),
        NEWTON_TOL,
        NEWTON_MAX_ITER,
    )
    if fail >= 0:
        raise SimulationError(f"Newton solve failed at sample k = {fail + 1}", index=int(fail))
    return f.with_samples(y)


# ---------------------------------------------------------------------------
# references


@dataclass(frozen=True)
class ProfileConfig:
    """Point-to-point references: rest, move out, dwell, move back, rest.

    Each move follows the degree-9 polynomial whose first four derivatives
    vanish at both ends. Strokes are log-spaced over ``stroke_range``;
    durations are drawn per seed from ``duration_range``.
    """

    stroke_range: tuple = (0.02, 0.5)
    duration_range: tuple = (0.5, 2.0)
    rest_before: float = 0.1
    dwell: float = 0.2
    rest_after: float = 0.3

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("stroke_range", "duration_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def smooth_step(tau):
    """``126 t^5 - 420 t^6 + 540 t^7 - 315 t^8 + 70 t^9`` clipped to ``[0, 1]``."""
    t = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    return t**5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))


def point_to_point(stroke, duration, sample_time, profile: ProfileConfig):
    t0 = profile.rest_before
    t1 = t0 + duration
    t2 = t1 + profile.dwell
    t3 = t2 + duration
    total = t3 + profile.rest_after
    n = int(round(total / sample_time))
    t = np.arange(1, n + 1) * sample_time
    r = stroke * (smooth_step((t - t0) / duration) - smooth_step((t - t2) / duration))
    return r


def generate_references(count=9, profile: ProfileConfig | None = None, seed=0, sample_time=1e-3):
    """``count`` training references plus one held-out validation reference.

    Returns ``(training, validation)``. Strokes increase monotonically over the
    training set; the validation move goes in the negative direction first.
    """
    profile = profile or ProfileConfig()
    rng = np.random.default_rng(seed)
    lo, hi = profile.stroke_range
    strokes = np.geomspace(lo, hi, count) if count > 1 else np.array([hi])
    durations = rng.uniform(*profile.duration_range, size=count)
    training = [
        Signal(point_to_point(s, d, sample_time, profile), sample_time)
        for s, d in zip(strokes, durations)
    ]
    val_stroke = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    val_duration = float(rng.uniform(*profile.duration_range))
    validation = Signal(
        point_to_point(-val_stroke, val_duration, sample_time, profile), sample_time
    )
    return training, validation


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    trajectories: list = field(default_factory=list)  # (r, fhat) Signal pairs
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def sample_time(self):
        return self.trajectories[0][0].sample_time if self.trajectories else None


def build_dataset(params: PlantParams, references, metadata=None) -> Dataset:
    pairs = []
    for r in references:
        pairs.append((r, inverse_feedforward(params, r)))
    meta = {"params": asdict(params)}
    meta.update(metadata or {})
    return Dataset(pairs, meta)


def write_trajectory_csv(path, r: Signal, fhat: Signal):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "r", "fhat"])
        for k, (rv, fv) in enumerate(zip(r.samples, fhat.samples), start=1):
            writer.writerow([k, f"{rv:.17g}", f"{fv:.17g}"])


def read_trajectory_csv(path, sample_time):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["k", "r", "fhat"]:
            raise InvalidInputError(f"{path}: expected header 'k,r,fhat', got {header}")
        rows = [(float(row[1]), float(row[2])) for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return Signal(arr[:, 0], sample_time), Signal(arr[:, 1], sample_time)


def save_dataset(directory, dataset: Dataset, validation=None, manifest_extra=None):
    """One ``k,r,fhat`` CSV per trajectory plus ``manifest.json``.

    ``validation`` is an optional ``(r, fhat)`` pair stored as ``validation.csv``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (r, fhat) in enumerate(dataset.trajectories, start=1):
        name = f"trajectory_{i:02d}.csv"
        write_trajectory_csv(directory / name, r, fhat)
        files.append(name)
    manifest = dict(dataset.metadata)
    manifest["sample_time"] = dataset.sample_time or (validation[0].sample_time if validation else None)
    manifest["trajectories"] = files
    if validation is not None:
        write_trajectory_csv(directory / "validation.csv", *validation)
        manifest["validation"] = "validation.csv"
    manifest.update(manifest_extra or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / "manifest.json"


def load_dataset(directory):
    """Inverse of :func:`save_dataset`; returns ``(dataset, validation_or_None)``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    ts = manifest["sample_time"]
    pairs = [read_trajectory_csv(directory / name, ts) for name in manifest["trajectories"]]
    validation = None
    if manifest.get("validation"):
        validation = read_trajectory_csv(directory / manifest["validation"], ts)
    meta = {k: v for k, v in manifest.items() if k not in ("trajectories", "validation")}
    return Dataset(pairs, meta), validation


def params_from_dict(d):
    return PlantParams(**d)
