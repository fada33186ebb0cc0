"""Finite-time signals, polynomial operators in the backward shift, and
rational filtering with zero initial conditions.

A signal of length ``N`` is indexed ``k = 1..N``; every sample before ``k = 1``
is taken to be zero. Under that convention recursive filtering and
multiplication by the lower-triangular Toeplitz convolution matrix are the
same linear map.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import InvalidInputError, StabilityWarning

STABILITY_RADIUS = 1.0 - 1e-9


def _finite_array(values, what):
    arr = np.array(values, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise InvalidInputError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled real trajectory ``u(1), ..., u(N)``."""

    samples: np.ndarray
    sample_time: float

    def __post_init__(self):
        arr = _finite_array(self.samples, "signal samples")
        if arr.size < 1:
            raise InvalidInputError("a signal needs at least one sample")
        ts = float(self.sample_time)
        if not (math.isfinite(ts) and ts > 0):
            raise InvalidInputError(f"sample time must be positive, got {self.sample_time}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_time", ts)

    def __len__(self):
        return self.samples.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.samples, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return self.sample_time == other.sample_time and np.array_equal(
            self.samples, other.samples
        )

    def with_samples(self, samples):
        """Same sample time, new samples."""
        return Signal(samples, self.sample_time)

    def _check_pair(self, other):
        if self.sample_time != other.sample_time:
            raise InvalidInputError(
                f"sample times differ: {self.sample_time} vs {other.sample_time}"
            )
        if len(self) != len(other):
            raise InvalidInputError(f"lengths differ: {len(self)} vs {len(other)}")

    def __add__(self, other):
        if isinstance(other, Signal):
            self._check_pair(other)
            return self.with_samples(self.samples + other.samples)
        return self.with_samples(self.samples + other)

    def __sub__(self, other):
        if isinstance(other, Signal):
            self._check_pair(other)
            return self.with_samples(self.samples - other.samples)
        return self.with_samples(self.samples - other)

    def __mul__(self, scalar):
        return self.with_samples(self.samples * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_samples(-self.samples)

    @classmethod
    def impulse(cls, n, sample_time=1.0):
        u = np.zeros(n)
        u[0] = 1.0
        return cls(u, sample_time)


@dataclass(frozen=True, eq=False)
class PolyOp:
    """Polynomial ``c0 + c1 q^-1 + ... + cd q^-d`` acting on signals."""

    coefficients: np.ndarray

    def __post_init__(self):
        arr = _finite_array(self.coefficients, "polynomial coefficients")
        if arr.size < 1:
            raise InvalidInputError("a polynomial needs at least one coefficient")
        arr.setflags(write=False)
        object.__setattr__(self, "coefficients", arr)

    @property
    def degree(self):
        return self.coefficients.shape[0] - 1

    def __eq__(self, other):
        if not isinstance(other, PolyOp):
            return NotImplemented
        return np.array_equal(self.coefficients, other.coefficients)

    def __mul__(self, other):
        if isinstance(other, PolyOp):
            return PolyOp(np.convolve(self.coefficients, other.coefficients))
        return PolyOp(self.coefficients * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        n = max(self.degree, other.degree) + 1
        out = np.zeros(n)
        out[: self.degree + 1] += self.coefficients
        out[: other.degree + 1] += other.coefficients
        return PolyOp(out)

    def __pow__(self, power):
        out = PolyOp([1.0])
        for _ in range(int(power)):
            out = out * self
        return out

    @classmethod
    def shift(cls, lag):
        """The pure delay ``q^-lag``."""
        c = np.zeros(lag + 1)
        c[lag] = 1.0
        return cls(c)


@dataclass(frozen=True, eq=False)
class RationalFilter:
    """``numerator(q^-1) / denominator(q^-1)`` with a monic denominator."""

    numerator: PolyOp
    denominator: PolyOp

    def __post_init__(self):
        num = self.numerator if isinstance(self.numerator, PolyOp) else PolyOp(self.numerator)
        den = (
            self.denominator
            if isinstance(self.denominator, PolyOp)
            else PolyOp(self.denominator)
        )
        if den.coefficients[0] != 1.0:
            raise InvalidInputError(
                f"denominator must be monic, leading coefficient is {den.coefficients[0]}"
            )
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)

    @classmethod
    def all_pole(cls, denominator):
        """``1 / denominator``."""
        return cls(PolyOp([1.0]), denominator)

    def poles(self):
        return pole_radii(self.denominator)

    def is_stable(self):
        return is_stable(self.denominator)


def pole_radii(denominator):
    """Magnitudes of the roots of ``z^d D(z^-1)`` (companion-matrix eigenvalues)."""
    c = denominator.coefficients if isinstance(denominator, PolyOp) else np.asarray(denominator)
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size <= 1:
        return np.zeros(0)
    return np.abs(np.roots(c))


def is_stable(denominator, radius=STABILITY_RADIUS):
    radii = pole_radii(denominator)
    return bool(radii.size == 0 or radii.max() < radius)


def warn_if_unstable(denominator, what="1/B"):
    radii = pole_radii(denominator)
    if radii.size and radii.max() >= STABILITY_RADIUS:
        warnings.warn(
            f"{what} has a pole of magnitude {radii.max():.12g}", StabilityWarning, stacklevel=3
        )
        return False
    return True


# ---------------------------------------------------------------------------
# array-level helpers shared by the other modules


def shift_rows(x, lag):
    """Delay every row of ``x`` by ``lag`` samples with zero fill."""
    x = np.asarray(x, dtype=float)
    if lag == 0:
        return x.copy()
    out = np.zeros_like(x)
    if lag < x.shape[-1]:
        out[..., lag:] = x[..., :-lag]
    return out


def poly_rows(coefficients, x):
    """Apply a polynomial in ``q^-1`` along the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for lag, c in enumerate(np.asarray(coefficients, dtype=float)):
        if c != 0.0 and lag < x.shape[-1]:
            out[..., lag:] += c * x[..., : x.shape[-1] - lag]
    return out


def filter_rows(numerator, denominator, x):
    """Recursive filtering along the last axis of ``x`` (1-D or 2-D)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = np.ascontiguousarray(np.atleast_2d(x))
    y = _kernels.lfilter_rows(
        np.ascontiguousarray(numerator, dtype=float),
        np.ascontiguousarray(denominator, dtype=float),
        x2,
    )
    return y[0] if squeeze else y


def filter_rows_adjoint(numerator, denominator, x):
    """Multiply by the transposed convolution matrix along the last axis.

    A lower-triangular Toeplitz matrix ``W`` satisfies ``W.T = J W J`` with
    ``J`` the reversal, so the adjoint is time-reversed filtering.
    """
    x = np.asarray(x, dtype=float)
    return filter_rows(numerator, denominator, x[..., ::-1])[..., ::-1]


# ---------------------------------------------------------------------------
# operations on Signal / PolyOp / RationalFilter


def apply_poly(p: PolyOp, u: Signal) -> Signal:
    """``y(k) = sum_i c_i u(k - i)`` with zero samples before ``k = 1``."""
    if not isinstance(p, PolyOp):
        p = PolyOp(p)
    return u.with_samples(poly_rows(p.coefficients, u.samples))


def discrete_derivative(order: int, sample_time: float) -> PolyOp:
    """``delta^order`` with ``delta = (1 - q^-1) / Ts``, expanded in ``q^-1``."""
    if int(order) != order or order < 0:
        raise InvalidInputError(f"derivative order must be a non-negative integer, got {order}")
    if not (math.isfinite(sample_time) and sample_time > 0):
        raise InvalidInputError(f"sample time must be positive, got {sample_time}")
    order = int(order)
    coeffs = np.array([(-1.0) ** i * math.comb(order, i) for i in range(order + 1)])
    return PolyOp(coeffs / sample_time**order)


def filter(f: RationalFilter, u: Signal) -> Signal:  # noqa: A001 - mirrors the operation name
    """Solve ``den(q) y = num(q) u`` recursively, zero initial conditions."""
    if not isinstance(f, RationalFilter):
        raise InvalidInputError("filter expects a RationalFilter")
    y = filter_rows(f.numerator.coefficients, f.denominator.coefficients, u.samples)
    return u.with_samples(y)


def impulse_response(f: RationalFilter, n: int) -> Signal:
    """First ``n`` samples of the response of ``f`` to a unit impulse at ``k = 1``."""
    if n < 1:
        raise InvalidInputError(f"length must be at least 1, got {n}")
    return filter(f, Signal.impulse(n))


@dataclass(frozen=True, eq=False)
class ConvolutionMatrix:
    """Lower-triangular Toeplitz matrix whose product equals ``filter``."""

    entries: np.ndarray
    source_filter: RationalFilter

    def __matmul__(self, x):
        return self.entries @ x

    @property
    def shape(self):
        return self.entries.shape

    @property
    def T(self):  # noqa: N802
        return self.entries.T


def convolution_matrix(f: RationalFilter, n: int) -> ConvolutionMatrix:
    if n < 1:
        raise InvalidInputError(f"length must be at least 1, got {n}")
    h = impulse_response(f, n).samples
    entries = scipy.linalg.toeplitz(h, np.zeros(n))
    return ConvolutionMatrix(entries, f)


# ---------------------------------------------------------------------------
# persistence


def write_signal_csv(path, signal: Signal):
    """Write ``k,value`` rows with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "value"])
        for k, value in enumerate(signal.samples, start=1):
            writer.writerow([k, f"{value:.17g}"])


def read_signal_csv(path, sample_time) -> Signal:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["k", "value"]:
            raise InvalidInputError(f"{path}: expected header 'k,value', got {header}")
        values = [float(row[1]) for row in reader if row]
    return Signal(np.array(values), sample_time)
