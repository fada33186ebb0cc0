"""Linear-in-parameters physical model with shared linear AR dynamics.

The model maps a reference ``r`` to ``f_M`` through

    B(q) f_M(k) = sum_i a_i g_i(psi_i(q) r(k)),   B(q) = 1 + sum_i b_i q^-i,

and its equation-error residual is linear in ``theta = (a, b)`` through the
lifted matrix ``M = [R, -F]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .signals import (
    PolyOp,
    RationalFilter,
    Signal,
    apply_poly,
    discrete_derivative,
    filter_rows,
    poly_rows,
    shift_rows,
    warn_if_unstable,
)

RANK_TOL = 1e-10

_NONLINEARITIES = {
    "identity": lambda x: x,
    "sign": np.sign,
    "cosine": np.cos,
}


def register_nonlinearity(name, func):
    """Register a scalar map under ``name`` for use in a :class:`BasisFunction`.

    ``func`` is applied elementwise through ``np.vectorize`` unless it already
    accepts arrays.
    """
    if name in _NONLINEARITIES:
        raise InvalidInputError(f"nonlinearity {name!r} is already registered")
    probe = np.zeros(2)
    try:
        out = np.asarray(func(probe), dtype=float)
        vectorized = out.shape == probe.shape
    except Exception:
        vectorized = False
    _NONLINEARITIES[name] = func if vectorized else np.vectorize(func, otypes=[float])


def nonlinearity(name):
    try:
        return _NONLINEARITIES[name]
    except KeyError:
        raise InvalidInputError(f"unknown nonlinearity {name!r}") from None


@dataclass(frozen=True)
class BasisFunction:
    psi: PolyOp
    g: str = "identity"

    def __post_init__(self):
        if not isinstance(self.psi, PolyOp):
            object.__setattr__(self, "psi", PolyOp(self.psi))
        nonlinearity(self.g)


@dataclass(frozen=True)
class ModelSpec:
    bases: tuple
    ar_order: int

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        if len(self.bases) < 1:
            raise InvalidInputError("a model needs at least one basis function")
        if self.ar_order < 0:
            raise InvalidInputError(f"AR order must be >= 0, got {self.ar_order}")

    @property
    def n_a(self):
        return len(self.bases)

    @property
    def n_b(self):
        return self.ar_order

    @property
    def n_theta(self):
        return self.n_a + self.n_b

    @classmethod
    def rational(cls, n_a, n_b):
        """Rational transfer function: ``g_i = Id``, ``psi_i = q^-(i-1)``."""
        return cls(tuple(BasisFunction(PolyOp.shift(i)) for i in range(n_a)), n_b)

    @classmethod
    def derivative(cls, n_a, n_b, sample_time):
        """``g_i = Id``, ``psi_i = delta^(i-1)``; spans the same space as
        :meth:`rational` with far better column scaling."""
        return cls(
            tuple(BasisFunction(discrete_derivative(i, sample_time)) for i in range(n_a)),
            n_b,
        )

    def to_dict(self):
        return {
            "ar_order": self.ar_order,
            "bases": [
                {"psi": [float(c) for c in b.psi.coefficients], "g": b.g} for b in self.bases
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(BasisFunction(PolyOp(b["psi"]), b.get("g", "identity")) for b in d["bases"]),
            int(d["ar_order"]),
        )


@dataclass(frozen=True, eq=False)
class ModelTheta:
    a: np.ndarray
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = np.array(self.a, dtype=float, ndmin=1)
        b = np.array(self.b, dtype=float, ndmin=1) if np.size(self.b) else np.zeros(0)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("model coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def vector(self):
        return np.concatenate([self.a, self.b])

    @classmethod
    def from_vector(cls, theta, n_a):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:n_a], theta[n_a:])

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros(spec.n_a), np.zeros(spec.n_b))

    @property
    def denominator(self):
        """Monic ``B(q) = 1 + sum b_i q^-i`` as a :class:`PolyOp`."""
        return PolyOp(np.concatenate([[1.0], self.b]))

    def to_dict(self):
        return {"a": [float(x) for x in self.a], "b": [float(x) for x in self.b]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d.get("b", []))


def _samples(x):
    return x.samples if isinstance(x, Signal) else np.asarray(x, dtype=float)


def regressor_rows(spec, r):
    """``R`` for one or several equal-length references along the last axis.

    Returns shape ``r.shape + (n_a,)``.
    """
    r = np.asarray(r, dtype=float)
    cols = [nonlinearity(b.g)(poly_rows(b.psi.coefficients, r)) for b in spec.bases]
    return np.stack(cols, axis=-1)


def regressor_matrix(spec: ModelSpec, r: Signal) -> np.ndarray:
    """``N x n_a`` matrix whose column ``i`` is ``g_i(psi_i(r))``."""
    return regressor_rows(spec, _samples(r))


def output_rows(fhat, n_b):
    fhat = np.asarray(fhat, dtype=float)
    if n_b == 0:
        return np.zeros(fhat.shape + (0,))
    return np.stack([shift_rows(fhat, i) for i in range(1, n_b + 1)], axis=-1)


def output_matrix_F(fhat: Signal, n_b: int) -> np.ndarray:  # noqa: N802
    """``[q^-1 fhat, ..., q^-n_b fhat]`` with zero fill."""
    fhat = _samples(fhat)
    if n_b < 0 or n_b > fhat.shape[0]:
        raise InvalidInputError(f"AR order {n_b} not in [0, {fhat.shape[0]}]")
    return output_rows(fhat, n_b)


def build_M(spec: ModelSpec, r: Signal, fhat: Signal) -> np.ndarray:  # noqa: N802
    """Lifted equation-error regressor ``M = [R, -F]``."""
    rs, fs = _samples(r), _samples(fhat)
    if rs.shape != fs.shape:
        raise InvalidInputError(f"reference and input lengths differ: {rs.shape} vs {fs.shape}")
    if isinstance(r, Signal) and isinstance(fhat, Signal) and r.sample_time != fhat.sample_time:
        raise InvalidInputError("reference and input sample times differ")
    if spec.n_b > rs.shape[0]:
        raise InvalidInputError(f"AR order {spec.n_b} exceeds signal length {rs.shape[0]}")
    return np.concatenate([regressor_rows(spec, rs), -output_rows(fs, spec.n_b)], axis=-1)


def numerical_rank(matrix, eps=RANK_TOL):
    """Number of singular values at least ``eps * sigma_max``."""
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= eps * s[0]))


def model_feedforward(spec: ModelSpec, theta: ModelTheta, r: Signal) -> Signal:
    """``f_M = (1/B) sum_i a_i g_i(psi_i(r))``."""
    rs = _samples(r)
    excitation = regressor_rows(spec, rs) @ theta.a
    warn_if_unstable(theta.denominator)
    fm = filter_rows(np.ones(1), theta.denominator.coefficients, excitation)
    if isinstance(r, Signal):
        return r.with_samples(fm)
    return fm


def transfer_function(spec: ModelSpec, theta: ModelTheta) -> RationalFilter:
    """``A(q)/B(q)`` for specs whose bases are all linear (``g = identity``)."""
    if any(b.g != "identity" for b in spec.bases):
        raise InvalidInputError("transfer_function needs identity nonlinearities")
    num = PolyOp([0.0])
    for coef, basis in zip(theta.a, spec.bases):
        num = num + basis.psi * coef
    return RationalFilter(num, theta.denominator)


__all__ = [
    "BasisFunction",
    "ModelSpec",
    "ModelTheta",
    "build_M",
    "model_feedforward",
    "nonlinearity",
    "numerical_rank",
    "output_matrix_F",
    "register_nonlinearity",
    "regressor_matrix",
    "transfer_function",
]
