"""Orthogonal decomposition of the equation-error least-squares problem.

With the thin SVD ``M = U1 diag(s) V^T`` the residual splits into the model
output space ``im U1`` and its complement. The complement basis ``U2`` is
never formed: products with it go through ``I - U1 U1^T``.

Matrix conventions follow the lifted criterion
``|| fhat - M theta - H^T phi ||^2`` with ``H`` of shape ``(n_phi, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, RankDeficientError
from .signals import ConvolutionMatrix

RANK_TOL = 1e-10
KERNEL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SvdSplit:
    U1: np.ndarray
    Sigma: np.ndarray  # singular values, descending
    V: np.ndarray

    @property
    def n_theta(self):
        return self.Sigma.shape[0]

    def model_coordinates(self, x):
        """``(Sigma V^T)^-1 U1^T x``, i.e. ``M^+ x``, without forming an inverse."""
        return self.V @ ((self.U1.T @ x) / _col(self.Sigma, x))

    def scaled_projection(self, x):
        """``Sigma^-1 U1^T x``; same norm as :meth:`model_coordinates`."""
        return (self.U1.T @ x) / _col(self.Sigma, x)

    def project_model(self, x):
        return self.U1 @ (self.U1.T @ x)

    def project_orthogonal(self, x):
        return x - self.project_model(x)

    def reconstruct(self):
        return (self.U1 * self.Sigma) @ self.V.T

    def U2(self):  # noqa: N802
        """Orthonormal complement of ``U1`` (dense, ``N x (N - n_theta)``).

        For small problems and tests only.
        """
        n = self.U1.shape[0]
        q, _ = np.linalg.qr(np.concatenate([self.U1, np.eye(n)], axis=1))
        full = q[:, :n]
        # the first n_theta columns of q span im U1 up to sign
        return full[:, self.n_theta :]


def _col(sigma, x):
    return sigma[:, None] if np.ndim(x) == 2 else sigma


def _dense(a):
    if isinstance(a, ConvolutionMatrix):
        return a.entries
    return np.asarray(a, dtype=float)


def svd_split(M) -> SvdSplit:  # noqa: N803
    """Thin SVD of a tall, full-column-rank ``M``."""
    M = _dense(M)
    if M.ndim != 2:
        raise InvalidInputError(f"M must be a matrix, got shape {M.shape}")
    n, p = M.shape
    if n <= p:
        raise InvalidInputError(f"M must be tall, got {n} x {p}")
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0 or s[-1] < RANK_TOL * s[0]:
        raise RankDeficientError(
            f"M is rank deficient: sigma_min = {s[-1]:.6g} < {RANK_TOL:g} * sigma_max "
            f"(sigma_max = {s[0]:.6g})",
            sigma_min=float(s[-1]),
            sigma_max=float(s[0]),
        )
    return SvdSplit(u, s, vt.T)


def pinv_solve(A, y):  # noqa: N803
    """Minimum-norm least-squares solution ``A^+ y``."""
    A = _dense(A)
    return np.linalg.lstsq(A, np.asarray(y, dtype=float), rcond=None)[0]


def kernel_v_theta(split: SvdSplit, H, v_phi):  # noqa: N803
    """``v_theta = -(Sigma V^T)^-1 U1^T H^T v_phi``."""
    H = np.asarray(H, dtype=float)
    return -split.model_coordinates(H.T @ np.asarray(v_phi, dtype=float))


def kernel_basis(A, tol=KERNEL_TOL):  # noqa: N803
    """Orthonormal basis (columns) of the numerical kernel of ``A``.

    Singular values below ``tol * sigma_max`` count as zero.
    """
    A = _dense(A)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(A.shape[1])
    rank = int(np.sum(s >= tol * s[0]))
    return vt[rank:].T


def lifted_cost(M, H, fhat, theta, phi):  # noqa: N803
    """Direct evaluation of ``|| fhat - M theta - H^T phi ||^2``."""
    r = np.asarray(fhat) - _dense(M) @ theta - np.asarray(H).T @ phi
    return float(r @ r)


def decoupled_cost(split: SvdSplit, H, fhat, theta, phi_head):  # noqa: N803
    """Equation-error cost split into model-space and orthogonal parts.

    Returns ``(total, in_model_space, orthogonal)``. The two parts are computed
    independently; ``total`` is their sum.
    """
    H = np.asarray(H, dtype=float)
    fhat = np.asarray(fhat, dtype=float)
    approx = H.T @ np.asarray(phi_head, dtype=float)
    top = split.U1.T @ fhat - split.Sigma * (split.V.T @ theta) - split.U1.T @ approx
    model_part = float(top @ top)
    rest = split.project_orthogonal(fhat - approx)
    orth_part = float(rest @ rest)
    return model_part + orth_part, model_part, orth_part


def op_regularizer(split: SvdSplit, H, phi_head):  # noqa: N803
    """``R(phi) = ||(Sigma V^T)^-1 U1^T H^T phi||^2`` (callers multiply by lambda)."""
    s = split.scaled_projection(np.asarray(H, dtype=float).T @ np.asarray(phi_head, dtype=float))
    return float(s @ s)


def regularized_cost(M, H, fhat, theta, phi, lam, split=None):  # noqa: N803
    """Lifted cost plus ``lam * R(phi)``."""
    split = split or svd_split(M)
    return lifted_cost(M, H, fhat, theta, phi) + lam * op_regularizer(split, H, phi)


def regularized_lip_solve(M, H, fhat, lam, method="stacked", split=None):  # noqa: N803
    """Minimize ``||fhat - M theta - H^T phi||^2 + lam R(phi)``.

    ``method="stacked"`` solves the row-augmented system in one minimum-norm
    least-squares call. ``method="decoupled"`` first solves for ``phi`` in the
    orthogonal complement plus regularizer rows, then recovers ``theta`` from
    the model-space rows. Both give the same ``theta`` whenever ``M`` has full
    column rank; ``phi`` may differ along directions with ``H^T phi = 0``.
    A precomputed ``split`` of ``M`` may be passed to skip the SVD.
    """
    M = _dense(M)
    H = np.asarray(H, dtype=float)
    fhat = np.asarray(fhat, dtype=float)
    n_theta = M.shape[1]
    n_phi = H.shape[0]
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    if lam == 0 and method == "stacked":
        x = pinv_solve(np.concatenate([M, H.T], axis=1), fhat)
        return x[:n_theta], x[n_theta:]
    split = split or svd_split(M)
    Ht = H.T
    reg_rows = np.sqrt(lam) * (split.U1.T @ Ht) / split.Sigma[:, None]
    if method == "stacked":
        top = np.concatenate([M, Ht], axis=1)
        bottom = np.concatenate([np.zeros((n_theta, n_theta)), reg_rows], axis=1)
        rhs = np.concatenate([fhat, np.zeros(n_theta)])
        x = pinv_solve(np.concatenate([top, bottom], axis=0), rhs)
        return x[:n_theta], x[n_theta:]
    if method == "decoupled":
        a = np.concatenate([split.project_orthogonal(Ht), reg_rows], axis=0)
        rhs = np.concatenate([split.project_orthogonal(fhat), np.zeros(n_theta)])
        phi = pinv_solve(a, rhs) if n_phi else np.zeros(0)
        theta = split.model_coordinates(fhat - Ht @ phi)
        return theta, phi
    raise InvalidInputError(f"unknown method {method!r}")


def iteration_regularizer(W, M, g_phi_output, return_cotangent=False, split=None):  # noqa: N803
    """``R = ||(Sigma V^T)^-1 U1^T W g||^2`` with the SVD of ``W M``.

    With ``return_cotangent`` also returns ``dR/dg`` (a vector like ``g``),
    ready to be pulled back through the network.
    """
    W = _dense(W)
    g = np.asarray(getattr(g_phi_output, "samples", g_phi_output), dtype=float)
    split = split or svd_split(W @ _dense(M))
    s = split.scaled_projection(W @ g)
    value = float(s @ s)
    if not return_cotangent:
        return value
    cot = W.T @ (split.U1 @ (2.0 * s / split.Sigma))
    return value, cot
