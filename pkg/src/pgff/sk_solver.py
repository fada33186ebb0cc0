"""Sanathanan-Koerner iterations for output-error fitting of the parallel
model + network feedforward, with an optional orthogonal-projection penalty.

Iteration ``j`` fixes the weight ``1/B^{j-1}`` and minimizes

    J^j(theta, phi) = sum || W^{j-1} (fhat - M theta - g_phi(r)) ||^2
                      + lam * || (Sigma V^T)^-1 U1^T W^{j-1} g_phi(r) ||^2,

where ``W^{j-1}`` is the convolution matrix of ``1/B^{j-1}`` and
``U1 Sigma V^T`` the thin SVD of the stacked ``W^{j-1} M``. The penalty does
not depend on ``theta``, so for fixed ``phi`` the minimizing ``theta`` is a
weighted least-squares solution. The inner problem is therefore solved by
variable projection: ``theta`` exactly, ``phi`` by a first-order method on
the reduced objective, whose gradient is the partial gradient at the optimal
``theta``.

All trajectories are stacked into zero-padded row arrays; filtering is causal
so padding never leaks into the valid samples, and every cost is restricted to
the valid mask.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import decomp
from .errors import InvalidInputError, RankDeficientError, SolverDivergedError, StabilityWarning
from .model import ModelSpec, ModelTheta, build_M, model_feedforward, regressor_rows
from .neural import (
    Mlp,
    backward_rows,
    features_from_cache,
    forward,
    forward_rows,
    glorot_init,
    window_rows,
)
from .signals import (
    PolyOp,
    Signal,
    filter_rows,
    filter_rows_adjoint,
    poly_rows,
    warn_if_unstable,
)

log = logging.getLogger(__name__)

INIT_STRATEGIES = ("best-linear-approximation", "zeros", "given")
OPTIMIZERS = ("adam", "gd", "lbfgs")


@dataclass
class SkConfig:
    max_sk_iterations: int = 30
    sk_tolerance: float = 1e-6
    lam: float = 1e-2
    inner_optimizer: str = "adam"
    inner_steps: int = 2000
    inner_learning_rate: float = 1e-3
    seed: int = 0
    init_strategy: str = "best-linear-approximation"
    initial_theta: ModelTheta | None = None
    train_hidden: bool = True
    # eliminate the network head together with theta by the closed-form
    # regularized solve, leaving only the hidden layers to the optimizer
    head_solve: bool = True
    max_halvings: int = 30
    # shrink an SK update toward the previous iterate while it raises J_OE
    oe_safeguard: bool = False
    # leading SK iterations that hold b at B^{j-1}, i.e. minimize J_OE over
    # (a, phi) exactly, so that phi learns before the denominator moves
    warmup_iterations: int = 0

    def __post_init__(self):
        if self.max_sk_iterations < 1:
            raise InvalidInputError("max_sk_iterations must be >= 1")
        if self.warmup_iterations < 0:
            raise InvalidInputError("warmup_iterations must be >= 0")
        if not self.lam >= 0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam}")
        if not self.inner_learning_rate > 0:
            raise InvalidInputError("inner_learning_rate must be > 0")
        if self.inner_optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"inner_optimizer must be one of {OPTIMIZERS}")
        if self.init_strategy not in INIT_STRATEGIES:
            raise InvalidInputError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if self.init_strategy == "given" and self.initial_theta is None:
            raise InvalidInputError("init_strategy 'given' needs initial_theta")

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "initial_theta"}
        if self.initial_theta is not None:
            d["initial_theta"] = self.initial_theta.to_dict()
        return d


@dataclass
class SkState:
    iteration: int
    theta: ModelTheta
    net: Mlp | None
    weight: PolyOp
    sk_costs: list = field(default_factory=list)
    reg_values: list = field(default_factory=list)
    oe_costs: list = field(default_factory=list)
    inner_histories: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    wall_time: float = 0.0

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "theta": self.theta.to_dict(),
            "net": None if self.net is None else self.net.to_dict(),
            "weight": [float(c) for c in self.weight.coefficients],
            "sk_costs": [float(x) for x in self.sk_costs],
            "reg_values": [float(x) for x in self.reg_values],
            "oe_costs": [float(x) for x in self.oe_costs],
            "step_sizes": [float(x) for x in self.step_sizes],
            "converged": self.converged,
            "stalled": self.stalled,
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# stacked dataset


def as_pairs(data):
    """Accept a ``Dataset``, a single ``(r, fhat)`` pair, or a sequence of pairs."""
    if hasattr(data, "trajectories"):
        data = data.trajectories
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], (Signal, np.ndarray)):
        data = [data]
    pairs = []
    for r, fhat in data:
        rs = r.samples if isinstance(r, Signal) else np.asarray(r, dtype=float)
        fs = fhat.samples if isinstance(fhat, Signal) else np.asarray(fhat, dtype=float)
        if rs.shape != fs.shape or rs.ndim != 1:
            raise InvalidInputError(f"paired lengths differ: {rs.shape} vs {fs.shape}")
        pairs.append((rs, fs))
    if not pairs:
        raise InvalidInputError("dataset is empty")
    return pairs


class _Batch:
    """All trajectories as zero-padded ``(n_traj, n_max)`` rows.

    Quantities the costs act on are kept as flat vectors over the valid
    samples (trajectory-major order); filtering scatters them back into the
    padded layout. Causal filtering never carries padding into valid samples.
    """

    def __init__(self, spec: ModelSpec, data, window=None):
        pairs = as_pairs(data)
        self.spec = spec
        self.lengths = np.array([len(r) for r, _ in pairs])
        n, n_max = len(pairs), int(self.lengths.max())
        self.r = np.zeros((n, n_max))
        self.fhat = np.zeros((n, n_max))
        self.mask = np.zeros((n, n_max), dtype=bool)
        for i, (r, fhat) in enumerate(pairs):
            k = len(r)
            self.r[i, :k] = r
            self.fhat[i, :k] = fhat
            self.mask[i, :k] = True
        self.M = np.concatenate([build_M(spec, r, fhat) for r, fhat in pairs])
        self.fhat_valid = self.fhat[self.mask]
        self.windows = None
        if window is not None:
            self.windows = window_rows(self.r, window)[self.mask]

    @property
    def shape(self):
        return self.r.shape

    def scatter(self, x):
        out = np.zeros(self.shape + x.shape[1:])
        out[self.mask] = x
        return out

    def weighted(self, den, x):
        """``W x`` for flat ``x`` of shape ``(n_valid,)`` or ``(n_valid, p)``."""
        num = np.ones(1)
        full = self.scatter(x)
        if full.ndim == 2:
            return filter_rows(num, den, full)[self.mask]
        n, n_max, p = full.shape
        flat = np.ascontiguousarray(full.transpose(0, 2, 1).reshape(n * p, n_max))
        out = filter_rows(num, den, flat).reshape(n, p, n_max).transpose(0, 2, 1)
        return out[self.mask]

    def weighted_adjoint(self, den, x):
        """``W^T x`` for flat ``x`` of shape ``(n_valid,)``."""
        return filter_rows_adjoint(np.ones(1), den, self.scatter(x))[self.mask]

    def net_forward(self, net):
        return forward_rows(net, self.windows)


@dataclass
class _Evaluation:
    value: float
    J: float  # noqa: N815
    R: float  # noqa: N815
    theta: np.ndarray
    net: Mlp | None
    grad: np.ndarray | None


class _WeightedProblem:
    """One SK iteration: the weight ``1/B^{j-1}`` is fixed.

    Holds the SVD of the stacked ``W M``; ``theta`` is always eliminated by
    weighted least squares, and optionally the network head as well.
    With ``fixed_b`` the denominator is held at the given coefficients and
    only ``a`` is solved for; for ``fixed_b`` equal to the weight's own
    coefficients the cost is then exactly the output error.
    """

    def __init__(self, batch: _Batch, den, need_split=False, fixed_b=None):
        self.batch = batch
        self.den = np.asarray(den, dtype=float)
        self.fixed_b = None if fixed_b is None else np.asarray(fixed_b, dtype=float)
        if self.fixed_b is None:
            A = batch.weighted(self.den, batch.M)
            self.Wf = batch.weighted(self.den, batch.fhat_valid)
        else:
            n_a = batch.spec.n_a
            A = batch.weighted(self.den, batch.M[:, :n_a])
            self.Wf = batch.weighted(self.den, batch.fhat_valid - batch.M[:, n_a:] @ self.fixed_b)
        self.A = A
        u, s, vt = np.linalg.svd(A, full_matrices=False)
        cutoff = np.finfo(float).eps * max(A.shape) * (s[0] if s.size else 0.0)
        keep = s > cutoff
        self.U, self.s, self.V = u[:, keep], s[keep], vt[keep].T
        self.split = None
        if s.size and s[-1] >= decomp.RANK_TOL * s[0] and A.shape[0] > A.shape[1]:
            self.split = decomp.SvdSplit(u, s, vt.T)
        elif need_split:
            raise RankDeficientError(
                f"weighted regressor W M is rank deficient: sigma_min/sigma_max = "
                f"{(s[-1] / s[0]) if s.size and s[0] else 0.0:.3g}",
                sigma_min=float(s[-1]) if s.size else 0.0,
                sigma_max=float(s[0]) if s.size else 0.0,
            )

    def solve_theta(self, y):
        """Minimum-norm ``argmin_theta ||y - W M theta||``."""
        return self._full(self.V @ ((self.U.T @ y) / self.s))

    def _full(self, theta):
        return theta if self.fixed_b is None else np.concatenate([theta, self.fixed_b])

    def _free(self, theta):
        return theta if self.fixed_b is None else theta[: self.A.shape[1]]

    def evaluate(self, net: Mlp | None, lam, solve_head=False, with_grad=True):
        """``J^j + lam R^{j-1}`` at the optimal ``theta`` (and head).

        The gradient covers all network parameters; at an optimal head its
        head block vanishes, so callers optimizing the hidden layers only can
        slice it off.
        """
        if net is None:
            theta = self.solve_theta(self.Wf)
            res = self.Wf - self.A @ self._free(theta)
            J = float(res @ res)
            return _Evaluation(J, J, 0.0, theta, None, None)
        b = self.batch
        out, cache = b.net_forward(net)
        if solve_head:
            H = features_from_cache(net, cache)
            WH = b.weighted(self.den, H)
            method = "decoupled" if lam > 0 else "stacked"
            _, head = decomp.regularized_lip_solve(
                self.A, WH.T, self.Wf, lam, method=method, split=self.split
            )
            net = net.with_head(head)
            Wg = WH @ head
        else:
            Wg = b.weighted(self.den, out)
        y = self.Wf - Wg
        coef = self.U.T @ y
        res = y - self.U @ coef
        theta = self._full(self.V @ (coef / self.s))
        J = float(res @ res)
        R = 0.0
        if lam > 0:
            sp = self.split.scaled_projection(Wg)
            R = float(sp @ sp)
        grad = None
        if with_grad:
            dz = -2.0 * res
            if lam > 0:
                dz = dz + lam * 2.0 * (self.split.U1 @ (sp / self.split.Sigma))
            grad = backward_rows(net, cache, b.weighted_adjoint(self.den, dz))
        return _Evaluation(J + lam * R, J, R, theta, net, grad)


    def cost_at(self, theta, net: Mlp | None, lam):
        """``(J, R)`` at an explicit ``theta`` and network, nothing eliminated."""
        Wg = np.zeros_like(self.Wf) if net is None else self.batch.weighted(
            self.den, self.batch.net_forward(net)[0]
        )
        z = self.Wf - self.A @ self._free(theta) - Wg
        R = 0.0
        if lam > 0 and net is not None:
            sp = self.split.scaled_projection(Wg)
            R = float(sp @ sp)
        return float(z @ z), R


# ---------------------------------------------------------------------------
# costs


def _net_output(net, batch):
    if net is None:
        return np.zeros(batch.shape)
    return batch.scatter(batch.net_forward(net)[0])


def oe_cost(spec: ModelSpec, theta: ModelTheta, net: Mlp | None, data) -> float:
    """``sum_k (fhat - (1/B)(A(r) + g_phi(r)))^2`` over all trajectories."""
    return _oe_cost(_Batch(spec, data, None if net is None else net.window), theta, net)


def _oe_cost(batch, theta, net):
    spec = batch.spec
    excitation = regressor_rows(spec, batch.r) @ theta.a + _net_output(net, batch)
    warn_if_unstable(theta.denominator)
    with np.errstate(over="ignore", invalid="ignore"):
        f = filter_rows(np.ones(1), theta.denominator.coefficients, excitation)
        err = (batch.fhat - f)[batch.mask]
        value = float(err @ err)
    if not math.isfinite(value):
        raise FloatingPointError("output-error cost overflowed; 1/B is likely unstable")
    return value


def _weight_coefficients(weight):
    if isinstance(weight, SkState):
        weight = weight.weight
    if isinstance(weight, PolyOp):
        return weight.coefficients
    coeffs = np.asarray(getattr(weight, "coefficients", weight), dtype=float)
    if coeffs[0] != 1.0:
        raise InvalidInputError("the SK weight denominator must be monic")
    return coeffs


def sk_cost(weight, spec: ModelSpec, theta: ModelTheta, net: Mlp | None, data) -> float:
    """``sum_k ((1/B^{j-1})(B fhat - A(r) - g_phi(r)))^2``.

    ``weight`` is the previous denominator ``B^{j-1}`` (a ``PolyOp``, a
    coefficient array, or an :class:`SkState`).
    """
    den = _weight_coefficients(weight)
    batch = _Batch(spec, data, None if net is None else net.window)
    bf = poly_rows(theta.denominator.coefficients, batch.fhat)
    inner = bf - regressor_rows(spec, batch.r) @ theta.a - _net_output(net, batch)
    with np.errstate(over="ignore", invalid="ignore"):
        z = filter_rows(np.ones(1), den, np.where(batch.mask, inner, 0.0))[batch.mask]
        value = float(z @ z)
    if not math.isfinite(value):
        raise FloatingPointError("SK cost overflowed; 1/B^{j-1} is likely unstable")
    return value


def sk_objective(weight, spec: ModelSpec, theta, net: Mlp | None, data, lam=0.0):
    """``J^j + lam R^{j-1}`` and its exact gradient at explicit ``(theta, phi)``.

    Returns ``(value, grad_theta, grad_phi)``; ``grad_phi`` is ``None`` without
    a network. ``theta`` may be a :class:`ModelTheta` or a flat vector.
    """
    den = _weight_coefficients(weight)
    batch = _Batch(spec, data, None if net is None else net.window)
    problem = _WeightedProblem(batch, den, need_split=lam > 0 and net is not None)
    theta_vec = theta.vector if isinstance(theta, ModelTheta) else np.asarray(theta, dtype=float)
    if net is None:
        Wg, cache = np.zeros_like(problem.Wf), None
    else:
        out, cache = batch.net_forward(net)
        Wg = batch.weighted(den, out)
    z = problem.Wf - problem.A @ theta_vec - Wg
    value = float(z @ z)
    dz_g = -2.0 * z
    if lam > 0 and net is not None:
        sp = problem.split.scaled_projection(Wg)
        value += lam * float(sp @ sp)
        dz_g = dz_g + lam * 2.0 * (problem.split.U1 @ (sp / problem.split.Sigma))
    grad_theta = -2.0 * problem.A.T @ z
    grad_phi = None
    if net is not None:
        grad_phi = backward_rows(net, cache, batch.weighted_adjoint(den, dz_g))
    return value, grad_theta, grad_phi


def gradient_error(weight, spec: ModelSpec, theta, net: Mlp, data, lam=0.0, step=1e-6):
    """Worst relative gap between :func:`sk_objective` gradients and central differences.

    Entries with tiny derivatives are compared against ``1e-3`` times the
    largest one instead of themselves.
    """
    theta = theta.vector if isinstance(theta, ModelTheta) else np.asarray(theta, dtype=float)
    p0 = net.parameters()
    _, g_theta, g_phi = sk_objective(weight, spec, theta, net, data, lam)
    analytic = np.concatenate([g_theta, g_phi])
    x0 = np.concatenate([theta, p0])
    fd = np.empty_like(x0)
    n = theta.size
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = step
        vals = []
        for x in (x0 + e, x0 - e):
            vals.append(sk_objective(weight, spec, x[:n], net.with_parameters(x[n:]), data, lam)[0])
        fd[i] = (vals[0] - vals[1]) / (2 * step)
    scale = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
    return float(np.max(np.abs(analytic - fd) / scale))


# ---------------------------------------------------------------------------
# closed-form first iteration


def _stacked_lip(spec, net, data):
    batch = _Batch(spec, data, None if net is None else net.window)
    if net is None:
        H = np.zeros((0, batch.M.shape[0]))
    else:
        H = features_from_cache(net, batch.net_forward(net)[1]).T
    return batch.M, H, batch.fhat_valid


def lip_first_iteration(spec: ModelSpec, net_frozen: Mlp | None, data, lam):
    """First SK iteration (``B^0 = 1``) with hidden layers frozen.

    Returns ``(theta, phi_head)``; ``phi_head`` is empty without a network.
    """
    M, H, fhat = _stacked_lip(spec, net_frozen, data)
    if H.shape[0] == 0:
        return ModelTheta.from_vector(decomp.pinv_solve(M, fhat), spec.n_a), np.zeros(0)
    theta, phi = decomp.regularized_lip_solve(M, H, fhat, lam)
    return ModelTheta.from_vector(theta, spec.n_a), phi


def best_linear_approximation(spec: ModelSpec, data) -> ModelTheta:
    """Equation-error least squares over ``(a, b)`` ignoring the network."""
    return lip_first_iteration(spec, None, data, 0.0)[0]


# ---------------------------------------------------------------------------
# iterations


def _lbfgs(objective, x0, steps):
    """Limited-memory BFGS; its line search already enforces decrease."""
    history = [objective(x0)[0]]

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = optimize.minimize(
        objective, x0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxiter": steps, "maxfun": 2 * steps + 20},
    )
    if not (math.isfinite(res.fun) and res.fun <= history[0]):
        return x0.copy(), np.array(history[:1])
    return res.x, np.array(history)


def _minimize(objective, x0, steps, lr0, kind, max_halvings):
    """First-order descent that never accepts an increase of ``objective``.

    ``objective(x)`` returns ``(value, grad)``. A step that raises the value
    is retried with half the learning rate; the rate recovers by doubling
    after every accepted step, capped at ``lr0``.
    """
    if kind == "lbfgs":
        return _lbfgs(objective, x0, steps)
    b1, b2, eps = 0.9, 0.999, 1e-8
    x = x0.copy()
    f, g = objective(x)
    history = [f]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr = lr0
    for t in range(1, steps + 1):
        if kind == "adam":
            m_new = b1 * m + (1 - b1) * g
            v_new = b2 * v + (1 - b2) * g * g
            direction = (m_new / (1 - b1**t)) / (np.sqrt(v_new / (1 - b2**t)) + eps)
        else:
            m_new, v_new, direction = m, v, g
        for _ in range(max_halvings):
            cand = x - lr * direction
            fc, gc = objective(cand)
            if math.isfinite(fc) and fc <= f:
                break
            lr *= 0.5
        else:
            break
        x, f, g, m, v = cand, fc, gc, m_new, v_new
        history.append(f)
        lr = min(lr0, 2.0 * lr)
    return x, np.array(history)


def _initial_theta(config, spec, data):
    if config.init_strategy == "zeros":
        return ModelTheta.zeros(spec)
    if config.init_strategy == "given":
        return config.initial_theta
    return best_linear_approximation(spec, data)


def _relative_change(new, old):
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    return diff / denom if denom > 0 else (0.0 if diff == 0 else math.inf)


def _inner(config, problem, net, lam):
    """Step (1) of an SK iteration; returns the final evaluation and history."""
    if net is None:
        ev = problem.evaluate(None, lam)
        return ev, np.array([ev.value])
    if not config.train_hidden:
        ev = problem.evaluate(net, lam, solve_head=True, with_grad=False)
        return ev, np.array([ev.value])
    full = net.parameters()
    if config.head_solve:
        n_free = net.head_slice().start

        def build(x):
            params = full.copy()
            params[:n_free] = x
            return net.with_parameters(params)

        def objective(x):
            ev = problem.evaluate(build(x), lam, solve_head=True)
            return ev.value, ev.grad[:n_free]

        x0 = full[:n_free]
    else:

        def build(x):
            return net.with_parameters(x)

        def objective(x):
            ev = problem.evaluate(build(x), lam)
            return ev.value, ev.grad

        x0 = full
    x, history = _minimize(
        objective,
        x0,
        config.inner_steps,
        config.inner_learning_rate,
        config.inner_optimizer,
        config.max_halvings,
    )
    ev = problem.evaluate(build(x), lam, solve_head=config.head_solve, with_grad=False)
    return ev, history


def _safe_oe(batch, theta, net):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        try:
            return _oe_cost(batch, theta, net)
        except FloatingPointError:
            return math.inf


def _damped_update(config, batch, problem, state, ev, lam, previous_oe):
    """Blend ``(theta, phi)`` toward the previous iterate until J_OE stops rising.

    Returns ``(theta, net, J, R, oe, step)``; ``step == 0`` means no blend helped.
    """
    n_a = batch.spec.n_a
    theta_new = ev.theta
    theta_old = state.theta.vector
    p_new = None if ev.net is None else ev.net.parameters()
    p_old = None if state.net is None else state.net.parameters()
    step = 1.0
    for _ in range(config.max_halvings):
        step *= 0.5
        theta = theta_old + step * (theta_new - theta_old)
        net = None if ev.net is None else ev.net.with_parameters(p_old + step * (p_new - p_old))
        cand = ModelTheta.from_vector(theta, n_a)
        oe = _safe_oe(batch, cand, net)
        if oe <= previous_oe:
            J, R = problem.cost_at(theta, net, lam)
            return cand, net, J, R, oe, step
    J, R = problem.cost_at(theta_old, state.net, lam)
    return state.theta, state.net, J, R, previous_oe, 0.0


def _run(config: SkConfig, spec: ModelSpec, net, data, lam) -> SkState:
    start = time.perf_counter()
    if isinstance(net, (tuple, list)):
        net = glorot_init(net, config.seed)
    if net is not None and net.layer_sizes[-1] != 1:
        raise InvalidInputError("the network must have a scalar output")
    batch = _Batch(spec, data, None if net is None else net.window)
    theta = _initial_theta(config, spec, data)
    state = SkState(0, theta, net, theta.denominator)
    lam = lam if net is not None else 0.0

    previous_oe = _safe_oe(batch, theta, net) if config.oe_safeguard else math.inf

    for j in range(1, config.max_sk_iterations + 1):
        warn_if_unstable(state.weight, what=f"1/B^{j - 1}")
        hold = state.theta.b if j <= config.warmup_iterations else None
        problem = _WeightedProblem(
            batch, state.weight.coefficients, need_split=lam > 0, fixed_b=hold
        )
        ev, history = _inner(config, problem, state.net, lam)
        state.iteration = j
        state.inner_histories.append(history)
        if not (math.isfinite(ev.value) and np.all(np.isfinite(ev.theta))):
            state.sk_costs.append(ev.J)
            state.reg_values.append(ev.R)
            state.wall_time = time.perf_counter() - start
            raise SolverDivergedError(f"non-finite objective in SK iteration {j}", state)
        new_theta = ModelTheta.from_vector(ev.theta, spec.n_a)
        new_net, J, R, step = ev.net, ev.J, ev.R, 1.0
        oe = _safe_oe(batch, new_theta, new_net)
        if config.oe_safeguard and not oe <= previous_oe:
            new_theta, new_net, J, R, oe, step = _damped_update(
                config, batch, problem, state, ev, lam, previous_oe
            )
        state.sk_costs.append(J)
        state.reg_values.append(R)
        state.oe_costs.append(oe)
        state.step_sizes.append(step)
        change = _relative_change(new_theta.vector, state.theta.vector)
        state.theta, state.net = new_theta, new_net
        state.weight = new_theta.denominator
        previous_oe = oe if config.oe_safeguard else math.inf
        log.info(
            "SK %d: J=%.6g R=%.6g J_OE=%.6g step=%.3g change=%.3g", j, J, R, oe, step, change
        )
        if step == 0.0:
            state.stalled = True
            break
        if change < config.sk_tolerance and j > config.warmup_iterations:
            state.converged = True
            break
    state.wall_time = time.perf_counter() - start
    return state


def sk_fit(config: SkConfig, spec: ModelSpec, net, data) -> SkState:
    """SK iterations for the output-error criterion, no regularization."""
    return _run(config, spec, net, data, 0.0)


def sk_fit_regularized(config: SkConfig, spec: ModelSpec, net, data) -> SkState:
    """SK iterations with the iteration-varying orthogonal-projection penalty."""
    return _run(config, spec, net, data, config.lam)


def feedforward_parts(spec: ModelSpec, theta: ModelTheta, net: Mlp | None, r: Signal):
    """Split the generated input into ``(f_M, f_C)``.

    ``f_M = A(r)/B`` is the model part and ``f_C = g_phi(r)/B`` the network
    correction; their sum is the feedforward signal.
    """
    f_m = model_feedforward(spec, theta, r)
    if net is None:
        return f_m, r.with_samples(np.zeros(len(r)))
    g = forward(net, r).samples
    f_c = filter_rows(np.ones(1), theta.denominator.coefficients, g)
    return f_m, r.with_samples(f_c)
