"""Fully connected approximator over a sliding window of reference samples.

Layer indexing: ``layer_sizes = (N0, N1, ..., NL)`` gives ``L`` weight
matrices, ``weights[l]`` of shape ``(N_{l+1}, N_l)``. Every layer but the last
applies a bias and the activation; the last one is linear (the *head*), with
an optional bias. The input at sample ``k`` is the window
``(r(k), r(k-1), ..., r(k-N0+1))``, zero before the first sample, optionally
mapped by a fixed matrix ``input_transform``; the output is multiplied by a
fixed ``output_scale``. Neither fixed transform is a trainable parameter.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .signals import Signal, shift_rows

DEFAULT_WINDOW = 5


def _tanh(x):
    return np.tanh(x)


def _tanh_grad(x, fx):
    return 1.0 - fx * fx


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x, fx):
    # subgradient convention: derivative 0 at 0
    return (x > 0.0).astype(float)


_ACTIVATIONS = {"tanh": (_tanh, _tanh_grad), "relu": (_relu, _relu_grad)}
# activations with a compiled row kernel, by kernel code
_KERNEL_CODES = {"tanh": 0, "relu": 1}


def register_activation(name, func, grad):
    """Register an activation; ``grad(x, func(x))`` returns the derivative.

    Custom activations always take the vectorized numpy path.
    """
    _ACTIVATIONS[name] = (func, grad)
    _KERNEL_CODES.pop(name, None)


def _activation(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise InvalidInputError(f"unknown activation {name!r}") from None


@dataclass(eq=False)
class Mlp:
    layer_sizes: tuple
    weights: list
    biases: list
    activation: str = "tanh"
    final_bias: bool = False
    input_transform: np.ndarray | None = None
    output_scale: float = 1.0
    seed: int | None = None
    _shapes: list = field(init=False, repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        sizes = self.layer_sizes
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError(f"invalid layer sizes {sizes}")
        _activation(self.activation)
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(c, dtype=float).reshape(-1) for c in self.biases]
        n_layers = len(sizes) - 1
        if len(self.weights) != n_layers:
            raise InvalidInputError(f"expected {n_layers} weight matrices, got {len(self.weights)}")
        for l, w in enumerate(self.weights):
            if w.shape != (sizes[l + 1], sizes[l]):
                raise InvalidInputError(
                    f"weights[{l}] has shape {w.shape}, expected {(sizes[l + 1], sizes[l])}"
                )
        expected_biases = [sizes[l + 1] for l in range(n_layers - 1)]
        if self.final_bias:
            expected_biases.append(sizes[-1])
        if [c.shape[0] for c in self.biases] != expected_biases:
            raise InvalidInputError(f"bias sizes must be {expected_biases}")
        if self.input_transform is not None:
            t = np.array(self.input_transform, dtype=float)
            if t.shape != (sizes[0], sizes[0]):
                raise InvalidInputError(f"input_transform must be {sizes[0]}x{sizes[0]}")
            self.input_transform = t
        self.output_scale = float(self.output_scale)
        for p in self.weights + self.biases:
            if not np.all(np.isfinite(p)):
                raise InvalidInputError("network parameters must be finite")
        self._shapes = []
        for l in range(n_layers):
            self._shapes.append(("w", l, self.weights[l].shape))
            if l < n_layers - 1:
                self._shapes.append(("c", l, self.biases[l].shape))
        if self.final_bias:
            self._shapes.append(("c", n_layers - 1, self.biases[-1].shape))

    # -- parameter vector -------------------------------------------------

    @property
    def window(self):
        return self.layer_sizes[0]

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, _, s in self._shapes)

    @property
    def n_head(self):
        """Length of the LIP head ``phi`` (last weights plus optional bias)."""
        return self.layer_sizes[-2] + (1 if self.final_bias else 0)

    def _arrays(self):
        for kind, l, _ in self._shapes:
            yield self.weights[l] if kind == "w" else self.biases[l]

    def parameters(self):
        """All trainable parameters flattened in a fixed order."""
        return np.concatenate([p.ravel() for p in self._arrays()])

    def with_parameters(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights = [w.copy() for w in self.weights]
        biases = [c.copy() for c in self.biases]
        pos = 0
        for kind, l, shape in self._shapes:
            size = int(np.prod(shape))
            chunk = theta[pos : pos + size].reshape(shape)
            if kind == "w":
                weights[l] = chunk.copy()
            else:
                biases[l] = chunk.copy()
            pos += size
        return replace(self, weights=weights, biases=biases)

    def head_slice(self):
        """Slice of :meth:`parameters` occupied by the head ``phi``."""
        n_last = int(np.prod(self.weights[-1].shape))
        end = self.n_params
        start = end - n_last - (self.layer_sizes[-1] if self.final_bias else 0)
        return slice(start, end)

    def head(self):
        return self.parameters()[self.head_slice()]

    def with_head(self, phi):
        theta = self.parameters()
        theta[self.head_slice()] = np.asarray(phi, dtype=float)
        return self.with_parameters(theta)

    # -- persistence -------------------------------------------------------

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "final_bias": self.final_bias,
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [c.tolist() for c in self.biases],
            "input_transform": None
            if self.input_transform is None
            else self.input_transform.tolist(),
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            weights=[np.array(w, dtype=float) for w in d["weights"]],
            biases=[np.array(c, dtype=float) for c in d["biases"]],
            activation=d.get("activation", "tanh"),
            final_bias=bool(d.get("final_bias", False)),
            input_transform=d.get("input_transform"),
            output_scale=d.get("output_scale", 1.0),
            seed=d.get("seed"),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def glorot_init(layer_sizes, seed, activation="tanh", final_bias=False, **kwargs) -> Mlp:
    """Weights uniform on ``+-sqrt(6 / (fan_in + fan_out))``, biases zero."""
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidInputError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
    biases = [np.zeros(n) for n in sizes[1:-1]]
    if final_bias:
        biases.append(np.zeros(sizes[-1]))
    return Mlp(sizes, weights, biases, activation, final_bias, seed=seed, **kwargs)


def difference_transform(width, sample_time, references=None):
    """Fixed input map from a raw window to scaled backward differences.

    Row ``i`` applies ``delta^i`` to the window ``(r(k), ..., r(k-width+1))``.
    With ``references`` (arrays or Signals) each row is divided by its RMS over
    the data so that all inputs are of order one.
    """
    from math import comb

    t = np.zeros((width, width))
    for i in range(width):
        for j in range(i + 1):
            t[i, j] = (-1) ** j * comb(i, j) / sample_time**i
    if references is not None:
        rows = [np.asarray(getattr(r, "samples", r), dtype=float) for r in references]
        x = np.concatenate([window_rows(r, width) for r in rows]) @ t.T
        rms = np.sqrt(np.mean(x * x, axis=0))
        t = t / np.where(rms > 0, rms, 1.0)[:, None]
    return t


# ---------------------------------------------------------------------------
# row-level evaluation: X has one input window per row


def window_rows(r, width):
    """Stack delayed copies so that ``X[..., k, i] = r[..., k - i]``."""
    r = np.asarray(r, dtype=float)
    return np.stack([shift_rows(r, i) for i in range(width)], axis=-1)


def _use_kernel(net):
    return _kernels.USING_NUMBA and _kernels.MLP_KERNEL and net.activation in _KERNEL_CODES


def _kernel_biases(net):
    biases = list(net.biases)
    if not net.final_bias:
        biases.append(np.zeros(net.layer_sizes[-1]))
    return tuple(np.ascontiguousarray(c) for c in biases)


def forward_rows(net: Mlp, x):
    """Evaluate ``net`` on windows ``x`` of shape ``(n, N0)``.

    Returns the output (shape ``(n,)`` for a scalar head, else ``(n, NL)``)
    and the cache needed by :func:`backward_rows`.
    """
    h = x @ net.input_transform.T if net.input_transform is not None else x
    if _use_kernel(net):
        h = np.ascontiguousarray(h, dtype=float)
        cache = np.zeros((h.shape[0], sum(net.layer_sizes[1:-1])))
        out = _kernels.mlp_forward_numba(
            h,
            tuple(np.ascontiguousarray(w) for w in net.weights),
            _kernel_biases(net),
            _KERNEL_CODES[net.activation],
            net.final_bias,
            net.output_scale,
            cache,
        )
        if out.shape[-1] == 1:
            out = out[..., 0]
        return out, ("kernel", h, cache)
    act, _ = _activation(net.activation)
    pre, post = [], [h]
    for l in range(len(net.weights) - 1):
        z = h @ net.weights[l].T + net.biases[l]
        h = act(z)
        pre.append(z)
        post.append(h)
    out = h @ net.weights[-1].T
    if net.final_bias:
        out = out + net.biases[-1]
    out = net.output_scale * out
    if out.shape[-1] == 1:
        out = out[..., 0]
    return out, ("numpy", pre, post)


def _flatten_grads(net, grads_w, grads_c):
    parts = []
    for kind, l, _ in net._shapes:
        parts.append((grads_w[l] if kind == "w" else grads_c[l]).ravel())
    return np.concatenate(parts)


def backward_rows(net: Mlp, cache, cotangent):
    """Flat gradient of ``sum(cotangent * output)`` w.r.t. :meth:`Mlp.parameters`."""
    g = np.asarray(cotangent, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if cache[0] == "kernel":
        _, h, hidden = cache
        grads_w = tuple(np.zeros_like(w) for w in net.weights)
        grads_c = tuple(np.zeros(w.shape[0]) for w in net.weights)
        _kernels.mlp_backward_numba(
            h,
            tuple(np.ascontiguousarray(w) for w in net.weights),
            _KERNEL_CODES[net.activation],
            net.final_bias,
            net.output_scale,
            hidden,
            np.ascontiguousarray(g),
            grads_w,
            grads_c,
        )
        return _flatten_grads(net, grads_w, grads_c)
    _, dact = _activation(net.activation)
    _, pre, post = cache
    g = g * net.output_scale
    grads_w = [None] * len(net.weights)
    grads_c = [None] * len(net.weights)
    grads_w[-1] = g.T @ post[-1]
    if net.final_bias:
        grads_c[-1] = g.sum(axis=0)
    delta = g @ net.weights[-1]
    for l in range(len(net.weights) - 2, -1, -1):
        delta = delta * dact(pre[l], post[l + 1])
        grads_w[l] = delta.T @ post[l]
        grads_c[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ net.weights[l]
    return _flatten_grads(net, grads_w, grads_c)


def features_from_cache(net: Mlp, cache):
    """Last hidden layer (scaled by ``output_scale``) from a forward cache.

    With a final bias a constant column is appended, so that the network
    output equals ``features @ net.head()`` exactly.
    """
    if cache[0] == "kernel":
        _, x, hidden = cache
        last = x if len(net.layer_sizes) == 2 else hidden[:, hidden.shape[1] - net.layer_sizes[-2] :]
    else:
        last = cache[2][-1]
    h = net.output_scale * last
    if net.final_bias:
        h = np.concatenate([h, np.full((h.shape[0], 1), net.output_scale)], axis=1)
    return h


def features_rows(net: Mlp, x):
    """:func:`features_from_cache` for windows ``x``, one row per window."""
    return features_from_cache(net, forward_rows(net, x)[1])


# ---------------------------------------------------------------------------
# Signal-level API


def _as_windows(net, r):
    samples = r.samples if isinstance(r, Signal) else np.asarray(r, dtype=float)
    return window_rows(samples, net.window)


def forward(net: Mlp, r: Signal) -> Signal:
    """``g_phi(r)``: the network evaluated on the causal window at every sample."""
    out, _ = forward_rows(net, _as_windows(net, r))
    return r.with_samples(out) if isinstance(r, Signal) else out


def hidden_features(net: Mlp, r: Signal) -> np.ndarray:
    """Feature matrix ``H`` of shape ``(n_head, N)``; ``g_phi(r) = H.T @ phi``."""
    return features_rows(net, _as_windows(net, r)).T


def gradient(net: Mlp, r: Signal, output_cotangent: Signal) -> np.ndarray:
    """``d/dphi sum_k cot(k) g_phi(r)(k)`` as a flat vector like ``net.parameters()``."""
    cot = (
        output_cotangent.samples
        if isinstance(output_cotangent, Signal)
        else np.asarray(output_cotangent, dtype=float)
    )
    _, cache = forward_rows(net, _as_windows(net, r))
    return backward_rows(net, cache, cot)
