import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgff.errors import InvalidInputError, StabilityWarning
from pgff.model import (
    BasisFunction,
    ModelSpec,
    ModelTheta,
    build_M,
    model_feedforward,
    nonlinearity,
    numerical_rank,
    output_matrix_F,
    register_nonlinearity,
    regressor_matrix,
    transfer_function,
)
from pgff.neural import glorot_init, hidden_features
from pgff.signals import PolyOp, RationalFilter, Signal, discrete_derivative, filter


def sig(values, ts=1.0):
    return Signal(np.asarray(values, dtype=float), ts)


class TestRegressorMatrix:
    def test_single_identity_basis(self):
        spec = ModelSpec((BasisFunction(PolyOp([1.0])),), 0)
        r = sig([4, 5, 6])
        assert np.array_equal(regressor_matrix(spec, r), [[4], [5], [6]])

    def test_delay_column(self):
        spec = ModelSpec((BasisFunction(PolyOp([0.0, 1.0])),), 0)
        assert np.array_equal(regressor_matrix(spec, sig([1, 2, 3]))[:, 0], [0, 1, 2])

    def test_sign_of_difference(self):
        spec = ModelSpec((BasisFunction(discrete_derivative(1, 1.0), "sign"),), 0)
        assert np.array_equal(regressor_matrix(spec, sig([0, 1, 0]))[:, 0], [0, 1, -1])

    def test_custom_nonlinearity(self):
        register_nonlinearity("cube_test", lambda x: x**3)
        spec = ModelSpec((BasisFunction(PolyOp([1.0]), "cube_test"),), 0)
        assert np.array_equal(regressor_matrix(spec, sig([1, 2]))[:, 0], [1, 8])
        with pytest.raises(InvalidInputError):
            register_nonlinearity("cube_test", np.cos)

    def test_unknown_nonlinearity(self):
        with pytest.raises(InvalidInputError):
            BasisFunction(PolyOp([1.0]), "nope")
        with pytest.raises(InvalidInputError):
            nonlinearity("nope")


class TestOutputMatrix:
    def test_no_ar(self):
        F = output_matrix_F(sig([1, 2, 3]), 0)
        assert F.shape == (3, 0)

    def test_one_shift(self):
        assert np.array_equal(output_matrix_F(sig([1, 2, 3]), 1)[:, 0], [0, 1, 2])

    def test_two_shifts(self):
        F = output_matrix_F(sig([1, 2, 3]), 2)
        assert np.array_equal(F, [[0, 0], [1, 0], [2, 1]])

    def test_order_too_large(self):
        with pytest.raises(InvalidInputError):
            output_matrix_F(sig([1, 2]), 3)


class TestBuildM:
    def test_no_ar_equals_R(self):
        spec = ModelSpec.rational(2, 0)
        r = sig([1, 2, 3, 4])
        assert np.array_equal(build_M(spec, r, sig([0, 0, 0, 0])), regressor_matrix(spec, r))

    def test_full_rank_on_random_signal(self):
        rng = np.random.default_rng(0)
        r, f = sig(rng.normal(size=200)), sig(rng.normal(size=200))
        M = build_M(ModelSpec.rational(3, 2), r, f)
        assert M.shape == (200, 5)
        assert numerical_rank(M) == 5

    def test_rank_deficiency_detected(self):
        r = sig(np.ones(50))
        M = build_M(ModelSpec.rational(3, 0), r, r)
        # constant input: three shifted copies only differ in the first samples
        assert numerical_rank(np.asarray(M)[5:]) == 1

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            build_M(ModelSpec.rational(1, 1), sig([1, 2]), sig([1, 2, 3]))
        with pytest.raises(InvalidInputError):
            build_M(ModelSpec.rational(1, 1), sig([1, 2], 1.0), sig([1, 2], 2.0))

    def test_equation_error_vanishes_on_model_data(self):
        rng = np.random.default_rng(1)
        spec = ModelSpec.rational(3, 2)
        theta = ModelTheta([0.5, -0.2, 0.1], [-0.6, 0.08])
        r = sig(rng.normal(size=300))
        fhat = model_feedforward(spec, theta, r)
        res = fhat.samples - build_M(spec, r, fhat) @ theta.vector
        assert np.abs(res).max() <= 1e-13


class TestModelFeedforward:
    def test_zero_numerator(self):
        spec = ModelSpec.rational(2, 1)
        out = model_feedforward(spec, ModelTheta([0, 0], [0.5]), sig([1, -1, 3]))
        assert np.array_equal(out.samples, [0, 0, 0])

    def test_static_gain(self):
        spec = ModelSpec((BasisFunction(PolyOp([1.0])),), 0)
        out = model_feedforward(spec, ModelTheta([2.0]), sig([1, -1, 3]))
        assert np.array_equal(out.samples, [2, -2, 6])

    def test_matches_rational_filter(self):
        rng = np.random.default_rng(2)
        spec = ModelSpec.rational(3, 2)
        theta = ModelTheta(rng.normal(size=3), [-1.1, 0.3])
        r = sig(rng.normal(size=400))
        direct = filter(RationalFilter(PolyOp(theta.a), theta.denominator), r)
        ours = model_feedforward(spec, theta, r)
        assert np.abs(ours.samples - direct.samples).max() <= 1e-12 * np.abs(direct.samples).max()
        via_tf = filter(transfer_function(spec, theta), r)
        assert np.abs(via_tf.samples - direct.samples).max() <= 1e-12 * np.abs(direct.samples).max()

    def test_derivative_basis_spans_rational_space(self):
        rng = np.random.default_rng(3)
        ts = 0.01
        spec_d = ModelSpec.derivative(3, 1, ts)
        theta = ModelTheta(rng.normal(size=3), [-0.5])
        num = transfer_function(spec_d, theta).numerator.coefficients
        spec_q = ModelSpec.rational(3, 1)
        r = sig(rng.normal(size=100), ts)
        a = model_feedforward(spec_d, theta, r).samples
        b = model_feedforward(spec_q, ModelTheta(num, [-0.5]), r).samples
        assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()

    def test_unstable_denominator_warns(self):
        with pytest.warns(StabilityWarning):
            model_feedforward(ModelSpec.rational(1, 1), ModelTheta([1.0], [-2.0]), sig([1, 0, 0]))

    def test_nonlinear_basis_has_no_transfer_function(self):
        spec = ModelSpec((BasisFunction(PolyOp([1.0]), "sign"),), 0)
        with pytest.raises(InvalidInputError):
            transfer_function(spec, ModelTheta([1.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-4, 4), st.floats(-4, 4))
    def test_linear_in_numerator(self, seed, s1, s2):
        rng = np.random.default_rng(seed)
        spec = ModelSpec((BasisFunction(PolyOp([1.0]), "cosine"), BasisFunction(PolyOp([0, 1.0]))), 1)
        b = [-0.7]
        a1, a2 = rng.normal(size=2), rng.normal(size=2)
        r = sig(rng.normal(size=50))
        combo = model_feedforward(spec, ModelTheta(s1 * a1 + s2 * a2, b), r).samples
        parts = s1 * model_feedforward(spec, ModelTheta(a1, b), r).samples
        parts = parts + s2 * model_feedforward(spec, ModelTheta(a2, b), r).samples
        assert np.abs(combo - parts).max() <= 1e-12 * (1 + np.abs(combo).max())


def test_theta_roundtrip_and_validation():
    theta = ModelTheta([1.0, 2.0], [0.5])
    assert np.array_equal(ModelTheta.from_vector(theta.vector, 2).b, [0.5])
    assert np.array_equal(ModelTheta.from_dict(theta.to_dict()).vector, theta.vector)
    with pytest.raises(InvalidInputError):
        ModelTheta([np.nan])
    with pytest.raises(InvalidInputError):
        ModelSpec((), 0)
    with pytest.raises(InvalidInputError):
        ModelSpec.rational(1, -1)
    spec = ModelSpec.derivative(3, 2, 1e-3)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_scalar_criterion_matches_vector_form():
    """Sample-by-sample equation error equals the lifted matrix form."""
    rng = np.random.default_rng(4)
    for trial in range(10):
        n = int(rng.integers(10, 60))
        spec = ModelSpec(
            (BasisFunction(PolyOp([1.0])), BasisFunction(PolyOp([1.0, -1.0]), "cosine")), 2
        )
        r, fhat = rng.normal(size=n), rng.normal(size=n)
        a, b = rng.normal(size=2), rng.normal(size=2)
        net = glorot_init((3, 4, 1), seed=trial)
        H = hidden_features(net, sig(r))
        phi = rng.normal(size=H.shape[0])
        g = H.T @ phi

        def at(x, k):
            return x[k] if k >= 0 else 0.0

        scalar = 0.0
        for k in range(n):
            model = a[0] * r[k] + a[1] * np.cos(r[k] - at(r, k - 1))
            ar = sum(b[i] * at(fhat, k - 1 - i) for i in range(2))
            e = fhat[k] + ar - model - g[k]
            scalar += e * e
        M = build_M(spec, sig(r), sig(fhat))
        res = fhat - M @ np.concatenate([a, b]) - g
        assert abs(res @ res - scalar) <= 1e-12 * scalar
