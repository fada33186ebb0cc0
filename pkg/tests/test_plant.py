import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from pgff import _kernels
from pgff.errors import InvalidInputError
from pgff.plant import (
    PlantParams,
    ProfileConfig,
    build_dataset,
    derived_coeffs,
    discrete_polynomials,
    generate_references,
    inverse_feedforward,
    linear_model_coefficients,
    load_dataset,
    save_dataset,
    simulate_forward,
    smooth_step,
    stribeck,
)
from pgff.signals import Signal, discrete_derivative, poly_rows

P = PlantParams()


def linear_numerator(p):
    """``A_q + c1 B_q delta`` for the linear damper."""
    a_q, b_q = discrete_polynomials(p)
    damp = p.c1 * np.convolve(b_q, discrete_derivative(1, p.Ts).coefficients)
    out = np.zeros(max(a_q.size, damp.size))
    out[: a_q.size] += a_q
    out[: damp.size] += damp
    return out


@pytest.fixture(scope="module")
def references():
    return generate_references()


class TestParams:
    def test_defaults(self):
        assert (P.m1, P.m2, P.k1, P.k2, P.d2, P.c1, P.c2, P.alpha, P.Ts) == (
            1.0, 2.0, 1.0, 15000.0, 50.0, 1.0, 20.0, 20.0, 1e-3,
        )

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            PlantParams(m1=0.0)
        with pytest.raises(InvalidInputError):
            PlantParams(Ts=-1.0)
        with pytest.raises(InvalidInputError):
            PlantParams(convention="other")

    @settings(max_examples=30, deadline=None)
    @given(*(st.floats(0.1, 100.0) for _ in range(5)))
    def test_coefficient_identities(self, m1, m2, k1, k2, d2):
        for convention in ("physical", "printed"):
            p = PlantParams(m1=m1, m2=m2, k1=k1, k2=k2, d2=d2, convention=convention)
            dc = derived_coeffs(p)
            assert list(dc.b) == [k2, d2, m2]
            assert dc.a[0] == k1 * k2 and dc.a[1] == d2 * k1 and dc.a[4] == m1 * m2
            if convention == "printed":
                assert dc.a[2] == m2 * k1 + k1 * m1 - k2 * m2
                assert dc.a[3] == m1 * d2
            else:
                assert dc.a[2] == m1 * k2 + k1 * m2 + k2 * m2
                assert dc.a[3] == m1 * d2 + m2 * d2

    def test_coefficients_track_replacement(self):
        assert P.replace(k2=10.0).coeffs.b[0] == 10.0

    def test_physical_convention_is_the_two_mass_system(self):
        # continuous transfer function y/f from the equations of motion
        s = 0.37 + 0.8j
        m1, m2, k1, k2, d2 = P.m1, P.m2, P.k1, P.k2, P.d2
        z2 = m2 * s**2 + d2 * s + k2
        zc = d2 * s + k2
        det = (m1 * s**2 + k1 + zc) * z2 - zc**2
        dc = P.coeffs
        a = np.polyval(dc.a[::-1], s)
        b = np.polyval(dc.b[::-1], s)
        assert np.isclose(b / a, z2 / det, rtol=1e-12)


class TestStribeck:
    def test_zero(self):
        assert stribeck(0.0) == 0.0

    def test_unit_velocity(self):
        assert np.isclose(stribeck(1.0), 1.0000000783, rtol=0, atol=1e-10)
        assert np.isclose(stribeck(1.0), 1 + 19 / np.cosh(20), rtol=1e-15)

    def test_slope_at_origin(self):
        h = 1e-7
        assert np.isclose((stribeck(h) - stribeck(-h)) / (2 * h), 20.0, rtol=1e-9)

    def test_odd(self):
        v = np.linspace(-3, 3, 601)
        assert np.array_equal(stribeck(-v), -stribeck(v))

    def test_asymptote(self):
        for v in (5.0, -5.0, 100.0, 1e6):
            assert abs(stribeck(v) - v) <= 1e-42 * abs(v)


class TestInverseAndForward:
    def test_zero_reference(self):
        r = Signal(np.zeros(100), P.Ts)
        assert np.array_equal(inverse_feedforward(P, r).samples, np.zeros(100))
        assert np.array_equal(simulate_forward(P, r).samples, np.zeros(100))

    def test_linear_damper_is_rational_filter(self, references):
        p = P.replace(c2=P.c1)
        r = references[0][3]
        a_q, b_q = discrete_polynomials(p)
        num = linear_numerator(p)
        expected = sps.lfilter(num, b_q, r.samples)
        got = inverse_feedforward(p, r).samples
        assert np.abs(got - expected).max() <= 1e-7 * np.abs(expected).max()

    def test_linear_model_coefficients_reproduce_inverse(self, references):
        p = P.replace(c2=P.c1)
        r = references[0][0]
        a, b = linear_model_coefficients(p)
        excitation = sum(ai * poly_rows(discrete_derivative(i, p.Ts).coefficients, r.samples) for i, ai in enumerate(a))
        f = sps.lfilter([1.0], np.concatenate([[1.0], b]), excitation)
        ref = inverse_feedforward(p, r).samples
        assert np.abs(f - ref).max() <= 1e-7 * np.abs(ref).max()

    def test_linear_forward_matches_recursion(self):
        rng = np.random.default_rng(0)
        p = P.replace(c2=P.c1)
        f = Signal(rng.normal(size=500), p.Ts)
        a_q, b_q = discrete_polynomials(p)
        num = linear_numerator(p)
        expected = sps.lfilter(b_q, num, f.samples)
        got = simulate_forward(p, f).samples
        assert np.abs(got - expected).max() <= 1e-9 * (1 + np.abs(expected).max())

    def test_roundtrip(self, references):
        training, validation = references
        for r in training + [validation]:
            y = simulate_forward(P, inverse_feedforward(P, r))
            assert np.abs(y.samples - r.samples).max() < 1e-8

    def test_passive_decay(self):
        f = np.zeros(20000)
        f[:5] = 100.0
        y = simulate_forward(P, Signal(f, P.Ts)).samples
        v = np.diff(y) / P.Ts
        early, late = np.abs(v[100:2000]).max(), np.abs(v[-2000:]).max()
        assert late < 0.5 * early

    @pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
    def test_backends_agree(self, references):
        args = None
        r = references[0][2]
        fhat = inverse_feedforward(P, r)
        a_q, b_q = discrete_polynomials(P)
        args = (a_q, b_q, fhat.samples, P.Ts, P.c1, P.c2, P.alpha, 1e-12, 50)
        y1, fail1 = _kernels.plant_forward_numba(*args)
        y2, fail2 = _kernels.plant_forward_numpy(*args)
        assert fail1 == fail2 == -1
        assert np.abs(y1 - y2).max() <= 1e-12


class TestReferences:
    def test_count_and_determinism(self, references):
        training, validation = references
        assert len(training) == 9
        again, val2 = generate_references()
        assert all(np.array_equal(a.samples, b.samples) for a, b in zip(training, again))
        assert np.array_equal(validation.samples, val2.samples)
        other, _ = generate_references(seed=1)
        assert not np.array_equal(other[0].samples, training[0].samples)

    def test_rest_at_both_ends(self, references):
        for r in references[0] + [references[1]]:
            x = r.samples
            assert x[0] == 0.0 and np.abs(x[-5:]).max() == 0.0
            v = np.diff(x)
            assert v[0] == 0.0 and v[-1] == 0.0

    def test_strokes_increase(self, references):
        peaks = [np.abs(r.samples).max() for r in references[0]]
        assert all(b > a for a, b in zip(peaks, peaks[1:]))
        assert np.isclose(peaks[0], 0.02) and np.isclose(peaks[-1], 0.5)

    def test_knee_is_crossed(self, references):
        speeds = [np.abs(np.diff(r.samples)).max() / P.Ts * P.alpha for r in references[0]]
        assert min(speeds) < 3.0 < max(speeds)

    def test_smooth_step(self):
        assert smooth_step(0.0) == 0.0 and smooth_step(1.0) == 1.0
        assert np.isclose(smooth_step(0.5), 0.5, rtol=1e-15)
        t = np.linspace(-0.5, 1.5, 9)
        assert np.array_equal(smooth_step(t)[t <= 0], np.zeros(np.sum(t <= 0)))

    def test_profile_roundtrip(self):
        cfg = ProfileConfig(stroke_range=(0.1, 0.2))
        assert ProfileConfig.from_dict(cfg.to_dict()) == cfg


class TestDataset:
    def test_empty(self):
        assert len(build_dataset(P, [])) == 0

    def test_roundtrip_and_persistence(self, references, tmp_path):
        training, validation = references
        ds = build_dataset(P, training[:3], {"seed": 0})
        val = (validation, inverse_feedforward(P, validation))
        save_dataset(tmp_path, ds, val)
        back, val_back = load_dataset(tmp_path)
        assert back.metadata["seed"] == 0
        assert back.metadata["params"]["k2"] == 15000.0
        for (r1, f1), (r2, f2) in zip(ds, back):
            assert np.array_equal(r1.samples, r2.samples)
            assert np.array_equal(f1.samples, f2.samples)
            y = simulate_forward(P, f2)
            assert np.abs(y.samples - r2.samples).max() < 1e-8
        assert np.array_equal(val_back[1].samples, val[1].samples)
        assert (tmp_path / "trajectory_01.csv").read_text().startswith("k,r,fhat\n")
