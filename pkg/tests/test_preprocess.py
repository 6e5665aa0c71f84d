import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from emgpipe.dataset import EmgRecording, SyntheticSpec, generate_synthetic_recording
from emgpipe.errors import ArgumentError, DegenerateError, DesignError
from emgpipe.preprocess import (FilterCoefficients, PreprocessConfig, analytic_envelope, apply_filter,
                                design_butterworth_lowpass, design_notch, frequency_response,
                                normalize_recording, preprocess)

FS = 2000.0


def df2t_reference(sos, x):
    """Plain-loop transposed direct form II, section by section."""
    y = np.array(x, dtype=float)
    for b0, b1, b2, _, a1, a2 in sos:
        z1 = z2 = 0.0
        out = np.empty_like(y)
        for i, v in enumerate(y):
            o = b0 * v + z1
            z1 = b1 * v - a1 * o + z2
            z2 = b2 * v - a2 * o
            out[i] = o
        y = out
    return y


def butterworth_magnitude(f, fc, order, fs):
    # digital Butterworth via bilinear transform: |H|^2 = 1 / (1 + (tan(pi f/fs) / tan(pi fc/fs))^(2n))
    r = np.tan(np.pi * f / fs) / np.tan(np.pi * fc / fs)
    return 1.0 / np.sqrt(1.0 + r ** (2 * order))


class TestButterworth:
    def test_dc_and_cutoff(self):
        lp = design_butterworth_lowpass(4, 0.6, FS)
        assert abs(abs(frequency_response(lp, [0.0])[0]) - 1) < 1e-9
        assert abs(abs(frequency_response(lp, [0.6])[0]) - 2 ** -0.5) < 1e-6

    def test_attenuation_at_6hz(self):
        lp = design_butterworth_lowpass(4, 0.6, FS)
        assert 20 * np.log10(abs(frequency_response(lp, [6.0])[0])) <= -75

    def test_matches_closed_form_magnitude(self):
        lp = design_butterworth_lowpass(4, 0.6, FS)
        f = np.linspace(0, 50, 50)
        assert np.allclose(np.abs(frequency_response(lp, f)), butterworth_magnitude(f, 0.6, 4, FS),
                           rtol=1e-9, atol=1e-15)

    @pytest.mark.parametrize("order", [2, 4, 6, 8])
    @pytest.mark.parametrize("fc", [0.6, 10.0, 450.0, 990.0])
    def test_stability_grid(self, order, fc):
        lp = design_butterworth_lowpass(order, fc, FS)
        assert lp.is_stable() and len(lp.sections) == order // 2

    def test_agrees_with_scipy_design(self):
        ours = design_butterworth_lowpass(4, 25.0, FS)
        ref = sps.butter(4, 25.0, fs=FS, output="sos")
        f = np.linspace(0, 999, 200)
        _, h_ref = sps.sosfreqz(ref, worN=f, fs=FS)
        assert np.allclose(frequency_response(ours, f), h_ref, atol=1e-10)

    def test_errors(self):
        with pytest.raises(ArgumentError):
            design_butterworth_lowpass(3, 1.0, FS)
        with pytest.raises(DesignError):
            design_butterworth_lowpass(4, 1000.0, FS)
        with pytest.raises(DesignError):
            design_butterworth_lowpass(4, 0.0, FS)


class TestNotch:
    def test_null_and_passband(self):
        n = design_notch(60.0, 30.0, FS)
        assert abs(frequency_response(n, [60.0])[0]) < 1e-3
        assert abs(frequency_response(n, [10.0])[0]) > 0.99
        assert abs(abs(frequency_response(n, [0.0, 1000.0])) - 1).max() < 1e-12

    def test_above_nyquist(self):
        with pytest.raises(DesignError):
            design_notch(1100.0, 30.0, FS)


class TestApplyFilter:
    def test_impulse_through_gain_section(self):
        c = FilterCoefficients(np.array([[0.5, 0, 0, 1, 0, 0]]), "custom", 0, FS)
        x = np.zeros(8)
        x[0] = 1
        assert apply_filter(x, c, zero_phase=False).tolist() == [0.5] + [0.0] * 7

    def test_causal_matches_loop_reference(self, rng):
        x = rng.standard_normal(500)
        for c in (design_butterworth_lowpass(4, 30.0, FS), design_notch(60.0, 30.0, FS)):
            assert np.allclose(apply_filter(x, c, zero_phase=False), df2t_reference(c.sos, x), atol=1e-12)

    def test_zero_phase_matches_scipy_filtfilt(self, rng):
        x = rng.standard_normal((3000, 2))
        c = design_butterworth_lowpass(4, 5.0, FS)
        ref = sps.sosfiltfilt(c.sos, x, axis=0, padtype="odd", padlen=12)
        assert np.allclose(apply_filter(x, c), ref, atol=1e-9)

    def test_constant_passes(self):
        x = np.full(4000, 3.25)
        y = apply_filter(x, design_butterworth_lowpass(4, 0.6, FS))
        assert np.abs(y - 3.25).max() < 1e-6

    def test_50hz_removed(self):
        t = np.arange(20000) / FS
        x = np.sin(2 * np.pi * 50 * t)
        y = apply_filter(x, design_butterworth_lowpass(4, 0.6, FS))
        # start-up transients of a 0.6 Hz section last seconds; judge the interior
        assert np.abs(y[8000:12000]).max() < 1e-3

    def test_zero_group_delay(self):
        t = np.arange(8000) / FS
        x = np.exp(-((t - 2.0) / 0.4) ** 2)
        y = apply_filter(x, design_butterworth_lowpass(4, 2.0, FS))
        lags = np.arange(-200, 201)
        xc = [np.dot(x[200:-200], np.roll(y, k)[200:-200]) for k in lags]
        assert lags[int(np.argmax(xc))] == 0

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            apply_filter(np.ones(12), design_butterworth_lowpass(4, 0.6, FS))


class TestEnvelope:
    def test_pure_tone_is_flat(self):
        t = np.arange(2000) / FS
        env = analytic_envelope(1.7 * np.cos(2 * np.pi * 100 * t + 0.3))
        assert np.abs(env[50:-50] / 1.7 - 1).max() < 0.02

    def test_am_tone(self):
        t = np.arange(4000) / FS
        a = 1 + 0.5 * np.cos(2 * np.pi * 2 * t)
        env = analytic_envelope(a * np.cos(2 * np.pi * 200 * t))
        assert np.abs(env[50:-50] / a[50:-50] - 1).max() < 0.03

    def test_matches_scipy_hilbert(self, rng):
        for n in (255, 256):
            x = rng.standard_normal(n)
            assert np.allclose(analytic_envelope(x), np.abs(sps.hilbert(x)), atol=1e-12)

    def test_zero(self):
        assert np.array_equal(analytic_envelope(np.zeros(16)), np.zeros(16))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 2 ** 32 - 1))
    def test_scaling(self, alpha, seed):
        x = np.random.default_rng(seed).standard_normal(64)
        assert np.allclose(analytic_envelope(alpha * x), alpha * analytic_envelope(x), rtol=1e-10, atol=1e-12)


def _rec(ch):
    n = ch.shape[0]
    return EmgRecording(1, FS, ch, np.zeros(n), np.zeros(n))


class TestNormalize:
    def test_max_abs(self):
        ch = np.array([[0.1, 2.0], [0.8, -4.0], [0.4, 1.0]])
        out, rep = normalize_recording(_rec(ch), "max_abs")
        assert out.channels[:, 0].max() == 1.0
        assert rep["scale"] == [0.8, 4.0]

    def test_scale_invariance(self, rng):
        ch = np.abs(rng.standard_normal((100, 3)))
        a, _ = normalize_recording(_rec(ch), "max_abs")
        b, _ = normalize_recording(_rec(10 * ch), "max_abs")
        assert np.allclose(a.channels, b.channels, rtol=1e-15)

    def test_z_score(self, rng):
        out, _ = normalize_recording(_rec(rng.standard_normal((500, 2)) * 3 + 1), "z_score")
        assert np.allclose(out.channels.mean(axis=0), 0, atol=1e-9)
        assert np.allclose(out.channels.std(axis=0), 1, atol=1e-9)

    def test_zero_channel_named(self):
        ch = np.zeros((10, 3))
        ch[:, 0] = 1
        with pytest.raises(DegenerateError, match="channel 2"):
            normalize_recording(_rec(ch), "max_abs")


class TestPipeline:
    @pytest.fixture(scope="class")
    @staticmethod
    def burst():
        spec = SyntheticSpec(n_subjects=1, n_channels=2, gesture_labels=(1,), reps_per_gesture=2,
                             contraction_s=2.0, rest_s=2.0)
        return generate_synthetic_recording(spec)

    def test_smooth_output_and_labels_preserved(self, burst):
        out = preprocess(burst, PreprocessConfig(stage_order="envelope_then_filter"))
        assert np.array_equal(out.stimulus, burst.stimulus) and np.array_equal(out.repetition, burst.repetition)
        secs = burst.n_samples / FS

        def turns(x):
            return np.sum(np.diff(np.sign(np.diff(x))) != 0) / secs

        assert turns(out.channels[:, 0]) < 10
        assert turns(burst.channels[:, 0]) > 100
        assert out.metadata["preprocess"]["stage_order"] == "envelope_then_filter"

    @pytest.mark.parametrize("order", ["filter_then_envelope", "envelope_then_filter"])
    def test_nonnegative_without_normalization(self, order):
        spec = SyntheticSpec(n_subjects=1, n_channels=2, gesture_labels=(1,), reps_per_gesture=1,
                             contraction_s=0.5, rest_s=1.0, activation_profile=((0.0, 0.0),))
        rec = generate_synthetic_recording(spec)
        out = preprocess(rec, PreprocessConfig(stage_order=order, normalization="none"))
        assert out.channels.min() >= 0

    def test_deterministic(self, burst):
        cfg = PreprocessConfig()
        assert preprocess(burst, cfg) == preprocess(burst, cfg)

    def test_envelope_oracle_correlation(self, burst):
        # independent envelope: rectify and moving-average over 200 ms
        out = preprocess(burst, PreprocessConfig(stage_order="envelope_then_filter"))
        k = int(0.2 * FS)
        ref = np.convolve(np.abs(burst.channels[:, 0]), np.ones(k) / k, mode="same")
        assert np.corrcoef(out.channels[:, 0], ref)[0, 1] > 0.9

    def test_config_validation(self):
        with pytest.raises(ArgumentError):
            PreprocessConfig(lowpass_order=3).validate()
        with pytest.raises(ArgumentError):
            PreprocessConfig(stage_order="sideways").validate()
        with pytest.raises(DesignError):
            PreprocessConfig(lowpass_cutoff_hz=1500.0).validate(FS)
