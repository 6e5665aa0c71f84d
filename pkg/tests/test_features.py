import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emgpipe.dataset import EmgRecording, SyntheticSpec, generate_synthetic_recording
from emgpipe.errors import ArgumentError, DegenerateError, FeatureError
from emgpipe.features import (FeatureDef, FeatureRegistry, FeatureTable, WindowSpec, burg, column_layout,
                              compute_ar_coefficients, compute_scalar_feature, compute_spectral_features,
                              default_registry, expected_row_count, extract_feature_table, scalar_registry)

FS = 2000.0


# --- plain-loop oracles, written without numpy reductions

def o_mav(x):
    return sum(abs(v) for v in x) / len(x)


def o_iav(x):
    return sum(abs(v) for v in x)


def o_rms(x):
    return math.sqrt(sum(v * v for v in x) / len(x))


def o_wl(x):
    return sum(abs(x[i + 1] - x[i]) for i in range(len(x) - 1))


def o_var(x):
    m = sum(x) / len(x)
    return sum((v - m) ** 2 for v in x) / (len(x) - 1)


def o_zc(x):
    return float(sum(1 for i in range(len(x) - 1) if x[i] * x[i + 1] < 0))


def o_ssc(x):
    return float(sum(1 for i in range(1, len(x) - 1) if (x[i] - x[i - 1]) * (x[i] - x[i + 1]) > 0))


def o_mavs(x):
    s = len(x) // 3
    m = [o_mav(x[i * s:(i + 1) * s]) for i in range(3)]
    return ((m[1] - m[0]) + (m[2] - m[1])) / 2


def o_cov(x):
    return math.sqrt(o_var(x)) / abs(sum(x) / len(x))


def o_kurt(x):
    m = sum(x) / len(x)
    m2 = sum((v - m) ** 2 for v in x) / len(x)
    m4 = sum((v - m) ** 4 for v in x) / len(x)
    return m4 / m2 ** 2 - 3


def o_dft_power(x):
    n = len(x)
    m = sum(x) / n
    d = [v - m for v in x]
    out = []
    for k in range(n // 2 + 1):
        re = sum(d[t] * math.cos(2 * math.pi * k * t / n) for t in range(n))
        im = sum(d[t] * math.sin(2 * math.pi * k * t / n) for t in range(n))
        out.append((re * re + im * im) / n)
    return out


ORACLES = {"MAV": o_mav, "IAV": o_iav, "RMS": o_rms, "WL": o_wl, "VAR": o_var, "ZC": o_zc,
           "SSC": o_ssc, "MAVS": o_mavs, "CoV": o_cov, "KURT": o_kurt}


def _windows(n_windows, length, seed=7):
    rng = np.random.default_rng(seed)
    for i in range(n_windows):
        kind = i % 4
        if kind == 0:
            yield rng.standard_normal(length)
        elif kind == 1:
            yield np.abs(rng.standard_normal(length)) + 0.1
        elif kind == 2:
            yield np.cumsum(rng.standard_normal(length))
        else:
            yield rng.uniform(-3, 5, length)


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_scalar_kernels_match_loop_oracles(name):
    for x in _windows(1000, 40):
        ours = compute_scalar_feature(name, x)
        ref = ORACLES[name](x.tolist())
        assert abs(ours - ref) <= 1e-10 * max(1.0, abs(ref)), (name, ours, ref)


def test_spectral_match_naive_dft():
    for x in _windows(60, 32, seed=3):
        p = o_dft_power(x.tolist())
        f = [k * FS / 32 for k in range(len(p))]
        s = compute_spectral_features(x, FS)
        assert abs(s["MNP"] - sum(p) / len(p)) < 1e-10 * max(1, s["MNP"])
        assert abs(s["MNF"] - sum(a * b for a, b in zip(f, p)) / sum(p)) < 1e-9 * FS


def test_hand_examples():
    x = np.array([1.0, -2.0, 3.0, -4.0])
    assert compute_scalar_feature("MAV", x) == 2.5
    assert compute_scalar_feature("IAV", x) == 10.0
    assert compute_scalar_feature("WL", x) == 3 + 5 + 7
    assert compute_scalar_feature("ZC", x) == 3
    assert compute_scalar_feature("SSC", x) == 2
    assert compute_scalar_feature("RMS", x) == math.sqrt(7.5)
    assert compute_scalar_feature("ZC", np.array([1.0, -0.01, 2.0]), {"eps": 0.5}) == 2
    assert compute_scalar_feature("ZC", np.array([0.1, -0.1, 0.1]), {"eps": 0.5}) == 0


def test_spectral_tone():
    t = np.arange(400) / FS
    s = compute_spectral_features(np.sin(2 * np.pi * 100 * t), FS)
    assert abs(s["MNF"] - 100) < 1e-6 and not s["zero_power"]
    z = compute_spectral_features(np.full(400, 2.0), FS)
    assert z == {"MNP": 0.0, "MNF": 0.0, "zero_power": True}


def test_cov_and_kurt_degenerate_policy():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    assert compute_scalar_feature("CoV", x) == 0.0
    assert compute_scalar_feature("KURT", np.full(10, 3.0)) == 0.0


def test_burg_recovers_ar1():
    rng = np.random.default_rng(11)
    e = rng.standard_normal(20000)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, len(x)):
        x[i] = 0.7 * x[i - 1] + e[i]
    y = x - x.mean()
    lag1 = np.dot(y[1:], y[:-1]) / np.dot(y, y)
    a1 = compute_ar_coefficients(x, 1)[0]
    assert abs(a1 - lag1) < 1e-3 and abs(a1 - 0.7) < 0.02
    assert np.all(np.abs(compute_ar_coefficients(x, 4)[2:]) < 0.03)


def test_burg_white_noise_and_error_power():
    x = np.random.default_rng(2).standard_normal(5000)
    a, err = burg(x, 4)
    assert np.all(np.abs(a) < 0.06)
    assert np.all(np.diff(err) <= 1e-12) and err[-1] > 0


def test_burg_matches_levinson_on_long_ar2():
    # on long records Burg and Yule-Walker agree
    rng = np.random.default_rng(5)
    e = rng.standard_normal(50000)
    x = np.zeros_like(e)
    for i in range(2, len(x)):
        x[i] = 1.2 * x[i - 1] - 0.5 * x[i - 2] + e[i]
    x -= x.mean()
    r = np.array([np.dot(x[:len(x) - k], x[k:]) / len(x) for k in range(3)])
    yw = np.linalg.solve([[r[0], r[1]], [r[1], r[0]]], r[1:])
    assert np.allclose(burg(x, 2)[0], yw, atol=5e-3)


def test_kernel_errors():
    with pytest.raises(ArgumentError):
        compute_scalar_feature("XYZ", np.ones(4))
    with pytest.raises(ArgumentError):
        compute_scalar_feature("RMS", np.ones((4, 2)))
    with pytest.raises(ArgumentError):
        burg(np.ones(8), 4)
    with pytest.raises(DegenerateError):
        burg(np.ones(20), 4)
    with pytest.raises(ArgumentError):
        compute_scalar_feature("MNF", np.ones(5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 50.0))
def test_homogeneity(seed, alpha):
    x = np.random.default_rng(seed).standard_normal(64) + 0.5
    for name, degree in (("MAV", 1), ("IAV", 1), ("RMS", 1), ("WL", 1), ("VAR", 2), ("MAVS", 1), ("MNP", 2)):
        assert np.isclose(compute_scalar_feature(name, alpha * x), alpha ** degree * compute_scalar_feature(name, x),
                          rtol=1e-9, atol=1e-12)
    for name in ("ZC", "SSC", "CoV", "KURT", "MNF"):
        assert np.isclose(compute_scalar_feature(name, alpha * x), compute_scalar_feature(name, x),
                          rtol=1e-9, atol=1e-9)


def test_registry_layout_and_round_trip():
    reg = default_registry()
    assert len(scalar_registry().features) == 12 and len(reg.features) == 14
    assert FeatureRegistry.from_dict(reg.to_dict()) == reg
    names, fams, chans = column_layout(reg, 3)
    per_window = 12 + 4 + 3
    assert len(names) == per_window * 3 + per_window
    assert names[0] == "RMS_ch1" and names[-1] == "mDWT3_std" and chans[-1] == 0
    assert fams.count("AR") == 12


def test_window_spec():
    assert WindowSpec(200).samples(FS) == 400
    with pytest.raises(ArgumentError):
        WindowSpec(0.3).samples(FS)


class TestTable:
    def test_row_count_and_meta(self, envelopes, table200):
        assert table200.n_rows == expected_row_count(envelopes, WindowSpec(200))
        assert set(np.unique(table200.gesture)) >= {0, 1}
        assert np.isfinite(table200.values).all()
        no_rest = extract_feature_table(envelopes[:1], spec=WindowSpec(200), include_rest=False)
        assert 0 not in no_rest.gesture

    def test_std_zero_for_identical_channels(self):
        rng = np.random.default_rng(0)
        base = np.abs(rng.standard_normal(4000)) + 0.2
        ch = np.column_stack([base, base, base])
        stim = np.r_[np.zeros(1000), np.ones(2000), np.zeros(1000)]
        rep = np.r_[np.zeros(1000), np.ones(2000), np.zeros(1000)]
        t = extract_feature_table([EmgRecording(1, FS, ch, stim, rep)], spec=WindowSpec(200))
        std_cols = [i for i, c in enumerate(t.channels) if c == 0]
        assert np.all(t.values[:, std_cols] == 0.0)

    def test_std_column_is_population_std(self, table200):
        i = table200.columns.index("RMS_std")
        per = [table200.columns.index(f"RMS_ch{k}") for k in range(1, 1 + table200.provenance["n_channels"])]
        assert np.allclose(table200.values[:, i], table200.values[:, per].std(axis=1), rtol=1e-12, atol=1e-15)

    def test_csv_round_trip(self, table200, tmp_path):
        p = tmp_path / "features.csv"
        table200.to_csv(p)
        back = FeatureTable.from_csv(p)
        assert np.array_equal(back.values, table200.values) and np.array_equal(back.meta, table200.meta)
        assert back.columns == table200.columns and back.schema_hash() == table200.schema_hash()
        assert np.array_equal(back.flags, table200.flags)

    def test_select(self, table200):
        sub = table200.select(families={"RMS", "RMS_std"}, channels={1})
        assert sub.columns == ("RMS_ch1", "RMS_std")

    def test_degenerate_window_is_located(self):
        ch = np.ones((4000, 2))
        stim = np.r_[np.zeros(1000), np.ones(2000), np.zeros(1000)]
        reg = FeatureRegistry((FeatureDef("AR", "time", "multi", {"order": 4}),))
        with pytest.raises(FeatureError, match="channel 1, feature AR"):
            extract_feature_table([EmgRecording(1, FS, ch, stim, stim)], reg, WindowSpec(200))

    def test_deterministic(self, envelopes):
        a = extract_feature_table(envelopes[:1])
        b = extract_feature_table(envelopes[:1])
        assert np.array_equal(a.values, b.values)
