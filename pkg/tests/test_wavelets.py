import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emgpipe.errors import ArgumentError
from emgpipe.wavelets import compute_mdwt, daubechies_lowpass, dwt_periodic, quadrature_mirror

# published minimum-phase filters (decomposition low-pass, time-reversed to z-order)
DB2 = [0.48296291314469025, 0.836516303737469, 0.22414386804185735, -0.12940952255092145]


def test_db1_is_haar():
    assert np.allclose(daubechies_lowpass(1), [2 ** -0.5, 2 ** -0.5])


def test_db2_coefficients():
    assert np.allclose(daubechies_lowpass(2), DB2, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 4, 7, 10])
def test_orthonormal_filters(n):
    h = np.asarray(daubechies_lowpass(n))
    assert len(h) == 2 * n
    assert abs(h.sum() - np.sqrt(2)) < 1e-12
    for shift in range(0, len(h), 2):
        dot = np.dot(h[shift:], h[:len(h) - shift])
        assert abs(dot - (1.0 if shift == 0 else 0.0)) < 1e-10
    g = quadrature_mirror(h)
    assert abs(g.sum()) < 1e-10


@pytest.mark.parametrize("n", [1, 2, 7])
def test_vanishing_moments(n):
    g = quadrature_mirror(daubechies_lowpass(n))
    k = np.arange(len(g))
    for p in range(n):
        assert abs(np.sum(g * k ** p)) < 1e-6 * max(1, len(g) ** p)


def test_haar_details_by_hand():
    x = np.zeros(16)
    x[:2] = 1
    x[5] = 3
    _, d = dwt_periodic(x, 1, 1)
    direct = (x[0::2] - x[1::2]) / np.sqrt(2)
    assert np.allclose(d[0], direct, atol=1e-15)
    assert np.isclose(compute_mdwt(np.r_[np.ones(2), np.zeros(14)], 1, 1)[0], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2, 7]), st.integers(1, 3))
def test_parseval(seed, wavelet, levels):
    x = np.random.default_rng(seed).standard_normal(400)
    a, details = dwt_periodic(x, wavelet, levels)
    energy = np.sum(a ** 2) + sum(np.sum(d ** 2) for d in details)
    assert abs(energy - np.sum(x ** 2)) <= 1e-8 * np.sum(x ** 2)


def test_mdwt_homogeneity_and_zero(rng):
    x = rng.standard_normal(400)
    assert np.array_equal(compute_mdwt(2 * x), 2 * compute_mdwt(x))
    assert np.array_equal(compute_mdwt(np.zeros(400)), np.zeros(3))


def test_mdwt_shift_invariant_details(rng):
    x = rng.standard_normal(400)
    assert np.allclose(compute_mdwt(x + 5.0), compute_mdwt(x), atol=1e-9)


def test_coarsest_first():
    t = np.arange(400)
    slow = np.sin(2 * np.pi * t / 40)     # energy at level 3
    m = compute_mdwt(slow, 7, 3)
    assert m[0] > m[2]


def test_too_short():
    with pytest.raises(ArgumentError):
        compute_mdwt(np.ones(100), 7, 3)
