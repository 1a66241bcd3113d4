import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randlind.fits import (
    fit_power_law,
    fit_stretched_exponential,
    loglog_slope,
    shifted_observable,
)

T = np.geomspace(1e-2, 1e4, 400)


def test_shifted_observable():
    np.testing.assert_array_equal(shifted_observable([0.0, 1.0], 0.0), [0.0, 1.0])
    np.testing.assert_allclose(shifted_observable([0.0, 1.0], 0.01), [0.01, 1.0])
    with pytest.raises(ValueError):
        shifted_observable([1.0], 1.0)


@given(st.floats(1e-2, 1.0), st.floats(0.3, 1.5))
def test_stretched_recovers_planted(zeta, delta):
    f = 0.01 + 0.99 * np.exp(-((zeta * T) ** delta))
    fit = fit_stretched_exponential(T, f)
    assert abs(fit.delta - delta) <= 1e-5
    assert abs(fit.zeta / zeta - 1) <= 1e-5
    assert fit.rms_log_residual <= 1e-8
    np.testing.assert_allclose(fit(T), f, rtol=1e-6)


@given(st.floats(1e-2, 1.0), st.floats(0.5, 8.0))
def test_power_law_recovers_planted(zeta, delta):
    f = 0.01 + 0.99 * (1 + zeta * T) ** (-delta)
    fit = fit_power_law(T, f)
    assert abs(fit.delta / delta - 1) <= 1e-5
    assert abs(fit.zeta / zeta - 1) <= 1e-5
    np.testing.assert_allclose(fit(T), f, rtol=1e-6)


def test_window_restricts_samples():
    f = 0.01 + 0.99 * np.exp(-((0.1 * T) ** 0.7))
    f_bad = f.copy()
    f_bad[T > 100] = 0.5
    fit = fit_stretched_exponential(T, f_bad, window=(1e-2, 50))
    assert abs(fit.delta - 0.7) <= 1e-5


def test_too_few_samples():
    with pytest.raises(ValueError):
        fit_stretched_exponential(np.array([1.0, 2.0]), np.array([0.5, 0.4]))


def test_loglog_slope():
    assert abs(loglog_slope(T, 3 * T**-1.5, (1, 100)) + 1.5) <= 1e-12
