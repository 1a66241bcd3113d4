"""Curve fits used to characterize computed decays.

Stretched exponentials are fitted on a logarithmic time grid with residuals
taken in ``log f``, which weights the slow tail as much as the fast onset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

__all__ = [
    "StretchedFit",
    "PowerLawFit",
    "shifted_observable",
    "fit_stretched_exponential",
    "fit_power_law",
    "loglog_slope",
]


def shifted_observable(sz, sigma: float = 0.01):
    """``sigma + (1 - sigma) sz``; keeps the logarithm finite near ``sz = 0``."""
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    return sigma + (1.0 - sigma) * np.asarray(sz, dtype=float)


@dataclass(frozen=True)
class StretchedFit:
    """``f(t) = sigma + (1 - sigma) exp(-(zeta t)^delta)``."""

    zeta: float
    delta: float
    sigma: float
    rms_log_residual: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.sigma + (1 - self.sigma) * np.exp(-((self.zeta * t) ** self.delta))


@dataclass(frozen=True)
class PowerLawFit:
    """``f(t) = sigma + (1 - sigma) (1 + zeta t)^(-delta)``."""

    zeta: float
    delta: float
    sigma: float
    rms_log_residual: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.sigma + (1 - self.sigma) * (1 + self.zeta * t) ** (-self.delta)


def _positive_window(t, f, window):
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    lo, hi = window if window is not None else (t[t > 0].min(), t.max())
    sel = (t >= lo) & (t <= hi) & (t > 0) & (f > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three positive samples inside the fit window")
    return t[sel], f[sel]


def fit_stretched_exponential(t, f, sigma: float = 0.01, window=None) -> StretchedFit:
    """Least-squares fit of ``log f`` to a shifted stretched exponential.

    ``f`` is the already shifted observable (see :func:`shifted_observable`);
    ``sigma`` is held fixed.
    """
    ts, fs = _positive_window(t, f, window)

    def model(x, log_zeta, delta):
        return np.log(sigma + (1 - sigma) * np.exp(-np.exp(delta * (log_zeta + np.log(x)))))

    p0 = (-np.log(_e_folding_time(ts, fs, sigma)), 0.8)
    popt, rms = _log_fit(model, ts, fs, p0, ([-np.inf, 0.05], [np.inf, 3.0]))
    return StretchedFit(float(np.exp(popt[0])), float(popt[1]), sigma, rms)


def _log_fit(model, ts, fs, p0, bounds):
    popt, _ = curve_fit(model, ts, np.log(fs), p0=p0, bounds=bounds, maxfev=20000)
    res = model(ts, *popt) - np.log(fs)
    return popt, float(np.sqrt(np.mean(res**2)))


def _e_folding_time(ts, fs, sigma):
    g = (np.maximum(fs, sigma) - sigma) / (1 - sigma)
    return ts[int(np.argmin(np.abs(g - np.exp(-1.0))))]


def fit_power_law(t, f, sigma: float = 0.01, window=None) -> PowerLawFit:
    """Least-squares fit of ``log f`` to a shifted generalized power law."""
    ts, fs = _positive_window(t, f, window)

    def model(x, log_zeta, delta):
        return np.log(sigma + (1 - sigma) * np.exp(-delta * np.log1p(np.exp(log_zeta) * x)))

    # (1 + zeta t)^-delta with delta = 4 drops by 1/e near zeta t = 0.28
    p0 = (np.log(0.28 / _e_folding_time(ts, fs, sigma)), 4.0)
    popt, rms = _log_fit(model, ts, fs, p0, ([-np.inf, 0.05], [np.inf, 50.0]))
    return PowerLawFit(float(np.exp(popt[0])), float(popt[1]), sigma, rms)


def loglog_slope(t, f, window) -> float:
    """Slope of a straight-line fit of ``log f`` against ``log t`` inside ``window``."""
    ts, fs = _positive_window(t, f, window)
    return float(np.polyfit(np.log(ts), np.log(fs), 1)[0])
