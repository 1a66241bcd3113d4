"""Correspondence with the spin-boson model and with dephasing noise.

Rate ensembles reproduce a dephasing factor when
``sum_R P_R exp(-g_R t) = exp(-Q'(t))``, with ``Q'`` the real part of the
bath correlation exponent.  This module evaluates ``Q'`` and ``Q''`` for a
spectral density, fits ensembles to decay targets by nonnegative least
squares, and checks the lowest-order kernel correspondence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import nnls

from .kernels import SystemParams, exact_kernel_set
from .laplace import LaplaceFn, talbot
from .rates import RateEnsemble, survival_exact

__all__ = [
    "SpectralDensity",
    "DecayTarget",
    "FitResult",
    "QuadratureError",
    "qprime",
    "qdoubleprime",
    "ohmic_qprime_high_temperature",
    "fit_rate_ensemble",
    "SpinBosonReport",
    "spinboson_kernel_check",
    "dephasing_match",
    "read_two_columns",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


@dataclass(frozen=True)
class SpectralDensity:
    """Bath spectral density with coupling ``d`` and temperature ``kT`` (hbar = 1).

    ``form="ohmic"`` is ``J(w) = eta w exp(-w/wc)``.  ``form="tabulated"``
    interpolates ``(w, J)`` linearly, with ``J(0) = 0`` and ``J = 0`` beyond
    the last node (the table must carry its own cutoff).
    """

    form: str = "ohmic"
    eta: float = 1.0
    wc: float = 1.0
    w: Optional[np.ndarray] = None
    J: Optional[np.ndarray] = None
    d: float = 1.0
    kT: float = 1.0

    def __post_init__(self):
        if self.form not in ("ohmic", "tabulated"):
            raise ValueError("form must be 'ohmic' or 'tabulated'")
        if not (self.kT > 0 and math.isfinite(self.kT)):
            raise ValueError("kT must be positive")
        if self.form == "ohmic":
            if self.eta < 0 or not self.wc > 0:
                raise ValueError("ohmic density needs eta >= 0 and wc > 0")
        else:
            w = np.asarray(self.w, dtype=float)
            J = np.asarray(self.J, dtype=float)
            if w.ndim != 1 or w.shape != J.shape or w.size < 2:
                raise ValueError("tabulated density needs matching w and J arrays")
            if np.any(np.diff(w) <= 0) or w[0] < 0:
                raise ValueError("tabulated frequencies must be nonnegative and increasing")
            if np.any(J < 0):
                raise ValueError("spectral density must be nonnegative")
            if w[0] > 0:
                w, J = np.concatenate([[0.0], w]), np.concatenate([[0.0], J])
            object.__setattr__(self, "w", w)
            object.__setattr__(self, "J", J)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.form == "ohmic":
            return self.eta * w * np.exp(-w / self.wc)
        return np.interp(w, self.w, self.J, right=0.0)

    @property
    def is_zero(self) -> bool:
        if self.form == "ohmic":
            return self.eta == 0 or self.d == 0
        return not np.any(self.J > 0) or self.d == 0

    def _over_w(self, w):
        """``J(w)/w``, finite at ``w = 0``."""
        if self.form == "ohmic":
            return self.eta * np.exp(-w / self.wc)
        slope = (self.J[1] - self.J[0]) / (self.w[1] - self.w[0])
        return np.where(w > 0, self(w) / np.where(w > 0, w, 1.0), slope)

    @property
    def upper(self) -> float:
        return 60.0 * self.wc if self.form == "ohmic" else float(self.w[-1])


def _integrate_panels(f, edges, rtol=1e-10):
    """Sum of adaptive quadratures over consecutive panels with a global error check."""
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = quad(f, a, b, limit=200, epsabs=1e-300, epsrel=1e-13)
            total += val
            err += e
    if not math.isfinite(total) or err > rtol * abs(total) + 1e-300:
        raise QuadratureError(f"quadrature error estimate {err:.3g} exceeds tolerance for value {total:.6g}")
    return total


def _panels(sd: SpectralDensity, t: float):
    """Break points that put about one period of ``cos(w t)`` in each panel."""
    top = sd.upper
    n = int(min(4000, max(1, math.ceil(top * t / (2 * math.pi)))))
    edges = np.linspace(0.0, top, n + 1)
    if sd.form == "tabulated":
        edges = np.union1d(edges, sd.w)
    return edges


def qprime(sd: SpectralDensity, t) -> np.ndarray:
    """``Q'(t) = (d^2/pi) int J(w)/w^2 coth(w/2kT) (1 - cos wt) dw``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("Q'(t) needs t >= 0")
    out = np.zeros(t.shape)
    if sd.is_zero:
        return out
    x2 = 1.0 / (2.0 * sd.kT)
    for i, ti in enumerate(t):
        if ti == 0:
            continue

        def f(w, ti=ti):
            if w == 0:
                return 0.5 * sd._over_w(0.0) / x2 * ti * ti
            # (1 - cos wt)/w = 2 sin^2(wt/2)/w, coth written via tanh
            return sd._over_w(w) * 2.0 * math.sin(0.5 * w * ti) ** 2 / (w * math.tanh(w * x2))

        out[i] = _integrate_panels(f, _panels(sd, ti))
    return sd.d**2 / math.pi * out


def qdoubleprime(sd: SpectralDensity, t) -> np.ndarray:
    """``Q''(t) = (d^2/pi) int J(w)/w^2 sin(wt) dw``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("Q''(t) needs t >= 0")
    out = np.zeros(t.shape)
    if sd.is_zero:
        return out
    for i, ti in enumerate(t):
        if ti == 0:
            continue

        def f(w, ti=ti):
            return sd._over_w(w) * (math.sin(w * ti) / w if w > 0 else ti)

        out[i] = _integrate_panels(f, _panels(sd, ti))
    return sd.d**2 / math.pi * out


def ohmic_qprime_high_temperature(eta, wc, kT, d, t):
    """``coth(x) -> 1/x`` limit of ``Q'`` for the ohmic density, in closed form."""
    t = np.asarray(t, dtype=float)
    return 2 * d * d * eta * kT / math.pi * (t * np.arctan(wc * t) - np.log1p((wc * t) ** 2) / (2 * wc))


@dataclass(frozen=True)
class DecayTarget:
    """Samples ``(t_i, f_i)`` of a dephasing factor.

    By default the samples must describe a proper decay: values in
    ``(0, 1]``, nonincreasing, and ``f = 1`` at ``t = 0`` when present.
    ``require_monotone=False`` admits arbitrary positive data, for probing
    what a rate ensemble cannot represent.
    """

    t: np.ndarray
    f: np.ndarray
    require_monotone: bool = True

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if t.ndim != 1 or t.shape != f.shape or t.size == 0:
            raise ValueError("target needs matching one-dimensional t and f")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError("target times must be nonnegative and increasing")
        if not np.all(np.isfinite(f)):
            raise ValueError("target values must be finite")
        if self.require_monotone:
            if np.any(f <= 0) or np.any(f > 1 + 1e-12):
                raise ValueError("target values must lie in (0, 1]")
            if np.any(np.diff(f) > 1e-12):
                raise ValueError("target must be nonincreasing")
            if t[0] == 0 and abs(f[0] - 1) > 1e-12:
                raise ValueError("target must equal 1 at t = 0")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)

    @classmethod
    def from_function(cls, fn, t, **kw):
        t = np.asarray(t, dtype=float)
        return cls(t, np.asarray(fn(t), dtype=float), **kw)


@dataclass(frozen=True)
class FitResult:
    ensemble: RateEnsemble
    residual: float
    feasible: bool
    grid: np.ndarray
    raw_weights: np.ndarray


def fit_rate_ensemble(target: DecayTarget, n_rates: int, rate_bounds, tol: float = 1e-2) -> FitResult:
    """Fit ``sum_R P_R exp(-g_R t)`` to the target on a fixed log-spaced rate grid.

    Weights come from nonnegative least squares and are renormalized to sum
    to one; ``residual`` is the sup-norm misfit of the renormalized fit.  A
    residual above ``tol`` marks the fit infeasible (reported, not raised).
    """
    lo, hi = float(rate_bounds[0]), float(rate_bounds[1])
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError("rate bounds must satisfy 0 < low < high")
    if n_rates < 1:
        raise ValueError("n_rates must be positive")
    if target.t.size < 2 * n_rates:
        raise ValueError(f"need at least {2 * n_rates} target samples for {n_rates} rates")
    if np.ptp(target.f) == 0:
        raise ValueError("target is constant; there is no decay to fit")
    grid = np.geomspace(lo, hi, n_rates) if n_rates > 1 else np.array([lo])
    A = np.exp(-np.multiply.outer(target.t, grid))
    w, _ = nnls(A, target.f, maxiter=50 * n_rates)
    total = w.sum()
    if total <= 0:
        raise ValueError("fit produced no positive weights")
    w = w / total
    residual = float(np.max(np.abs(A @ w - target.f)))
    keep = w > 0
    ens = RateEnsemble(grid[keep], w[keep])
    return FitResult(ens, residual, residual <= tol, grid, w)


def dephasing_match(ens: RateEnsemble, target: DecayTarget) -> float:
    """``max_i |P0(t_i) - f_i|``."""
    return float(np.max(np.abs(survival_exact(ens, target.t) - target.f)))


@dataclass(frozen=True)
class SpinBosonReport:
    """Lowest-order kernel correspondence at small hopping.

    ``deviation_s`` and ``deviation_a`` are sup-norm deviations of
    ``Y_B^(s)``, ``Y_B^(a)`` from ``cos(wA t) P0`` and ``-sin(wA t) P0``,
    relative to ``max P0`` over the grid.  ``identity_error`` is the worst
    relative error of ``T(u) ([wA - Ups]^2 + [u + Gx][u + Gy]) = 1``.
    """

    t: np.ndarray
    yb_s: np.ndarray
    yb_a: np.ndarray
    reference_s: np.ndarray
    reference_a: np.ndarray
    deviation_s: float
    deviation_a: float
    identity_error: float
    vanishing_structure: bool = True


def spinboson_kernel_check(ens: RateEnsemble, sys: SystemParams, delta_small: Optional[float] = None,
                           t=None, rng_seed: int = 0) -> SpinBosonReport:
    """Compare ``Y_B`` built from the exact kernels with ``P0`` times a rotation.

    ``T(u) = 1/([wA - Ups]^2 + [u + Gx][u + Gy])``, ``Y_B^(s) = T [u + Gy]``
    and ``Y_B^(a) = -T [wA - Ups]``.  In this representation
    ``Y_A^(s) = K_A^(a) = 0`` identically.
    """
    delta = sys.delta if delta_small is None else delta_small
    mean = float(np.dot(ens.weights, ens.rates))
    if mean > 0 and delta / mean > 0.1:
        raise ValueError("the lowest-order correspondence needs delta/gamma_mean <= 0.1")
    sysd = SystemParams(sys.omega_a, delta)
    ks = exact_kernel_set(ens, sysd, check=False)
    gx, gy, ups = ks.gamma_x, ks.gamma_y, ks.upsilon
    wa = sysd.omega_a

    def T(u):
        return 1.0 / ((wa - ups(u)) ** 2 + (u + gx(u)) * (u + gy(u)))

    rng = np.random.default_rng(rng_seed)
    u = rng.uniform(0.05, 3.0, 50) * max(mean, 1e-3) + 1j * rng.normal(0, 2 * max(mean, wa, 1e-3), 50)
    ident = np.abs(T(u) * ((wa - ups(u)) ** 2 + (u + gx(u)) * (u + gy(u))) - 1).max()

    if t is None:
        t_end = 10.0 / max(mean, 1e-12)
        if wa > 0:
            t_end = min(t_end, 20.0 / wa)
        t = np.linspace(t_end / 200, t_end, 200)
    t = np.asarray(t, dtype=float)
    osc = abs(wa) + abs(delta)
    ys = talbot(LaplaceFn(lambda u: T(u) * (u + gy(u)), oscillation=osc), t)
    ya = talbot(LaplaceFn(lambda u: -T(u) * (wa - ups(u)), oscillation=osc), t)
    p0 = survival_exact(ens, t)
    ref_s = np.cos(wa * t) * p0
    ref_a = -np.sin(wa * t) * p0
    scale = float(np.max(np.abs(p0)))
    return SpinBosonReport(
        t, ys, ya, ref_s, ref_a,
        float(np.max(np.abs(ys - ref_s)) / scale),
        float(np.max(np.abs(ya - ref_a)) / scale),
        float(ident),
    )


def read_two_columns(path):
    """Two numeric columns from a CSV file; ``#`` lines and a text header are skipped."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p for p in line.replace(",", " ").split() if p]
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"malformed line in {path}: {line!r}") from None
    if not rows:
        raise ValueError(f"no data in {path}")
    a = np.array(rows)
    return a[:, 0], a[:, 1]
