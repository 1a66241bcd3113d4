"""Random dissipation-rate ensembles.

A :class:`RateEnsemble` is a finite weighted set of Lindblad rates
``{gamma_R, P_R}``.  Everything downstream (kernels, survival statistics,
samplers) is built from it, so construction normalizes and canonicalizes
the data once: weights are renormalized to sum to one and entries are
sorted by ascending rate.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RateEnsemble",
    "ExpoFamilyParams",
    "Moments",
    "build_expo_ensemble",
    "moments",
    "survival_exact",
    "waiting_density_exact",
    "load_ensemble",
    "save_ensemble",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RateEnsemble:
    """Finite discrete distribution of dissipation rates.

    Parameters
    ----------
    rates : array_like
        Nonnegative rates (inverse time).
    weights : array_like, optional
        Positive probabilities. Equal weights if omitted. Renormalized to
        sum to one.
    """

    rates: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if rates.ndim != 1 or rates.size == 0:
            raise ValueError("an ensemble needs at least one rate")
        if self.weights is None:
            weights = np.full(rates.size, 1.0 / rates.size)
        else:
            weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if weights.shape != rates.shape:
            raise ValueError("rates and weights must have the same length")
        if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(weights))):
            raise ValueError("rates and weights must be finite")
        if np.any(rates < 0):
            raise ValueError("rates must be nonnegative")
        if np.any(weights <= 0):
            raise ValueError("weights must be strictly positive")
        total = weights.sum()
        if abs(total - 1.0) > 1e-15:
            weights = weights / total
        order = np.argsort(rates, kind="stable")
        object.__setattr__(self, "rates", _readonly(rates[order]))
        object.__setattr__(self, "weights", _readonly(weights[order]))

    def __len__(self):
        return self.rates.size

    def __eq__(self, other):
        if not isinstance(other, RateEnsemble):
            return NotImplemented
        return np.array_equal(self.rates, other.rates) and np.array_equal(
            self.weights, other.weights
        )

    def __hash__(self):
        return hash((self.rates.tobytes(), self.weights.tobytes()))

    @property
    def has_zero_rate(self) -> bool:
        return bool(self.rates[0] == 0.0)

    def scaled(self, factor: float) -> "RateEnsemble":
        """Same weights, all rates multiplied by ``factor``."""
        return RateEnsemble(self.rates * factor, self.weights)

    def distinct(self):
        """Merge repeated rates; returns ``(rates, weights)`` arrays."""
        r, inv = np.unique(self.rates, return_inverse=True)
        w = np.zeros_like(r)
        np.add.at(w, inv, self.weights)
        return r, w

    def to_dict(self) -> dict:
        return {"rates": self.rates.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RateEnsemble":
        if "rates" not in data:
            raise ValueError("ensemble description needs a 'rates' list")
        return cls(data["rates"], data.get("weights"))


def load_ensemble(path) -> RateEnsemble:
    """Read an ensemble from a JSON file ``{"rates": [...], "weights": [...]}``."""
    with open(path) as fh:
        return RateEnsemble.from_dict(json.load(fh))


def save_ensemble(ens: RateEnsemble, path) -> None:
    Path(path).write_text(json.dumps(ens.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class ExpoFamilyParams:
    """Truncated exponential family ``gamma_R = gamma0 e^{-bR}``, ``P_R ~ e^{-aR}``.

    The survival probability follows ``(gamma0 t)^{-a/b}`` only for
    ``1/gamma0 << t << 1/gamma_{r_max}``; beyond that the truncation makes the
    decay exponential again.
    """

    gamma0: float
    a: float
    b: float
    r_max: int

    def __post_init__(self):
        for name in ("gamma0", "a", "b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        if int(self.r_max) != self.r_max or self.r_max < 0:
            raise ValueError("r_max must be a nonnegative integer")

    @property
    def alpha(self) -> float:
        return self.a / self.b


def build_expo_ensemble(p: ExpoFamilyParams) -> RateEnsemble:
    """Rates and weights of the exponential family for ``R = 0..r_max``."""
    if p.r_max == 0:
        warnings.warn(
            "r_max = 0 gives a single-rate (Markovian) ensemble; "
            f"the power law with alpha = {p.alpha:g} is absent",
            stacklevel=2,
        )
    R = np.arange(p.r_max + 1, dtype=float)
    rates = p.gamma0 * np.exp(-p.b * R)
    weights = -math.expm1(-p.a) * np.exp(-p.a * R)
    return RateEnsemble(rates, weights)


@dataclass(frozen=True)
class Moments:
    """Rate statistics that parameterize the kernels.

    ``gamma_mean`` is the mean rate, ``beta`` the variance divided by the
    mean and ``k_zero`` the harmonic mean, i.e. the kernel at ``u -> 0``.
    ``k_zero`` is reported as 0 with ``absorbing=True`` when a zero rate is
    present.
    """

    gamma_mean: float
    beta: float
    k_zero: float
    absorbing: bool = False


def moments(ens: RateEnsemble) -> Moments:
    r, w = ens.rates, ens.weights
    mean = math.fsum(w * r)
    if mean == 0.0:
        return Moments(0.0, 0.0, 0.0, True)
    if np.unique(r).size == 1:
        beta = 0.0
    else:
        var = math.fsum(w * (r - mean) ** 2)
        beta = var / mean
    if ens.has_zero_rate:
        return Moments(mean, beta, 0.0, True)
    return Moments(mean, beta, 1.0 / math.fsum(w / r))


def survival_exact(ens: RateEnsemble, t):
    """``P0(t) = sum_R P_R exp(-gamma_R t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("survival probability needs t >= 0")
    return np.exp(-np.multiply.outer(t, ens.rates)) @ ens.weights


def waiting_density_exact(ens: RateEnsemble, t):
    """``w(t) = sum_R P_R gamma_R exp(-gamma_R t) = -dP0/dt``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("waiting-time density needs t >= 0")
    return np.exp(-np.multiply.outer(t, ens.rates)) @ (ens.weights * ens.rates)
