"""Monte Carlo estimators: static disorder and renewal-jump trajectories.

Trajectories are simulated in fixed-size blocks.  Block ``b`` draws from its
own generator seeded by ``SeedSequence(master_seed, spawn_key=(b,))``, and
block statistics are merged in block order, so results depend only on the
inputs and the master seed, never on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynamics import markovian_bloch_general
from .kernels import SystemParams
from .laplace import FractionalKernel, survival
from .rates import RateEnsemble

__all__ = [
    "BLOCK_SIZE",
    "TrajectoryConfig",
    "MixtureSampler",
    "TableSampler",
    "sample_waiting_finite",
    "build_fractional_sampler",
    "rotate",
    "renewal_average",
    "renewal_trajectory",
    "static_disorder_average",
    "MonteCarloResult",
    "write_trajectory_csv",
]

BLOCK_SIZE = 4096
JUMP_MAPS = ("random_flip", "projective", "flip")


@dataclass(frozen=True)
class TrajectoryConfig:
    """Number of trajectories, master seed and output times.

    ``n_threads`` only changes wall time; output is identical for any value.
    """

    n_traj: int
    master_seed: int
    t: np.ndarray
    n_threads: Optional[int] = None

    def __post_init__(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError("n_traj must be a positive integer")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) < 0):
            raise ValueError("output times must be a nondecreasing nonnegative sequence")
        object.__setattr__(self, "t", t)

    def block_rngs(self):
        n_blocks = -(-self.n_traj // BLOCK_SIZE)
        for b in range(n_blocks):
            size = min(BLOCK_SIZE, self.n_traj - b * BLOCK_SIZE)
            ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(b,))
            yield b, size, np.random.Generator(np.random.PCG64(ss))


class MixtureSampler:
    """Hyperexponential waiting times of a finite rate ensemble."""

    def __init__(self, ens: RateEnsemble):
        if ens.has_zero_rate:
            raise ValueError("a zero rate gives infinite waiting times; remove it or use a tiny rate")
        self.ensemble = ens
        self._cum = np.cumsum(ens.weights)
        self._cum[-1] = 1.0

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self._cum, u, side="right")
        idx = np.minimum(idx, self._cum.size - 1)
        return rng.standard_exponential(size) / self.ensemble.rates[idx]

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return 1.0 - survival(self.ensemble, np.maximum(t, 0.0))


def sample_waiting_finite(ens: RateEnsemble, rng: np.random.Generator, size=None):
    """Pick a rate with probability ``P_R``, then an exponential wait at that rate."""
    return MixtureSampler(ens).sample(rng, size)


class TableSampler:
    """Inverse-CDF sampling from a tabulated survival function.

    The table maps ``x = -log P0`` to ``log t`` with a monotone cubic.  Below
    the table ``P0 = exp(-rate0 t)``; above it the survival continues as
    ``(t/t_end)^(-tail)`` (a Pareto tail), or exponentially at
    ``rate_tail`` when ``tail`` is None.
    """

    def __init__(self, t, p0, tail: Optional[float], rate_tail: Optional[float] = None):
        t = np.asarray(t, dtype=float)
        p0 = np.asarray(p0, dtype=float)
        if np.any(np.diff(p0) >= 0) or np.any(p0 <= 0) or np.any(p0 >= 1):
            raise ValueError("tabulated survival must decrease strictly inside (0, 1)")
        self.t = t
        self.p0 = p0
        self._x = -np.log(p0)
        self._inv = PchipInterpolator(self._x, np.log(t))
        self._fwd = PchipInterpolator(np.log(t), self._x)
        self.rate0 = self._x[0] / t[0]
        self.tail = tail
        self.rate_tail = rate_tail

    def quantile(self, p):
        """Time at which the CDF reaches ``p`` in ``[0, 1)``."""
        x = -np.log1p(-np.asarray(p, dtype=float))
        out = np.empty(x.shape)
        lo = x < self._x[0]
        hi = x > self._x[-1]
        mid = ~(lo | hi)
        out[lo] = x[lo] / self.rate0
        out[mid] = np.exp(self._inv(x[mid]))
        extra = x[hi] - self._x[-1]
        if self.tail is None:
            out[hi] = self.t[-1] + extra / self.rate_tail
        else:
            out[hi] = self.t[-1] * np.exp(extra / self.tail)
        return out

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        x = np.empty(t.shape)
        lo = t < self.t[0]
        hi = t > self.t[-1]
        mid = ~(lo | hi)
        x[lo] = self.rate0 * np.maximum(t[lo], 0.0)
        x[mid] = self._fwd(np.log(t[mid]))
        if self.tail is None:
            x[hi] = self._x[-1] + self.rate_tail * (t[hi] - self.t[-1])
        else:
            x[hi] = self._x[-1] + self.tail * np.log(t[hi] / self.t[-1])
        return -np.expm1(-x)


def build_fractional_sampler(k: FractionalKernel, per_decade: int = 64,
                             t_min: Optional[float] = None, t_max: Optional[float] = None) -> TableSampler:
    """Waiting-time sampler for the fractional kernel.

    ``P0`` is inverted on a log grid from ``1e-8/gamma`` to ``1e8/gamma``;
    beyond that the survival follows its power law ``t^-alpha``, i.e. waits
    have a Pareto tail with density exponent ``1 + alpha``.  With
    ``beta = 0`` the table is the exponential law and so is its tail.
    """
    g = k.gamma
    t_min = t_min if t_min is not None else 1e-8 / g
    if k.beta == 0:
        t_max = t_max if t_max is not None else 30.0 / g
    else:
        t_max = t_max if t_max is not None else 1e8 / g
    n = int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1
    t = np.geomspace(t_min, t_max, n)
    p0 = survival(k, t)
    keep = (p0 > 0) & (p0 < 1)
    t, p0 = t[keep], p0[keep]
    if k.beta == 0:
        return TableSampler(t, p0, None, rate_tail=g)
    return TableSampler(t, p0, k.alpha)


def rotate(s, sys: SystemParams, tau):
    """Apply ``exp(tau A_H)``: rotation by ``phi tau`` about ``(delta, 0, omega_a)/phi``.

    ``s`` has shape ``(n, 3)`` and ``tau`` shape ``(n,)``.
    """
    phi = sys.phi
    if phi == 0:
        return s
    n = np.array([sys.delta, 0.0, sys.omega_a]) / phi
    ang = phi * np.asarray(tau, dtype=float)
    c, sn = np.cos(ang)[:, None], np.sin(ang)[:, None]
    proj = (s @ n)[:, None] * n
    return s * c + np.cross(n, s) * sn + proj * (1 - c)


def _apply_jump(s, rng, jump, flips):
    if jump == "projective":
        s[:, :2] = 0.0
        return s
    if jump == "flip":
        flip = np.ones(s.shape[0], dtype=bool)
    else:
        flip = rng.random(s.shape[0]) < 0.5
    s[flip, :2] = -s[flip, :2]
    flips += flip
    return s


def _renewal_block(sys, sampler, s0, t, size, rng, jump):
    """Bloch vectors of ``size`` renewal trajectories at times ``t``.

    Returns the array of shape ``(size, n_t, 3)`` and the flip counts at the
    final time.
    """
    out = np.empty((size, t.size, 3))
    s = np.tile(s0, (size, 1))
    last = np.zeros(size)
    nxt = sampler.sample(rng, size)
    flips = np.zeros(size, dtype=np.int64)
    for i, ti in enumerate(t):
        while True:
            due = np.flatnonzero(nxt <= ti)
            if due.size == 0:
                break
            sd = rotate(s[due], sys, nxt[due] - last[due])
            sub_flips = flips[due]
            sd = _apply_jump(sd, rng, jump, sub_flips)
            s[due] = sd
            flips[due] = sub_flips
            last[due] = nxt[due]
            nxt[due] = last[due] + sampler.sample(rng, due.size)
        out[:, i] = rotate(s, sys, ti - last)
    return out, flips


def _reversed_block(sys, sampler, s0, t, size, rng, jump):
    """Trajectories of the time-reversed renewal process, one per output time.

    For an output time ``t`` the event times are ``t - W_1 > t - W_2 > ...``
    with ``W_k`` partial sums of i.i.d. waits from ``w``; the segment that
    contains ``t = 0`` is the leftover, weighted by ``P0``.  Applying
    ``U`` and the jump map forward along these events realizes exactly
    ``rho(t) = P0(t) U(t) rho0 + int w(t - tau) U(t - tau) E[rho(tau)] dtau``.
    The same wait sequence is reused for every output time (common random
    numbers); each time point on its own has the exact law.
    """
    out = np.empty((size, t.size, 3))
    t_end = float(t[-1]) if t.size else 0.0
    cols = [sampler.sample(rng, size)]
    cum = [cols[0]]
    while np.any(cum[-1] < t_end):
        cols.append(sampler.sample(rng, size))
        cum.append(cum[-1] + cols[-1])
    W = np.stack(cum, axis=1)
    waits = np.stack(cols, axis=1)
    for i, ti in enumerate(t):
        n_ev = np.sum(W < ti, axis=1)
        first = np.where(n_ev > 0, ti - W[np.arange(size), np.maximum(n_ev - 1, 0)], ti)
        s = rotate(np.tile(s0, (size, 1)), sys, first)
        flips = np.zeros(size, dtype=np.int64)
        for k in range(int(n_ev.max(initial=0)), 0, -1):
            act = np.flatnonzero(n_ev >= k)
            sub = s[act]
            sub_flips = flips[act]
            sub = _apply_jump(sub, rng, jump, sub_flips)
            s[act] = rotate(sub, sys, waits[act, k - 1])
            flips[act] = sub_flips
        out[:, i] = s
    return out, flips


@dataclass(frozen=True)
class MonteCarloResult:
    """Per-time mean Bloch vector, its standard error, and the sample size."""

    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_traj: int
    seed: int


def _block_moments(x):
    """Mean and sum of squared deviations over axis 0.

    The mean is taken as ``x[0] + mean(x - x[0])`` so identical samples give
    an exactly zero spread.
    """
    ref = x[0]
    d = x - ref
    m = d.mean(axis=0)
    m2 = ((d - m) ** 2).sum(axis=0)
    return ref + m, m2


def _merge(stats):
    n, mean, m2 = stats[0]
    for nb, mb, m2b in stats[1:]:
        tot = n + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (n * nb / tot)
        n = tot
    return n, mean, m2


def _run_blocks(cfg: TrajectoryConfig, work):
    blocks = list(cfg.block_rngs())

    def one(item):
        b, size, rng = item
        x = work(size, rng)
        mean, m2 = _block_moments(x)
        return size, mean, m2

    if cfg.n_threads is not None and cfg.n_threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            stats = list(pool.map(one, blocks))
    else:
        stats = [one(item) for item in blocks]
    n, mean, m2 = _merge(stats)
    if n > 1:
        se = np.sqrt(m2 / (n - 1) / n)
    else:
        se = np.full(mean.shape, np.nan)
    return MonteCarloResult(cfg.t, mean, se, n, int(cfg.master_seed))


def renewal_average(sys: SystemParams, sampler, s0, cfg: TrajectoryConfig,
                    jump: str = "random_flip", ordering: str = "reversed") -> MonteCarloResult:
    """Average over renewal-jump trajectories.

    Between events the Bloch vector rotates with ``exp(t A_H)``; waits
    between events are i.i.d. from ``sampler``.  At each event the transverse
    components flip sign (``S_X, S_Y -> -S_X, -S_Y``) with probability 1/2
    (``jump="random_flip"``), so the mean event map is the projection onto
    ``S_Z``.  ``jump="flip"`` flips at every event and ``"projective"``
    applies the mean map itself.

    ``ordering="reversed"`` counts the waits backwards from each output time,
    which reproduces the effective kernels ``K(t) exp(t A_H) P`` exactly.
    ``ordering="forward"`` is the ordinary renewal process started at
    ``t = 0``; its mean obeys the kernel ``P K(t) exp(t A_H)`` instead, and
    the two coincide only when ``delta = 0``.
    """
    if jump not in JUMP_MAPS:
        raise ValueError(f"jump must be one of {JUMP_MAPS}")
    if ordering not in ("reversed", "forward"):
        raise ValueError("ordering must be 'reversed' or 'forward'")
    s0 = np.asarray(s0, dtype=float)
    block = _reversed_block if ordering == "reversed" else _renewal_block
    return _run_blocks(cfg, lambda size, rng: block(sys, sampler, s0, cfg.t, size, rng, jump)[0])


def renewal_trajectory(sys: SystemParams, sampler, s0, t, rng, jump: str = "random_flip"):
    """One forward renewal trajectory; returns ``(S(t), number of sign flips by t[-1])``."""
    t = np.asarray(t, dtype=float)
    out, flips = _renewal_block(sys, sampler, np.asarray(s0, dtype=float), t, 1, rng, jump)
    return out[0], int(flips[0])


def static_disorder_average(ens: RateEnsemble, sys: SystemParams, s0, cfg: TrajectoryConfig) -> MonteCarloResult:
    """Draw one rate per trajectory with probability ``P_R`` and propagate it exactly."""
    rates, weights = ens.distinct()
    curves = np.stack([markovian_bloch_general(g, sys, s0, cfg.t) for g in rates])
    cum = np.cumsum(weights)
    cum[-1] = 1.0

    def work(size, rng):
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), rates.size - 1)
        return curves[idx]

    return _run_blocks(cfg, work)


def write_trajectory_csv(path, res: MonteCarloResult, header: Sequence[str] = ()) -> None:
    cols = ["t", "sx", "sy", "sz", "se_sx", "se_sy", "se_sz"]
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(f"# n_traj={res.n_traj} seed={res.seed}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for i, ti in enumerate(res.t):
            row = [ti, *res.mean[i], *res.se[i]]
            w.writerow([f"{v:.17g}" for v in row])
