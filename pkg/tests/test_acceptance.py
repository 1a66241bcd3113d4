"""Acceptance criteria A1-A9 at their stated tolerances.

Each test records a one-line PASS/FAIL verdict with the measured numbers;
``conftest.py`` prints the verdicts at the end of the session.  The module
can also be run directly: ``python3 tests/test_acceptance.py``.
"""

import math

import mpmath as mp
import numpy as np
import pytest

from randlind.dynamics import (
    TimeGrid,
    dispersive_bloch,
    ensemble_average_bloch,
    laplace_bloch,
    markovian_bloch,
    markovian_bloch_general,
    volterra_bloch,
    zeno_profile,
)
from randlind.fits import fit_stretched_exponential, loglog_slope, shifted_observable
from randlind.kernels import SystemParams, dispersive_kernels, effective_kernel_set, exact_kernel_set
from randlind.laplace import (
    FractionalKernel,
    LaplaceFn,
    eval_K_ensemble,
    gaver_stehfest,
    survival,
    survival_laplace,
    talbot,
)
from randlind.mapping import DecayTarget, SpectralDensity, fit_rate_ensemble, qprime, spinboson_kernel_check
from randlind.rates import RateEnsemble, moments
from randlind.stochastic import (
    MixtureSampler,
    TrajectoryConfig,
    build_fractional_sampler,
    renewal_average,
    static_disorder_average,
)

FIG4_RATES = [0.59, 1.0, 1.09, 1.21, 4.0, 4.7, 4.88]
RESULTS: dict = {}


class Verdict:
    """Collects sub-checks of one criterion."""

    def __init__(self, key):
        self.key = key
        self.parts = []

    def check(self, label, ok, detail):
        self.parts.append((label, bool(ok), detail))

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.parts)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        body = "; ".join(f"{lbl}{'' if ok else ' [fail]'}: {d}" for lbl, ok, d in self.parts)
        return f"{self.key} {status} | {body}"

    def finish(self):
        RESULTS[self.key] = self.line()
        failed = [lbl for lbl, ok, _ in self.parts if not ok]
        assert not failed, self.line()


def _max(x):
    return float(np.max(x))


def criterion_1():
    v = Verdict("A1")
    alpha = 0.5
    betas = [0.75, 1e-1, 1e-2, 1e-3, 1e-4, 0.0]
    t_short = np.geomspace(1e-4, 0.1, 40)
    t_tail = np.geomspace(1e3, 1e5, 21)
    worst_short, worst_slope, worst_pref = 0.0, 0.0, 0.0
    for b in betas:
        k = FractionalKernel(1.0, b, alpha)
        if b == 0:
            t = np.geomspace(1e-3, 50, 200)
            err = _max(np.abs(survival(k, t) - np.exp(-t)))
            v.check("beta=0 exponential", err <= 1e-6, f"max err {err:.2e}")
            continue
        ratio = _max(survival(k, t_short) / np.exp(-t_short))
        worst_short = max(worst_short, ratio - 1)
        v.check(f"short b={b:g}", ratio <= 1.01, f"max P0/e^-t {ratio:.4f}")
        p = survival(k, t_tail)
        slope = loglog_slope(t_tail, p, (1e3, 1e5))
        worst_slope = max(worst_slope, abs(slope + 0.5))
        v.check(f"slope b={b:g}", abs(slope + 0.5) <= 0.03, f"{slope:.4f}")
        pref = p[-1] / (k.long_time_prefactor() * t_tail[-1] ** -alpha)
        worst_pref = max(worst_pref, abs(pref - 1))
        v.check(f"prefactor b={b:g}", abs(pref - 1) <= 0.05, f"ratio {pref:.4f}")
    return v


def criterion_2():
    v = Verdict("A2")
    for r in (0.05, 0.15):
        k = FractionalKernel(r, r / 2, 0.5)
        t = np.linspace(0, 20 * np.pi, 2001)
        s = laplace_bloch(k, 1.0, [0, 0, 1], t)
        env = survival(k, t / 2)
        excess = _max(np.abs(s[:, 2]) - env)
        v.check(f"bound g/D={r}", excess <= 0.02, f"max |S_Z|-P0(t/2) {excess:.2e}")
        tp = 2 * np.pi * np.arange(1, 11)
        sp = laplace_bloch(k, 1.0, [0, 0, 1], tp)[:, 2]
        envp = survival(k, tp / 2)
        rel = _max(np.abs(sp - envp) / envp)
        v.check(f"peaks g/D={r}", rel <= 0.02, f"max rel dev {rel:.2e}")
    return v


def criterion_3():
    v = Verdict("A3")
    alpha, delta = 0.5, 1.0
    # power-law window for every rate: C1 t >> 1 and t >> gamma/2.  S_Z itself
    # carries a cos(delta t) t^-1/2 tail there, so the order is taken on Z(t).
    t_tail = np.array([1e5])
    tail_vals = []
    for r in (10, 25, 50, 100, 200):
        k = FractionalKernel(float(r), r / 2.0, alpha)
        c1 = delta**2 / k.gamma
        t = np.geomspace(3 / k.gamma, 20 / c1, 60)
        sz = laplace_bloch(k, delta, [0, 0, 1], t)[:, 2]
        z = zeno_profile(k, delta, t).z
        dev = _max(np.abs(sz - z))
        v.check(f"|S_Z-Z| g/D={r}", dev <= 0.02, f"{dev:.3f}")
        tail_vals.append(zeno_profile(k, delta, t_tail).z[0])
        tt = np.geomspace(1e3 * k.gamma, 1e5 * k.gamma, 21)
        slope = loglog_slope(tt, zeno_profile(k, delta, tt).z, (tt[0], tt[-1]))
        v.check(f"slope g/D={r}", abs(slope - (alpha - 2)) <= 0.05, f"{slope:.4f}")
    ordered = bool(np.all(np.diff(tail_vals) > 0))
    v.check("ordering", ordered, "Z(t=1e5/D) " + ",".join(f"{x:.3e}" for x in tail_vals))
    return v


def criterion_4():
    v = Verdict("A4")
    ens = RateEnsemble(FIG4_RATES)
    m = moments(ens)
    v.check("gamma/delta", abs(m.gamma_mean - 2.50) <= 0.01, f"{m.gamma_mean:.4f}")
    v.check("beta/gamma", abs(m.beta / m.gamma_mean - 0.51) <= 0.01, f"{m.beta / m.gamma_mean:.4f}")
    scaled = ens.scaled(50.0 / m.gamma_mean)
    t = np.geomspace(1e-2, 1e5, 601)
    sz = ensemble_average_bloch(scaled, SystemParams(0.0, 1.0), [0, 0, 1], t)[:, 2]
    fit = fit_stretched_exponential(t, shifted_observable(sz, 0.01), 0.01)
    v.check("stretched delta g/D=50", 0.6 <= fit.delta <= 0.8, f"{fit.delta:.4f}")
    return v


def criterion_5():
    v = Verdict("A5")
    ens = RateEnsemble(FIG4_RATES)
    sys = SystemParams(0.0, 1.0)
    grid = TimeGrid(10 / moments(ens).gamma_mean, 400)
    ref = ensemble_average_bloch(ens, sys, [0, 0, 1], grid.t)
    dv = _max(np.abs(volterra_bloch(exact_kernel_set(ens, sys), sys, [0, 0, 1], grid) - ref))
    v.check("ensemble vs Volterra", dv <= 1e-4, f"{dv:.2e}")
    t = np.linspace(0, 12, 97)
    s0 = [0.6, 0.0, 0.8]
    dl = _max(np.abs(laplace_bloch(ens, 1.0, s0, t) - ensemble_average_bloch(ens, sys, s0, t)))
    v.check("ensemble vs Laplace", dl <= 1e-6, f"{dl:.2e}")
    dm = 0.0
    for g in (0.3, 2.0, 5.0):
        a = ensemble_average_bloch(RateEnsemble([g]), sys, s0, t)
        dm = max(dm, _max(np.abs(a - markovian_bloch(g, 1.0, s0, t))))
        dm = max(dm, _max(np.abs(markovian_bloch_general(g, sys, s0, t) - markovian_bloch(g, 1.0, s0, t))))
    v.check("single rate vs closed form", dm <= 1e-12, f"{dm:.2e}")
    return v


def criterion_6():
    v = Verdict("A6")
    rng = np.random.default_rng(6)
    ens = RateEnsemble(FIG4_RATES)
    d = 1.0
    u = rng.uniform(1e-2, 5, 100) + 1j * rng.uniform(-5, 5, 100)
    K = eval_K_ensemble(ens, u + d * d / u)
    lam = 1 / (u * u + u * K + d * d)
    p0 = survival_laplace(ens)(u + d * d / u)
    e1 = _max(np.abs(lam - p0 / u) / np.abs(p0 / u))
    v.check("Lambda identity", e1 <= 1e-10, f"{e1:.2e}")
    ks = exact_kernel_set(ens, SystemParams(0.0, d))
    e2 = _max(np.abs(ks.gamma_y(u) - K) / np.abs(K))
    v.check("Gamma_Y shift", e2 <= 1e-10, f"{e2:.2e}")
    e3 = _max(np.abs(ks.upsilon(u)))
    v.check("Upsilon=0", e3 <= 1e-12, f"{e3:.2e}")
    w = 1.3
    ex = exact_kernel_set(ens, SystemParams(w, 0.0)).matrix(u)
    dk = dispersive_kernels(ens, w).matrix(u)
    e4 = _max(np.abs(ex - dk)) / _max(np.abs(dk))
    v.check("dispersive forms", e4 <= 1e-12, f"{e4:.2e}")
    return v


def criterion_7():
    v = Verdict("A7")
    ens = RateEnsemble(FIG4_RATES)
    sys = SystemParams(0.0, 1.0)
    t = np.linspace(0, 10, 41)
    res = static_disorder_average(ens, sys, [0, 0, 1], TrajectoryConfig(100_000, 1, t))
    z = _max(np.abs(res.mean - ensemble_average_bloch(ens, sys, [0, 0, 1], t)) / np.maximum(res.se, 1e-300) * (res.se > 0))
    v.check("static vs ensemble", z <= 3, f"max |dev|/SE {z:.2f}")

    k = FractionalKernel(1.0, 0.5, 0.5)
    sysr = SystemParams(0.0, 0.1)
    grid = TimeGrid(20.0, 800)
    ref = volterra_bloch(effective_kernel_set(k, sysr), sysr, [0, 0, 1], grid)
    idx = np.arange(0, 801, 40)
    rr = renewal_average(sysr, build_fractional_sampler(k), [0, 0, 1], TrajectoryConfig(100_000, 2, grid.t[idx]))
    dev = np.abs(rr.mean - ref[idx])
    ok = bool(np.all(dev <= 3 * rr.se + 1e-9))
    zr = _max(np.where(rr.se > 0, dev / np.where(rr.se > 0, rr.se, 1), 0))
    v.check("renewal vs effective Volterra", ok, f"max |dev|/SE {zr:.2f}")

    sysd = SystemParams(1.2, 0.0)
    td = np.linspace(0, 3, 13)
    rd = renewal_average(sysd, MixtureSampler(ens), [0.6, 0, 0.8], TrajectoryConfig(100_000, 3, td))
    devd = np.abs(rd.mean - dispersive_bloch(ens, 1.2, [0.6, 0, 0.8], td))
    v.check("renewal dispersive", bool(np.all(devd <= 3 * rd.se + 1e-12)),
            f"max |dev|/SE {_max(np.where(rd.se > 0, devd / np.where(rd.se > 0, rd.se, 1), 0)):.2f}")

    a = renewal_average(sys, MixtureSampler(ens), [0, 0, 1], TrajectoryConfig(20_000, 4, t, n_threads=1))
    b = renewal_average(sys, MixtureSampler(ens), [0, 0, 1], TrajectoryConfig(20_000, 4, t, n_threads=4))
    same = np.array_equal(a.mean, b.mean) and np.array_equal(a.se, b.se)
    v.check("thread-count reproducibility", same, "bit-identical" if same else "differs")
    return v


def criterion_8():
    v = Verdict("A8")
    grid = np.geomspace(0.1, 100, 31)
    t = np.linspace(0, 20, 200)
    f = np.exp(-np.outer(t, grid[[5, 10, 17]])) @ np.array([0.2, 0.5, 0.3])
    r1 = fit_rate_ensemble(DecayTarget(t, f), 31, (0.1, 100)).residual
    v.check("planted round trip", r1 <= 1e-8, f"{r1:.2e}")

    sd = SpectralDensity("ohmic", eta=1.0, wc=10.0, d=1.0, kT=100.0)
    to = np.linspace(0, 5 / sd.wc, 200)
    r2 = fit_rate_ensemble(DecayTarget(to, np.exp(-qprime(sd, to))), 20, (1e-2, 1e4)).residual
    v.check("ohmic high-T fit", r2 <= 1e-3, f"{r2:.3e}")

    ens = RateEnsemble(FIG4_RATES)
    rep = spinboson_kernel_check(ens, SystemParams(1.0, 0.01 * moments(ens).gamma_mean))
    dev = max(rep.deviation_s, rep.deviation_a)
    v.check("Y_B vs cos P0", dev <= 0.01, f"{dev:.2e}")

    tn = np.linspace(0, 10, 200)
    osc = 0.5 * (1 + np.cos(3 * tn)) * np.exp(-0.1 * tn) + 1e-3
    r3 = fit_rate_ensemble(DecayTarget(tn, osc, require_monotone=False), 40, (1e-3, 1e3)).residual
    v.check("non-monotone rejected", r3 > 1e-2, f"{r3:.3f}")
    return v


def criterion_9():
    v = Verdict("A9")
    t = np.geomspace(0.01, 10, 100)
    err = 0.0
    for a in (0.1, 1.0, 3.0):
        err = max(err, _max(np.abs(talbot(LaplaceFn(lambda u, a=a: 1 / (u + a)), t) - np.exp(-a * t))))
    v.check("exponentials", err <= 1e-8, f"{err:.1e}")
    tn = np.geomspace(0.01, 2, 60)
    err = 0.0
    for n in (1, 2, 3):
        F = LaplaceFn(lambda u, n=n: math.factorial(n) / u ** (n + 1))
        err = max(err, _max(np.abs(talbot(F, tn) - tn**n)))
    v.check("t^n", err <= 1e-8, f"{err:.1e}")
    td = np.linspace(0.01, 8, 200)
    F = LaplaceFn(lambda u: (u + 0.3) / ((u + 0.3) ** 2 + 4.0), oscillation=2.0)
    err = _max(np.abs(talbot(F, td) - np.exp(-0.3 * td) * np.cos(2 * td)))
    v.check("damped cosine", err <= 1e-8, f"{err:.1e}")
    tm = np.array([0.1, 1.0, 10.0, 100.0])
    ml = np.array([float(mp.exp(x) * mp.erfc(mp.sqrt(x))) for x in tm])
    err = _max(np.abs(talbot(LaplaceFn(lambda u: u**-0.5 / (u**0.5 + 1)), tm) - ml))
    v.check("Mittag-Leffler", err <= 1e-8, f"{err:.1e}")
    tf = np.geomspace(0.1, 1e3, 30)
    family = [(1.0, b, 0.5) for b in (0.75, 0.5, 0.1)] + [(1.0, 0.5, a) for a in (0.3, 0.7)]
    worst = 0.0
    for g, b, a in family:
        F = survival_laplace(FractionalKernel(g, b, a))
        x, y = talbot(F, tf), gaver_stehfest(F, tf)
        worst = max(worst, _max(np.abs(x - y)))
    v.check("two-method fractional", worst <= 1e-4, f"{worst:.1e}")
    return v


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.acceptance
@pytest.mark.parametrize("crit", CRITERIA, ids=[f"A{i}" for i in range(1, 10)])
def test_acceptance(crit):
    crit().finish()


if __name__ == "__main__":
    for crit in CRITERIA:
        print(crit().line(), flush=True)
