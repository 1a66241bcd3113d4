import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randlind.kernels import (
    KernelSet,
    SystemParams,
    appendix_kernels,
    dispersive_kernels,
    effective_kernel_set,
    exact_kernel_set,
    hopping_kernel_set,
    rotation_generator,
)
from randlind.laplace import FractionalKernel, as_kernel, eval_K_ensemble, talbot
from randlind.rates import RateEnsemble, moments


def rhp(rng, n, scale=5.0):
    return rng.uniform(1e-2, scale, n) + 1j * rng.uniform(-scale, scale, n)


def rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


@pytest.fixture
def fig4(fig4_rates):
    return RateEnsemble(fig4_rates)


class TestSystemParams:
    def test_phi(self):
        assert SystemParams(3.0, 4.0).phi == 5.0

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            SystemParams(np.inf, 0.0)

    def test_rotation_is_cross_product(self, rng):
        sys = SystemParams(0.7, 1.3)
        s = rng.normal(size=3)
        assert np.allclose(rotation_generator(sys) @ s, np.cross([1.3, 0.0, 0.7], s))


class TestExactKernels:
    def test_single_rate_memoryless(self, rng):
        ks = exact_kernel_set(RateEnsemble([1.7]), SystemParams(0.4, 0.9))
        u = rhp(rng, 10)
        assert ks.memoryless and ks.local == 1.7
        assert np.allclose(ks.gamma_x(u), 1.7) and np.allclose(ks.gamma_y(u), 1.7)
        assert np.allclose(ks.upsilon(u), 0.0)

    def test_hopping_limit(self, fig4, rng):
        ks = exact_kernel_set(fig4, SystemParams(0.0, 1.0))
        u = rhp(rng, 100)
        assert rel(ks.gamma_x(u), eval_K_ensemble(fig4, u)) <= 1e-10
        assert rel(ks.gamma_y(u), eval_K_ensemble(fig4, u + 1.0 / u)) <= 1e-10
        assert np.all(np.abs(ks.upsilon(u)) <= 1e-13 * np.abs(ks.gamma_x(u)))

    def test_dispersive_limit(self, fig4, rng):
        w = 1.3
        ks = exact_kernel_set(fig4, SystemParams(w, 0.0))
        u = rhp(rng, 20)
        kp, km = eval_K_ensemble(fig4, u - 1j * w), eval_K_ensemble(fig4, u + 1j * w)
        assert rel(ks.gamma_x(u), (kp + km) / 2) <= 1e-12
        assert rel(ks.gamma_y(u), (kp + km) / 2) <= 1e-12
        assert rel(ks.upsilon(u), (kp - km) / 2j) <= 1e-12

    def test_effective_extra_kernels_vanish(self, fig4, rng):
        ks = exact_kernel_set(fig4, SystemParams(0.5, 1.0))
        u = rhp(rng, 10)
        assert np.all(ks.phi_x(u) == 0) and np.all(ks.phi_y(u) == 0)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_state_space_matches_closed_form(self, wa, d):
        ens = RateEnsemble([0.3, 1.1, 2.5], [0.2, 0.5, 0.3])
        ks = exact_kernel_set(ens, SystemParams(wa, d), check=False)
        u = np.array([0.4 + 0.8j, 1.5 - 2.0j, 3.0 + 0.1j, 0.2 - 0.3j])
        m = ks.matrix(u)
        gx, gy, ups = appendix_kernels(ens, SystemParams(wa, d))
        scale = max(np.abs(gx(u)).max(), 1.0)
        assert np.abs(m[:, 0, 0] - gx(u)).max() <= 1e-10 * scale
        assert np.abs(m[:, 1, 1] - gy(u)).max() <= 1e-10 * scale
        assert np.abs(m[:, 1, 0] - ups(u)).max() <= 1e-10 * scale
        assert np.abs(m[:, 0, 1] + ups(u)).max() <= 1e-10 * scale
        assert np.abs(m[:, 2, :]).max() <= 1e-10 * scale

    def test_conjugate_symmetry(self, fig4, rng):
        ks = exact_kernel_set(fig4, SystemParams(0.6, 1.1))
        u = rhp(rng, 30)
        for f in (ks.gamma_x, ks.gamma_y, ks.upsilon):
            assert np.all(np.abs(f(np.conj(u)) - np.conj(f(u))) <= 1e-13 * np.abs(f(u)) + 1e-15)

    def test_time_domain_matches_inversion(self, fig4):
        sys = SystemParams(0.8, 1.0)
        ks = exact_kernel_set(fig4, sys)
        mean = moments(fig4).gamma_mean
        t = np.array([0.05, 0.3, 1.0, 2.5])
        tab = ks.tabulate(t)
        ref = talbot(lambda u: ks.gamma_y(u) - mean, t, oscillation=3 * sys.phi)
        assert np.max(np.abs(tab["gamma_y"] - ref)) <= 1e-8


class TestDispersive:
    def test_zero_frequency(self, fig4):
        ks = dispersive_kernels(fig4, 0.0)
        t = np.linspace(0.1, 3, 7)
        tab = ks.tabulate(t)
        k = as_kernel(fig4).regular.time(t)
        assert np.allclose(tab["gamma_x"], k, atol=1e-14)
        assert np.allclose(tab["upsilon"], 0.0)

    def test_modulation(self, fig4):
        w = 2.0
        t = np.linspace(0.1, 3, 9)
        tab = dispersive_kernels(fig4, w).tabulate(t)
        k = as_kernel(fig4).regular.time(t)
        assert np.allclose(tab["gamma_x"], k * np.cos(w * t), atol=1e-13)
        assert np.allclose(tab["gamma_y"], k * np.cos(w * t), atol=1e-13)
        assert np.allclose(tab["upsilon"], k * np.sin(w * t), atol=1e-13)

    def test_single_rate_marker(self):
        ks = dispersive_kernels(RateEnsemble([2.0]), 1.0)
        assert ks.memoryless and ks.local == 2.0

    def test_head_is_k_zero_plus(self, fig4):
        # large-u expansion: K(u) = <g> - (<g^2> - <g>^2)/u + ..., so k(0+) = -beta <g>
        m = moments(fig4)
        tab = dispersive_kernels(fig4, 0.0).tabulate(np.array([1e-9]))
        assert tab["gamma_x"][0] == pytest.approx(-m.beta * m.gamma_mean, rel=1e-6)

    def test_matches_exact_at_zero_hopping(self, fig4, rng):
        u = rhp(rng, 20)
        a = dispersive_kernels(fig4, 0.9).matrix(u)
        b = exact_kernel_set(fig4, SystemParams(0.9, 0.0)).matrix(u)
        assert np.max(np.abs(a - b)) <= 1e-12 * np.abs(b).max()


class TestEffective:
    def test_zero_hopping_reduces_to_dispersive(self, fig4):
        t = np.linspace(0.1, 4, 11)
        a = effective_kernel_set(fig4, SystemParams(1.2, 0.0)).tabulate(t)
        b = dispersive_kernels(fig4, 1.2).tabulate(t)
        for key in ("gamma_x", "gamma_y", "upsilon"):
            assert np.allclose(a[key], b[key], atol=1e-13)
        assert np.all(a["phi_x"] == 0) and np.all(a["phi_y"] == 0)

    def test_hopping_substitution(self, fig4):
        d = 1.4
        t = np.linspace(0.1, 4, 11)
        tab = effective_kernel_set(fig4, SystemParams(0.0, d)).tabulate(t)
        k = as_kernel(fig4).regular.time(t)
        assert np.allclose(tab["gamma_x"], k, atol=1e-13)
        assert np.allclose(tab["gamma_y"], k * np.cos(d * t), atol=1e-13)
        assert np.allclose(tab["upsilon"], 0.0, atol=1e-13)
        assert np.allclose(tab["phi_x"], 0.0, atol=1e-13)
        assert np.allclose(tab["phi_y"], k * np.sin(d * t), atol=1e-13)

    def test_pointwise_identity(self, fig4, rng):
        wa, d = 0.7, 1.9
        phi = np.hypot(wa, d)
        t = rng.uniform(0.05, 5.0, 10)
        tab = effective_kernel_set(fig4, SystemParams(wa, d)).tabulate(t)
        k = as_kernel(fig4).regular.time(t)
        ref = k * ((d / phi) ** 2 + (wa / phi) ** 2 * np.cos(phi * t))
        assert np.allclose(tab["gamma_x"], ref, atol=1e-13)

    def test_fractional_kernel_accepted(self):
        ks = effective_kernel_set(FractionalKernel(1.0, 0.5, 0.5), SystemParams(0.0, 0.1))
        assert ks.provenance == "effective" and len(ks.terms) == 3


class TestHopping:
    def test_ensemble_equals_exact(self, fig4, rng):
        u = rhp(rng, 30)
        a = hopping_kernel_set(fig4, 1.0).matrix(u)
        b = exact_kernel_set(fig4, SystemParams(0.0, 1.0)).matrix(u)
        assert np.max(np.abs(a - b)) <= 1e-10 * np.abs(b).max()

    def test_fractional_identity(self, rng):
        k = FractionalKernel(1.0, 0.5, 0.5)
        ks = hopping_kernel_set(k, 0.3)
        u = rhp(rng, 100)
        K = as_kernel(k)
        assert rel(ks.gamma_y(u), K(u + 0.09 / u)) <= 1e-10
        assert rel(ks.matrix(u)[:, 1, 1], K(u + 0.09 / u)) <= 1e-10


@pytest.mark.parametrize(
    "build",
    [
        lambda K: exact_kernel_set(K, SystemParams(0.5, 1.0)),
        lambda K: hopping_kernel_set(K, 1.0),
        lambda K: dispersive_kernels(K, 0.5),
        lambda K: effective_kernel_set(K, SystemParams(0.5, 1.0)),
    ],
)
def test_single_rate_collapses_to_marker(build):
    ks = build(RateEnsemble([0.8]))
    assert ks.memoryless and ks.local == 0.8


def test_markovian_fractional_is_marker():
    ks = hopping_kernel_set(FractionalKernel(2.0, 0.0, 0.5), 1.0)
    assert ks.memoryless and ks.local == 2.0


def test_unknown_provenance():
    with pytest.raises(ValueError):
        KernelSet("other", 0.0, ())


def test_csv_export(fig4, tmp_path):
    path = tmp_path / "k.csv"
    effective_kernel_set(fig4, SystemParams(0.3, 1.0)).to_csv(path, np.linspace(0.1, 1, 5))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# provenance=effective")
    assert lines[1] == "t,gamma_x,gamma_y,upsilon,phi_x,phi_y"
    assert len(lines) == 7
