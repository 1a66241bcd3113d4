r"""Memory kernels of the averaged Bloch equations.

The averaged Bloch vector obeys

.. math::

    \dot S(t) = A_H S(t) - \int_0^t M(t-\tau) S(\tau)\, d\tau,

with the rotation generator ``A_H = [[0, -wA, 0], [wA, 0, -D], [0, D, 0]]``
and the kernel matrix

.. math::

    M = \begin{pmatrix} \Gamma_X & -\Upsilon & 0 \\
                        \Upsilon & \Gamma_Y & 0 \\
                        \Phi_X & \Phi_Y & 0 \end{pmatrix}.

``Phi_X`` and ``Phi_Y`` vanish for the exact average and appear only in the
effective (renewal) approximation.  Every kernel set is stored as an
instantaneous damping rate (``local``, acting as ``local * diag(1, 1, 0)``)
plus a list of :class:`KernelTerm`, each a scalar transform ``k(t)``
modulated by ``exp(freq t)`` and multiplying a constant 3x3 matrix.  The term
list is closed under complex conjugation, so summing terms gives a real
kernel and the Laplace transform is the plain sum of shifted transforms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .laplace import (
    DomainError,
    ExpSum,
    LaplaceFn,
    MemoryKernel,
    as_kernel,
    talbot,
)
from .rates import RateEnsemble

__all__ = [
    "SystemParams",
    "KernelTerm",
    "KernelSet",
    "PROJ",
    "rotation_generator",
    "exact_kernel_set",
    "appendix_kernels",
    "hopping_kernel_set",
    "dispersive_kernels",
    "effective_kernel_set",
]

PROJ = np.diag([1.0, 1.0, 0.0])
PROVENANCES = ("exact", "dispersive", "hopping", "effective")


@dataclass(frozen=True)
class SystemParams:
    """Two-level system: tunnelling splitting ``omega_a`` and hopping ``delta`` (hbar = 1)."""

    omega_a: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.omega_a) and math.isfinite(self.delta)):
            raise ValueError("system parameters must be finite")

    @property
    def phi(self) -> float:
        return math.hypot(self.omega_a, self.delta)


def rotation_generator(sys: SystemParams) -> np.ndarray:
    """``A_H`` with ``A_H S = Omega x S`` for ``Omega = (delta, 0, omega_a)``."""
    w, d = sys.omega_a, sys.delta
    return np.array([[0.0, -w, 0.0], [w, 0.0, -d], [0.0, d, 0.0]])


@dataclass(frozen=True)
class KernelTerm:
    """Contribution ``k(t) exp(freq t) matrix`` to the regular kernel matrix."""

    kernel: object  # ExpSum or LaplaceFn
    freq: complex
    matrix: np.ndarray

    def laplace(self, u):
        return self.kernel(np.asarray(u, dtype=complex) - self.freq)


@dataclass(frozen=True)
class KernelSet:
    """Kernels of one provenance, usable in the Laplace and time domains."""

    provenance: str
    local: float
    terms: tuple
    rate_scale: float = 0.0
    evaluators: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def matrix(self, u):
        """``M(u)`` with shape ``u.shape + (3, 3)``."""
        u = np.asarray(u, dtype=complex)
        out = np.zeros(u.shape + (3, 3), dtype=complex)
        out += self.local * PROJ
        for term in self.terms:
            out += term.laplace(u)[..., None, None] * term.matrix
        return out

    def _entry(self, name, i, j):
        if self.evaluators and name in self.evaluators:
            return self.evaluators[name]
        return lambda u: self.matrix(u)[..., i, j]

    @property
    def gamma_x(self) -> Callable:
        return self._entry("gamma_x", 0, 0)

    @property
    def gamma_y(self) -> Callable:
        return self._entry("gamma_y", 1, 1)

    @property
    def upsilon(self) -> Callable:
        return self._entry("upsilon", 1, 0)

    @property
    def phi_x(self) -> Callable:
        return self._entry("phi_x", 2, 0)

    @property
    def phi_y(self) -> Callable:
        return self._entry("phi_y", 2, 1)

    @property
    def memoryless(self) -> bool:
        return len(self.terms) == 0

    def regular_time(self, t):
        """Regular part of ``M(t)`` for ``t > 0``, shape ``t.shape + (3, 3)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (3, 3))
        for term in self.terms:
            k = term.kernel
            if isinstance(k, ExpSum):
                vals = np.sum(k.residues * np.exp(np.multiply.outer(t, k.poles + term.freq)), axis=-1)
            else:
                vals = talbot(k, t) * np.exp(term.freq * t)
            out += np.real(vals[..., None, None] * term.matrix)
        return out

    def tabulate(self, t) -> dict:
        """Time tables of the five kernels (regular parts); ``t > 0``."""
        m = self.regular_time(t)
        return {
            "t": np.asarray(t, dtype=float),
            "gamma_x": m[..., 0, 0],
            "gamma_y": m[..., 1, 1],
            "upsilon": m[..., 1, 0],
            "phi_x": m[..., 2, 0],
            "phi_y": m[..., 2, 1],
        }

    def to_csv(self, path, t) -> None:
        tab = self.tabulate(t)
        cols = ["t", "gamma_x", "gamma_y", "upsilon", "phi_x", "phi_y"]
        with open(path, "w", newline="") as fh:
            fh.write(f"# provenance={self.provenance} local={self.local!r}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(tab[c] for c in cols)):
                w.writerow([f"{v:.17g}" for v in row])


def _unit(i, j):
    m = np.zeros((3, 3))
    m[i, j] = 1.0
    return m


def appendix_kernels(ens: RateEnsemble, sys: SystemParams):
    """Closed-form exact ``(Gamma_X, Gamma_Y, Upsilon)`` evaluators in ``u``.

    Built from ``G(u) = 1/([u(u+g)+D^2](u+g) + u wA^2)`` averaged over the
    ensemble with the ratios ``B = <G g>/<G>`` and ``C = <G g^2>/<G g>``.
    """
    g, w = ens.rates, ens.weights
    wa, d = sys.omega_a, sys.delta

    def parts(u):
        u = np.asarray(u, dtype=complex)
        uu = u[..., None]
        den = (uu * (uu + g) + d * d) * (uu + g) + uu * wa * wa
        if np.any(np.abs(den) == 0):
            raise DomainError("evaluation at a pole of G(u)")
        G = w / den
        B = np.sum(G * g, axis=-1) / np.sum(G, axis=-1)
        C = np.sum(G * g * g, axis=-1) / np.sum(G * g, axis=-1)
        Dn = B / ((u * (u + B) + d * d) * (u + B) + u * wa * wa)
        return u, B, C, Dn

    def gamma_x(u):
        u, B, C, Dn = parts(u)
        return Dn * ((u * (u + C) + d * d) * (u + B) + u * wa * wa)

    def gamma_y(u):
        u, B, C, Dn = parts(u)
        return Dn * ((u * (u + B) + d * d) * (u + C) + u * wa * wa)

    def upsilon(u):
        u, B, C, Dn = parts(u)
        return Dn * (B - C) * u * wa

    return gamma_x, gamma_y, upsilon


def _state_space_terms(ens: RateEnsemble, sys: SystemParams):
    """Exact regular kernel as a sum of matrix-weighted exponentials.

    The averaged resolvent ``<(u - A_R)^-1> = C (u - A)^-1 B`` is a linear
    system with ``C B = I``; its inverse is
    ``u - C A B - C A (u - Pi A)^-1 Pi A B`` with ``Pi = I - B C``, so the
    regular kernel is ``-C A exp(t Pi A) Pi A B``.
    """
    rates, weights = ens.distinct()
    n = rates.size
    AH = rotation_generator(sys)
    A = np.zeros((3 * n, 3 * n))
    for i, g in enumerate(rates):
        A[3 * i:3 * i + 3, 3 * i:3 * i + 3] = AH - g * PROJ
    Bm = np.vstack([p * np.eye(3) for p in weights])
    Cm = np.hstack([np.eye(3)] * n)
    PiA = A - Bm @ (Cm @ A)
    lam, V = np.linalg.eig(PiA)
    W = np.linalg.solve(V, np.eye(3 * n))
    left = Cm @ A @ V
    right = W @ (PiA @ Bm)
    scale = np.abs(left).max() * np.abs(right).max()
    terms = []
    for k in range(lam.size):
        R = -np.outer(left[:, k], right[k])
        if np.abs(R).max() <= 1e-14 * scale:
            continue
        terms.append(KernelTerm(ExpSum([lam[k]], [1.0]), 0.0, R))
    return terms


def exact_kernel_set(ens: RateEnsemble, sys: SystemParams, check: bool = True) -> KernelSet:
    """Exact kernels of the ensemble average for arbitrary ``(omega_a, delta)``.

    The Laplace-domain evaluators are the closed-form expressions built from
    ``G, B, C, D``; the time-domain terms come from an eigen-decomposition of
    the averaged resolvent and are checked against the closed form.
    """
    gx, gy, ups = appendix_kernels(ens, sys)
    zero = lambda u: np.zeros(np.shape(u), dtype=complex)
    mean = float(np.dot(ens.weights, ens.rates))
    if np.unique(ens.rates).size == 1:
        terms = ()
    elif sys.phi == 0:
        # pure dephasing: the eigenbasis below is degenerate, but the kernel is just K(t) P
        terms = (KernelTerm(as_kernel(ens).regular, 0.0, PROJ.copy()),)
    else:
        terms = tuple(_state_space_terms(ens, sys))
    ks = KernelSet(
        "exact", mean, terms, rate_scale=float(ens.rates[-1]),
        evaluators={"gamma_x": gx, "gamma_y": gy, "upsilon": ups, "phi_x": zero, "phi_y": zero},
    )
    if check and terms:
        top = max(float(ens.rates[-1]), sys.phi, 1e-300)
        u = top * np.array([0.37 + 0.91j, 1.3 - 0.2j, 0.05 + 2.2j])
        m = ks.matrix(u)
        ref = np.stack([gx(u), gy(u), ups(u)], axis=-1)
        got = np.stack([m[:, 0, 0], m[:, 1, 1], m[:, 1, 0]], axis=-1)
        err = np.abs(got - ref).max() / max(np.abs(ref).max(), mean)
        if err > 1e-8:
            raise RuntimeError(f"exponential-sum kernel disagrees with the closed form ({err:.2e})")
    return ks


def _hopping_terms(K: MemoryKernel, delta: float):
    """Regular part of ``K(u + delta^2/u)`` as kernel terms."""
    reg = K.regular
    d2 = delta * delta
    if isinstance(reg, ExpSum) and d2 > 0:
        poles, res = [], []
        for p, r in zip(reg.poles, reg.residues):
            disc = np.sqrt(complex(p * p - 4 * d2))
            up, um = (p + disc) / 2, (p - disc) / 2
            if abs(up - um) <= 1e-7 * max(abs(p), delta):
                break
            poles += [up, um]
            res += [r * up / (up - um), r * um / (um - up)]
        else:
            return [KernelTerm(ExpSum(poles, res), 0.0, _unit(1, 1))]
    if isinstance(reg, ExpSum) and d2 == 0:
        return [KernelTerm(reg, 0.0, _unit(1, 1))] if reg.poles.size else []

    def shifted(u):
        return reg(u + d2 / u)

    return [KernelTerm(LaplaceFn(shifted, oscillation=delta, note="K(u+D^2/u)"), 0.0, _unit(1, 1))]


def hopping_kernel_set(K, delta: float) -> KernelSet:
    """``omega_a = 0``: ``Gamma_X = K(u)``, ``Gamma_Y = K(u + delta^2/u)``, ``Upsilon = 0``.

    For finite ensembles these coincide with the exact kernels; for the
    fractional kernel they define the corresponding non-Markovian evolution.
    """
    K = as_kernel(K)
    terms = []
    if not K.is_memoryless:
        terms.append(KernelTerm(K.regular, 0.0, _unit(0, 0)))
        terms += _hopping_terms(K, delta)
    d2 = delta * delta
    zero = lambda u: np.zeros(np.shape(u), dtype=complex)
    ev = {
        "gamma_x": lambda u: K(np.asarray(u, dtype=complex)),
        "gamma_y": lambda u: K(np.asarray(u, dtype=complex) + d2 / np.asarray(u, dtype=complex)),
        "upsilon": zero, "phi_x": zero, "phi_y": zero,
    }
    return KernelSet("hopping", K.local, tuple(terms), rate_scale=K.rate_scale, evaluators=ev)


def dispersive_kernels(ens_or_K, omega_a: float) -> KernelSet:
    """``delta = 0``: ``Gamma_X = Gamma_Y = K(t) cos(wA t)``, ``Upsilon = K(t) sin(wA t)``."""
    K = as_kernel(ens_or_K)
    terms = []
    if not K.is_memoryless:
        w = omega_a
        # cos -> (e^{iwt} + e^{-iwt})/2 on the diagonal, sin -> (e^{iwt} - e^{-iwt})/2i
        plus = 0.5 * np.array([[1, 1j, 0], [-1j, 1, 0], [0, 0, 0]])
        if w == 0:
            terms.append(KernelTerm(K.regular, 0.0, PROJ.copy()))
        else:
            terms.append(KernelTerm(K.regular, 1j * w, plus))
            terms.append(KernelTerm(K.regular, -1j * w, plus.conj()))
    ks = KernelSet("dispersive", K.local, tuple(terms), rate_scale=K.rate_scale)
    return ks


def effective_kernel_set(K, sys: SystemParams) -> KernelSet:
    """Kernels of the renewal (effective) approximation, ``M(t) = K(t) exp(t A_H) P``.

    ``exp(t A_H)`` is the rotation by ``phi t`` about ``n = (delta, 0, wA)/phi``,
    split spectrally into ``n n^T`` (frequency 0) and a conjugate pair at
    ``+-i phi``.  ``K`` may be a ``RateEnsemble``, ``FractionalKernel`` or
    ``MemoryKernel`` (the Laplace form; time tables are produced on demand).
    """
    K = as_kernel(K)
    phi = sys.phi
    terms = []
    if not K.is_memoryless:
        if phi == 0:
            terms.append(KernelTerm(K.regular, 0.0, PROJ.copy()))
        else:
            n = np.array([sys.delta, 0.0, sys.omega_a]) / phi
            nn = np.outer(n, n)
            cross = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
            rot = 0.5 * (np.eye(3) - nn - 1j * cross)
            if np.abs(nn @ PROJ).max() > 0:
                terms.append(KernelTerm(K.regular, 0.0, nn @ PROJ))
            terms.append(KernelTerm(K.regular, 1j * phi, rot @ PROJ))
            terms.append(KernelTerm(K.regular, -1j * phi, rot.conj() @ PROJ))
    return KernelSet("effective", K.local, tuple(terms), rate_scale=K.rate_scale)
