"""Grid reduction of the Youla-parametrized cost and channel-power constraint.

Given coprime factors of ``G_yu`` the closed-loop cost is a convex function
of the Youla parameter ``Q``. On a uniform grid every quantity reduces to a
handful of complex scalars per frequency, collected in :class:`ProgramData`:

* ``m2 = M**2`` and ``b = M**2 V / N`` so that ``A Q + B = G_zu G_yv (m2 Q + b)``
* ``E = M N H`` and ``F = (M V - 1) H`` for the channel input
* ``g = |G_zu| |G_yv|`` and ``ell = M**2 tr(L^* G_zu G_yv)``
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from .errors import (
    IdenticallyZeroDenominator,
    NonNormalizedChannel,
    OutsideDomain,
    PerturbationFailed,
    SnrCtlError,
    ZeroOnCircle,
)
from .factorization import CoprimeFactors
from .lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    h2_norm_sq,
    l2_norm_sq,
)

__all__ = [
    "FirParameter",
    "ProgramData",
    "ThetaCheck",
    "YoulaController",
    "build_program_data",
    "fir_basis",
    "phi",
    "phi0",
    "delta",
    "channel_power",
    "in_theta_q",
    "k_from_q",
    "circle_roots",
    "perturb_q",
]

CIRCLE_BAND = 1e-6
L_CHECK_POINTS = 4096


@dataclass(frozen=True, eq=False)
class FirParameter:
    """FIR Youla parameter ``Q(z) = sum_j q_j z**-j``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, m: int) -> "FirParameter":
        return cls(np.zeros(m))

    @property
    def order(self) -> int:
        return self.coeffs.size

    def __len__(self) -> int:
        return self.coeffs.size

    def to_transfer(self) -> RationalTransfer:
        return RationalTransfer.from_fir(self.coeffs)

    def freq(self, omegas) -> np.ndarray:
        return fir_basis(np.asarray(omegas, float), self.coeffs.size) @ self.coeffs


def fir_basis(omegas: np.ndarray, m: int) -> np.ndarray:
    """Matrix ``Z[k, j] = exp(-1j j omega_k)`` mapping FIR taps to samples."""
    return np.exp(-1j * np.multiply.outer(omegas, np.arange(m)))


def _coeffs(q) -> np.ndarray:
    return q.coeffs if isinstance(q, FirParameter) else np.atleast_1d(np.asarray(q, float))


@dataclass(frozen=True, eq=False)
class ProgramData:
    """Per-grid-point scalars sufficient to evaluate the cost and constraint.

    Attributes
    ----------
    m2, b, E, F, ell, v_over_n : ndarray of complex, shape (n,)
    g : ndarray of float, shape (n,)
    L_norm_sq : float
        ``||L||_2^2`` from a Gramian; ``L_norm_sq_check`` is dense quadrature.
    snr : float
        Channel SNR ``sigma^2``.
    snr_offset : float
        Added to ``sigma^2`` in the relaxed program (denominator of ``rho_n``,
        the discretized power constraint and the LMI); ``phi`` and the
        domain test always use ``sigma^2`` itself.
    """

    grid: FrequencyGrid
    m2: np.ndarray
    b: np.ndarray
    E: np.ndarray
    F: np.ndarray
    g: np.ndarray
    ell: np.ndarray
    v_over_n: np.ndarray
    L_norm_sq: float
    L_norm_sq_check: float
    snr: float
    snr_offset: float = 0.0

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def sigma2_eff(self) -> float:
        return self.snr + self.snr_offset

    def samples(self, q):
        """Return ``(Q_k, h_k, w_k)`` for the FIR parameter ``q``."""
        c = _coeffs(q)
        Qk = fir_basis(self.grid.omegas, c.size) @ c
        return Qk, self.m2 * Qk + self.b, self.E * Qk + self.F


def _entries(x) -> list:
    if isinstance(x, RationalTransfer):
        return [x]
    out = []
    for item in x:
        out.extend(_entries(item))
    return out


def _block_numerators(plant: GeneralizedPlant):
    """Numerators of all plant blocks over the common denominator ``det(zI - A)``."""
    ss = plant.realization
    if ss.n_states == 0:
        return np.ones(1), [[np.atleast_1d(ss.D[i, j]) for j in range(ss.n_inputs)]
                            for i in range(ss.n_outputs)]
    d = np.poly(ss.A)
    cols = []
    for j in range(ss.n_inputs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", signal.BadCoefficients)
            num, _ = signal.ss2tf(ss.A, ss.B, ss.C, ss.D, input=j)
        cols.append(num)
    return d, [[cols[j][i] for j in range(ss.n_inputs)] for i in range(ss.n_outputs)]


def _l_transfer(plant: GeneralizedPlant, factors: CoprimeFactors):
    """``L = G_zv - (M/N) G_zu G_yv``; since ``M/N = 1/G_yu`` it is a plant property.

    Formed as ``(n_zv n_yu - n_zu n_yv) / (d n_yu)`` over the common
    denominator ``d`` of the realization. Building it from separately
    reduced blocks instead stacks copies of each pole and the resulting
    clusters ruin the Gramian.
    """
    nz, nv = plant.n_z, plant.n_v
    d, n = _block_numerators(plant)
    nyu = n[nz][nv]
    out = []
    for i in range(nz):
        row = []
        for j in range(nv):
            num = np.polysub(np.polymul(n[i][j], nyu), np.polymul(n[i][nv], n[nz][j]))
            den = np.polymul(d, nyu)
            # the 2x2 minor has McMillan degree at most deg d, so d divides num
            quo, rem = np.polydiv(num, d)
            if np.max(np.abs(rem), initial=0.0) <= 1e-10 * max(np.max(np.abs(num)), 1e-300):
                num, den = quo, nyu
            row.append(RationalTransfer.from_desc(num, den).reduce())
        out.append(row)
    return out


def build_program_data(
    plant: GeneralizedPlant,
    factors: CoprimeFactors,
    H: RationalTransfer,
    grid: FrequencyGrid,
    snr: float,
    snr_offset: float = 0.0,
) -> ProgramData:
    """Evaluate the program scalars on ``grid``.

    Raises
    ------
    ZeroOnCircle
        If ``N``, ``H`` or the plant weight ``g`` vanishes on the grid.
    NonNormalizedChannel
        If ``||H||_2 != 1``.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    if abs(h2_norm_sq(H) - 1.0) > 1e-8:
        raise NonNormalizedChannel(f"||H||^2 = {h2_norm_sq(H):.12g}")
    w = grid.omegas
    M, N, U, V = (f.freq(w) for f in (factors.M, factors.N, factors.U, factors.V))
    Hk = H.freq(w)
    if np.min(np.abs(N)) <= 1e-9:
        raise ZeroOnCircle("N vanishes on the grid")
    if np.min(np.abs(Hk)) <= 1e-9:
        raise ZeroOnCircle("H vanishes on the grid")
    Gzv, Gzu, Gyv, _ = plant.freq_blocks(w)
    g = np.linalg.norm(Gzu, axis=1) * np.linalg.norm(Gyv, axis=1)
    if np.min(g) <= 0.0:
        raise ZeroOnCircle("G_zu or G_yv vanishes on the grid")
    GG = Gzu[:, :, None] * Gyv[:, None, :]
    Lk = Gzv - (M / N)[:, None, None] * GG
    ell = M**2 * np.sum(np.conj(Lk) * GG, axis=(1, 2))

    L_tf = _entries(_l_transfer(plant, factors))
    L_norm_sq = float(sum(l2_norm_sq(t) for t in L_tf))
    dense = FrequencyGrid(L_CHECK_POINTS).omegas
    L_check = float(sum(np.mean(np.abs(t.freq(dense)) ** 2) for t in L_tf))
    if abs(L_norm_sq - L_check) > 1e-6 * max(L_norm_sq, 1.0):
        raise SnrCtlError(f"||L||^2 mismatch: Gramian {L_norm_sq:.12g}, quadrature {L_check:.12g}")

    return ProgramData(
        grid=grid,
        m2=M**2,
        b=M**2 * V / N,
        E=M * N * Hk,
        F=(M * V - 1.0) * Hk,
        g=g,
        ell=ell,
        v_over_n=V / N,
        L_norm_sq=L_norm_sq,
        L_norm_sq_check=L_check,
        snr=float(snr),
        snr_offset=float(snr_offset),
    )


class ThetaCheck(NamedTuple):
    member: bool
    power: float
    slack: float


def channel_power(data: ProgramData, q) -> float:
    """Grid value of ``||E Q + F||_2^2``."""
    _, _, w = data.samples(q)
    return float(np.mean(np.abs(w) ** 2))


def in_theta_q(data: ProgramData, q) -> ThetaCheck:
    p = channel_power(data, q)
    return ThetaCheck(p < data.snr, p, data.snr - p)


def delta(data: ProgramData, q) -> float:
    """``||L||^2 + 2 Re <L, A Q + B>`` on the grid."""
    Qk, _, _ = data.samples(q)
    return data.L_norm_sq + 2.0 * float(np.mean(np.real(data.ell * (Qk + data.v_over_n))))


def phi0(data: ProgramData, q) -> float:
    """``||A Q + B||^2 + ||(A Q + B)(E Q + F)||_1^2 / (sigma^2 - ||E Q + F||^2)``.

    Raises
    ------
    OutsideDomain
        If the channel power is not below ``sigma^2``.
    """
    _, h, w = data.samples(q)
    p = float(np.mean(np.abs(w) ** 2))
    if p >= data.snr:
        raise OutsideDomain(f"channel power {p:.6g} >= sigma^2 = {data.snr:.6g}")
    gh = data.g * np.abs(h)
    cross = float(np.mean(gh * np.abs(w)))
    return float(np.mean(gh**2)) + cross**2 / (data.snr - p)


def phi(data: ProgramData, q) -> float:
    return delta(data, q) + phi0(data, q)


class YoulaController(NamedTuple):
    K: RationalTransfer
    numerator: RationalTransfer
    denominator: RationalTransfer
    circle_roots: np.ndarray

    @property
    def needs_perturbation(self) -> bool:
        return self.circle_roots.size > 0


def circle_roots(factors: CoprimeFactors, q, band: float = CIRCLE_BAND) -> np.ndarray:
    """Roots of ``N Q + V`` within ``band`` of the unit circle."""
    r = (factors.N * RationalTransfer.from_fir(_coeffs(q)) + factors.V).reduce().zeros()
    return r[np.abs(np.abs(r) - 1.0) < band]


def k_from_q(factors: CoprimeFactors, q, zero_tol: float = 1e-10) -> YoulaController:
    """Controller ``K = (M Q - U) / (N Q + V)`` with circle-root diagnostics."""
    Q = RationalTransfer.from_fir(_coeffs(q))
    num = (factors.M * Q - factors.U).reduce()
    den = (factors.N * Q + factors.V).reduce()
    if den.is_zero:
        raise IdenticallyZeroDenominator("N Q + V vanishes identically")
    roots = den.zeros()
    near = roots[np.abs(np.abs(roots) - 1.0) < CIRCLE_BAND]
    if np.max(np.abs(num.num_coeffs)) <= zero_tol * max(1.0, np.max(np.abs(num.den_coeffs))):
        return YoulaController(RationalTransfer.constant(0.0), RationalTransfer.constant(0.0), den, near)
    return YoulaController((num / den).reduce(), num, den, near)


def _root_update(factors: CoprimeFactors, q: np.ndarray, z0: complex, mu: float, real: bool):
    """Taps ``(lambda_0, lambda_1)`` placing a root of ``N Qhat + V`` at ``(1 + mu) z0``."""
    Q = RationalTransfer.from_fir(q)
    znew = (1.0 + mu) * (z0.real if real else z0)
    c = -complex((factors.N * Q + factors.V)(znew)) / complex(factors.N(znew))
    if real:
        return np.array([c.real])
    zi = 1.0 / znew
    if abs(zi.imag) < 1e-14:
        return None
    lam1 = c.imag / zi.imag
    return np.array([c.real - lam1 * zi.real, lam1])


def perturb_q(factors: CoprimeFactors, data: ProgramData, q, eps: float | None = None) -> FirParameter:
    """Move roots of ``N Q + V`` off the unit circle at small cost.

    Each circle root ``z0`` is pushed radially to ``(1 + mu) z0`` by adding
    ``lambda_0 + lambda_1 z**-1`` to ``Q`` (``lambda_0`` alone for real
    roots); ``mu`` starts at ``1e-3`` and is halved until the cost increase
    stays below ``eps``, the parameter stays feasible and no other root
    enters the band.

    Raises
    ------
    PerturbationFailed
        If ``mu`` falls below ``1e-12`` without an acceptable update.
    """
    c = _coeffs(q).astype(float).copy()
    phi_ref = phi(data, c)
    if eps is None:
        eps = 1e-6 * (1.0 + abs(phi_ref))
    for _ in range(4 * (c.size + 8)):
        band = circle_roots(factors, c)
        if band.size == 0:
            return FirParameter(c)
        z0 = band[np.argmax(band.imag)]
        real = abs(z0.imag) <= 1e-8
        if not real and c.size < 2:
            raise PerturbationFailed("complex circle root needs at least two taps", band, None)
        need = 1 if real else 2
        mu = 1e-3
        accepted = False
        residuals = []
        while mu >= 1e-12:
            lam = _root_update(factors, c, z0, mu, real)
            if lam is not None:
                trial = c.copy()
                trial[: lam.size] += lam
                new_band = circle_roots(factors, trial)
                check = in_theta_q(data, trial)
                if check.member:
                    cost = phi(data, trial)
                    residuals.append((mu, cost - phi_ref))
                    if cost < phi_ref + eps and new_band.size <= band.size - need:
                        c = trial
                        accepted = True
                        break
            mu /= 2.0
        if not accepted:
            raise PerturbationFailed(
                f"could not displace circle root {z0:.6g}", roots=band, residuals=residuals
            )
    band = circle_roots(factors, c)
    if band.size:
        raise PerturbationFailed("circle roots remain after repeated updates", roots=band)
    return FirParameter(c)
