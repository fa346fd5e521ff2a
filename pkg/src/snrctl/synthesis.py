"""End-to-end encoder/decoder synthesis and stabilizability estimates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .convex_solver import SolverReport, SolverStatus, assemble, least_squares_power, minimize
from .errors import (
    AlphaNonpositive,
    Infeasible,
    InternalStabilityFailed,
    NonNormalizedChannel,
    SpectralFitDegraded,
    Unstable,
    UnstableLoop,
)
from .factorization import (
    CoprimeFactors,
    coprime_factorize,
    fit_magnitude_sq,
    spectral_factor_trig,
)
from .lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    GridSamples,
    RationalTransfer,
    h2_norm_sq,
    is_schur_stable,
    normalize_channel_factor,
)
from .validation import analytic_cost, check_internal_stability, closed_loop
from .youla_program import (
    FirParameter,
    build_program_data,
    circle_roots,
    fir_basis,
    k_from_q,
    perturb_q,
    phi,
)

__all__ = [
    "ChannelSpec",
    "NominalFactorization",
    "SynthesisResult",
    "synthesize",
    "factorize_nominal_k",
    "min_snr_for_stabilization",
    "unstable_pole_product_bound",
]

DEGRADED_FIT = 0.05
MIN_FIT_POINTS = 4096


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Channel noise spectral factor ``H`` (unit H2 norm) and SNR ``sigma^2``."""

    H: RationalTransfer
    snr: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not is_schur_stable(self.H):
            raise Unstable("channel factor must be stable")
        if abs(h2_norm_sq(self.H) - 1.0) > 1e-10:
            raise NonNormalizedChannel("channel factor must have unit H2 norm")

    @classmethod
    def normalized(cls, H: RationalTransfer, snr: float) -> "ChannelSpec":
        return cls(normalize_channel_factor(H), snr)

    @classmethod
    def awgn(cls, snr: float) -> "ChannelSpec":
        return cls(RationalTransfer.constant(1.0), snr)


class NominalFactorization(NamedTuple):
    C: RationalTransfer
    D: RationalTransfer
    bound: float
    achieved: float
    alpha: float
    power: float
    fit_residual: float
    fit_shift: float


@dataclass
class SynthesisResult:
    q: FirParameter
    q_hat: FirParameter
    K: RationalTransfer
    C: RationalTransfer
    D: RationalTransfer
    gamma: float
    J_analytic: float
    channel_power: float
    spectral_fit_residual: float
    solver_report: SolverReport
    stabilizability: dict
    phi_q_hat: float = float("nan")
    noise_bound: float = float("nan")
    noise_achieved: float = float("nan")
    alpha: float = float("nan")
    fit_shift: float = 0.0
    degraded: bool = False
    factors: CoprimeFactors | None = field(default=None, repr=False)


def _fit_grid(grid: FrequencyGrid, Nc: int) -> FrequencyGrid:
    return FrequencyGrid(max(grid.n, 16 * (Nc + 1), MIN_FIT_POINTS))


def _sensitivity_samples(K, plant, omegas, youla):
    if youla is not None:
        f, q = youla
        Q = fir_basis(omegas, len(q)) @ np.asarray(getattr(q, "coeffs", q))
        return f.M.freq(omegas) * (f.N.freq(omegas) * Q + f.V.freq(omegas))
    _, _, _, Gyu = plant.freq_blocks(omegas)
    return 1.0 / (1.0 - K.freq(omegas) * Gyu)


def factorize_nominal_k(
    K: RationalTransfer,
    plant: GeneralizedPlant,
    channel: ChannelSpec,
    grid: FrequencyGrid,
    Nc: int,
    youla: tuple | None = None,
) -> NominalFactorization:
    """Split a stabilizing ``K`` into an outer encoder ``C`` and decoder ``D = K / C``.

    The encoder magnitude follows the optimal shape
    ``|C|^2 ~ sqrt(|G_zu|^2 / |G_yv|^2) |K H|``, fitted by a cosine series of
    order ``Nc`` and factorized; its static gain is then set so the encoder
    uses the whole remaining channel power ``alpha``.

    Returns
    -------
    NominalFactorization
        ``bound`` is ``||K S^2 H G_zu G_yv||_1^2 / alpha`` and ``achieved`` is
        ``||D S H G_zu||_2^2``, both by dense quadrature.

    Raises
    ------
    AlphaNonpositive
        If ``||K H G_yu S||_2^2 >= sigma^2``.
    UnstableLoop
        If ``K`` does not stabilize ``G_yu``.
    """
    fg = _fit_grid(grid, Nc)
    w = fg.omegas
    if youla is None:
        S_tf = (1.0 / (1.0 - K * plant.G_yu).reduce()).reduce()
        for tf in (S_tf, (K * S_tf).reduce(), (plant.G_yu * S_tf).reduce()):
            if not is_schur_stable(tf):
                raise UnstableLoop("K does not stabilize G_yu")
    _, Gzu, Gyv, Gyu = plant.freq_blocks(w)
    S = _sensitivity_samples(K, plant, w, youla)
    Kk, Hk = K.freq(w), channel.H.freq(w)
    nzu, nyv = np.linalg.norm(Gzu, axis=1), np.linalg.norm(Gyv, axis=1)

    used = float(np.mean(np.abs(Kk * Hk * Gyu * S) ** 2))
    alpha = channel.snr - used
    if not alpha > 0:
        raise AlphaNonpositive(f"K uses channel power {used:.6g} >= sigma^2 = {channel.snr:.6g}")
    if K.is_zero:
        c = np.sqrt(1e-2 * alpha / np.mean(nyv**2 * np.abs(S) ** 2))
        C = RationalTransfer.constant(c)
        return NominalFactorization(C, RationalTransfer.constant(0.0), 0.0, 0.0, alpha,
                                    1e-2 * alpha, 0.0, 0.0)

    l1 = float(np.mean(np.abs(Kk * S**2 * Hk) * nzu * nyv))
    bound = l1**2 / alpha
    target = nzu / nyv * np.abs(Kk * Hk)
    target = target / np.max(target)
    fit = fit_magnitude_sq(GridSamples(fg, target), Nc)
    c = spectral_factor_trig(fit).coef
    Ck = fir_basis(w, c.size) @ c
    power0 = float(np.mean(np.abs(Ck * S) ** 2 * nyv**2))
    gain = np.sqrt(alpha / power0)
    C = RationalTransfer.from_fir(gain * c)
    D = (K / C).reduce()
    Ck = gain * Ck
    achieved = float(np.mean(np.abs(Kk / Ck * S * Hk) ** 2 * nzu**2))
    power = float(np.mean(np.abs(Ck * S) ** 2 * nyv**2))
    if fit.residual > DEGRADED_FIT:
        warnings.warn(f"spectral fit residual {fit.residual:.3g} exceeds {DEGRADED_FIT}",
                      SpectralFitDegraded, stacklevel=2)
    return NominalFactorization(C, D, bound, achieved, alpha, power, fit.residual, fit.shift)


def min_snr_for_stabilization(plant: GeneralizedPlant, H: RationalTransfer, m: int, n: int) -> float:
    """Least channel power ``min_q ||(M N Q + M V - 1) H||_2^2`` over FIR ``Q`` on the grid.

    This is an exact linear least-squares problem; the value is an upper
    bound on the SNR needed for stabilization and decreases with ``m``.
    """
    f = coprime_factorize(plant)
    w = FrequencyGrid(n).omegas
    Hk = normalize_channel_factor(H).freq(w)
    M, N, V = f.M.freq(w), f.N.freq(w), f.V.freq(w)
    E = (M * N * Hk)[:, None] * fir_basis(w, m)
    F = (M * V - 1.0) * Hk
    A = np.vstack([E.real, E.imag])
    b = -np.concatenate([F.real, F.imag])
    q, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(np.mean(np.abs(E @ q + F) ** 2))


def unstable_pole_product_bound(G_yu: RationalTransfer) -> float:
    """``prod max(1, |p|)^2 - 1`` over the poles of ``G_yu``."""
    p = G_yu.reduce().poles()
    return float(np.prod(np.maximum(1.0, np.abs(p)) ** 2) - 1.0) if p.size else 0.0


def synthesize(
    plant: GeneralizedPlant,
    channel: ChannelSpec,
    n: int = 629,
    m: int = 20,
    Nc: int = 32,
    tol: float = 1e-8,
    max_iter: int = 500,
    snr_offset: float = 0.0,
    eps: float | None = None,
) -> SynthesisResult:
    """Optimal FIR-Youla encoder/decoder pair for the SNR-constrained channel.

    Steps: coprime factors and grid data; convex minimization over FIR
    ``Q``; removal of circle roots of ``N Q + V``; ``K`` from ``Q``; fit and
    spectral factorization of the optimal ``|C|^2``; ``D = K / C``; closed-loop
    validation.

    Raises
    ------
    Infeasible
        If no FIR ``Q`` of order ``m`` keeps the channel power below ``sigma^2``.
    InternalStabilityFailed
        If the constructed loop fails the stability check.
    """
    grid = FrequencyGrid(n)
    factors = coprime_factorize(plant)
    stab = {"pole_product_lower_bound": unstable_pole_product_bound(plant.G_yu)}
    data = build_program_data(plant, factors, channel.H, grid, channel.snr, snr_offset)
    prog = assemble(data, m)
    q, gamma, report = minimize(prog, tol=tol, max_iter=max_iter)
    stab["threshold_estimate"] = report.min_power if np.isfinite(report.min_power) else float("nan")
    if report.status is SolverStatus.INFEASIBLE:
        raise Infeasible(
            f"no FIR Q of order {m} reaches channel power below sigma^2 = {channel.snr:g} "
            f"(least power {report.min_power:.6g})",
            threshold_estimate=report.min_power,
            report=report,
        )
    # the solver starts from q = 0 when feasible, so recompute the threshold
    stab["threshold_estimate"] = least_squares_power(prog)[1]

    q_hat = q
    if circle_roots(factors, q).size:
        if eps is None:
            eps = 1e-6 * (1.0 + abs(gamma))
        q_hat = perturb_q(factors, data, q, eps)
    yc = k_from_q(factors, q_hat)
    phi_hat = phi(data, q_hat)
    youla = (factors, q_hat)

    if yc.K.is_zero:
        zero = RationalTransfer.constant(0.0)
        C, D = zero, zero
        nominal = NominalFactorization(C, D, 0.0, 0.0, channel.snr, 0.0, 0.0, 0.0)
    else:
        nominal = factorize_nominal_k(yc.K, plant, channel, grid, Nc, youla=youla)
        C, D = nominal.C, nominal.D

    loop = closed_loop(plant, C, D, channel.H, youla=youla)
    srep = check_internal_stability(loop)
    if not (srep.stable and srep.realization_stable):
        raise InternalStabilityFailed("synthesized loop is not internally stable", report=srep)
    J, power = analytic_cost(loop)
    return SynthesisResult(
        q=q,
        q_hat=q_hat,
        K=yc.K,
        C=C,
        D=D,
        gamma=gamma,
        J_analytic=J,
        channel_power=power,
        spectral_fit_residual=nominal.fit_residual,
        solver_report=report,
        stabilizability=stab,
        phi_q_hat=phi_hat,
        noise_bound=nominal.bound,
        noise_achieved=nominal.achieved,
        alpha=nominal.alpha,
        fit_shift=nominal.fit_shift,
        degraded=nominal.fit_residual > DEGRADED_FIT,
        factors=factors,
    )
