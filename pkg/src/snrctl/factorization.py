"""Coprime factorization of the measured loop and trigonometric spectral factors.

The coprime factors satisfy ``G_yu = N / M`` and ``V M + U N = 1`` so that
every stabilizing controller of the positive-feedback loop is
``K = (M Q - U) / (N Q + V)`` for some stable ``Q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as npoly

from .errors import FactorizationFailed, NotDetectable, NotPositive, NotStabilizable
from .lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    GridSamples,
    RationalTransfer,
    StateSpaceModel,
    is_schur_stable,
    minimal_realization,
)

__all__ = [
    "CoprimeFactors",
    "TrigPolynomial",
    "coprime_factorize",
    "spectral_factor_trig",
    "fit_magnitude_sq",
]

BEZOUT_TOL = 1e-8
CHECK_POINTS = 1024
_PLACEMENT_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CoprimeFactors:
    """Doubly-coprime factors of ``G_yu`` with their Bezout certificate."""

    M: RationalTransfer
    N: RationalTransfer
    U: RationalTransfer
    V: RationalTransfer
    bezout_residual: float
    method: str = "shortcut"

    def youla_denominator(self, Q: RationalTransfer) -> RationalTransfer:
        return self.N * Q + self.V

    def youla_numerator(self, Q: RationalTransfer) -> RationalTransfer:
        return self.M * Q - self.U


def _bezout_residual(M, N, U, V, omegas) -> float:
    return float(np.max(np.abs(V.freq(omegas) * M.freq(omegas) + U.freq(omegas) * N.freq(omegas) - 1.0)))


def _ctrb(A, B):
    n = A.shape[0]
    cols, X = [], B
    for _ in range(n):
        cols.append(X)
        X = A @ X
    return np.hstack(cols)


def _deadbeat_gain(A, B):
    """Ackermann gain ``F`` with ``A + B F`` nilpotent (single input)."""
    n = A.shape[0]
    W = _ctrb(A, B)
    if np.linalg.cond(W) > _PLACEMENT_COND_LIMIT:
        return None
    en = np.zeros((1, n))
    en[0, -1] = 1.0
    return -en @ np.linalg.solve(W, np.linalg.matrix_power(A, n))


def _lqr_gain(A, B):
    X = scipy.linalg.solve_discrete_are(A, B, np.eye(A.shape[0]), np.eye(B.shape[1]))
    return -np.linalg.solve(np.eye(B.shape[1]) + B.T @ X @ B, B.T @ X @ A)


def _ss_to_tf(A, B, C, d: float, nilpotent: bool) -> RationalTransfer:
    if A.shape[0] == 0:
        return RationalTransfer.constant(d)
    if nilpotent:
        # Markov parameters terminate, so build the FIR exactly
        taps = [d]
        X = B
        for _ in range(A.shape[0]):
            taps.append(float((C @ X)[0, 0]))
            X = A @ X
        return RationalTransfer.from_fir(taps)
    return StateSpaceModel(A, B, C, np.array([[d]])).to_transfer()


def coprime_factorize(plant: GeneralizedPlant) -> CoprimeFactors:
    """Doubly-coprime factors of ``plant.G_yu`` from state feedback and observer gains.

    Stable ``G_yu`` uses ``M = V = 1``, ``N = G_yu``, ``U = 0``. Otherwise a
    minimal realization of ``G_yu`` is given deadbeat gains (discrete LQR
    gains when the placement is ill-conditioned), and the sign of ``U`` is
    fixed by whichever candidate passes the Bezout check.

    Raises
    ------
    NotStabilizable, NotDetectable
        If the plant violates the standing assumptions.
    FactorizationFailed
        If neither sign convention yields a Bezout residual below ``1e-8``.
    """
    if not plant.is_stabilizable():
        raise NotStabilizable("(A, B2) is not stabilizable")
    if not plant.is_detectable():
        raise NotDetectable("(C2, A) is not detectable")
    G = plant.G_yu
    omegas = FrequencyGrid(CHECK_POINTS).omegas
    one, zero = RationalTransfer.constant(1.0), RationalTransfer.constant(0.0)
    if is_schur_stable(G):
        return CoprimeFactors(one, G, zero, one, _bezout_residual(one, G, zero, one, omegas))

    ss = minimal_realization(plant.realization.select([plant.n_z], [plant.n_v]))
    A, B, C = ss.A, ss.B, ss.C
    F = _deadbeat_gain(A, B)
    Lt = _deadbeat_gain(A.T, C.T)
    deadbeat = F is not None and Lt is not None
    if not deadbeat:
        F, Lt = _lqr_gain(A, B), _lqr_gain(A.T, C.T)
    L = Lt.T
    AF, AL = A + B @ F, A + L @ C
    M = _ss_to_tf(AF, B, F, 1.0, deadbeat)
    N = _ss_to_tf(AF, B, C, 0.0, deadbeat)
    V = _ss_to_tf(AL, -B, F, 1.0, deadbeat)
    U0 = _ss_to_tf(AL, L, F, 0.0, deadbeat)

    best = None
    for U in (U0, -U0):
        res = _bezout_residual(M, N, U, V, omegas)
        if best is None or res < best[1]:
            best = (U, res)
    U, res = best
    if res >= BEZOUT_TOL:
        raise FactorizationFailed(f"Bezout residual {res:.3e} exceeds {BEZOUT_TOL:g}")
    g = G.freq(omegas)
    finite = np.isfinite(g)
    mismatch = np.abs(N.freq(omegas)[finite] - g[finite] * M.freq(omegas)[finite])
    if np.max(mismatch / np.maximum(np.abs(N.freq(omegas)[finite]), 1e-300), initial=0.0) > 1e-8 \
            and np.max(mismatch) > 1e-8:
        raise FactorizationFailed("N / M does not reproduce G_yu")
    return CoprimeFactors(M, N, U, V, res, "deadbeat" if deadbeat else "lqr")


# ---------------------------------------------------------------------------
# Trigonometric polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrigPolynomial:
    """``A(w) = A_0 + sum_k A_k (e^{ikw} + e^{-ikw})``.

    ``residual`` is the relative RMS misfit recorded by
    :func:`fit_magnitude_sq` and ``shift`` the constant added to keep the
    fit positive.
    """

    coeffs: np.ndarray
    residual: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.atleast_1d(np.asarray(self.coeffs, dtype=float)))

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, omegas) -> np.ndarray:
        w = np.asarray(omegas, dtype=float)
        k = np.arange(1, self.coeffs.size)
        return self.coeffs[0] + 2.0 * np.cos(np.multiply.outer(w, k)) @ self.coeffs[1:]

    def check_grid(self) -> np.ndarray:
        return FrequencyGrid(max(4096, 32 * self.coeffs.size)).omegas

    def minimum(self) -> float:
        return float(np.min(self(self.check_grid())))

    def is_positive(self) -> bool:
        return self.minimum() > 0.0


def _autocorrelation(c: np.ndarray) -> np.ndarray:
    nc = c.size - 1
    return np.array([c[: c.size - k] @ c[k:] for k in range(nc + 1)])


def _wilson_polish(c: np.ndarray, target: np.ndarray, iters: int = 4) -> np.ndarray:
    """Newton steps on ``autocorr(c) = target`` started from a minimum-phase ``c``."""
    n = c.size
    best, best_err = c, np.linalg.norm(_autocorrelation(c) - target)
    for _ in range(iters):
        J = np.zeros((n, n))
        for k in range(n):
            for j in range(n - k):
                J[k, j] += c[j + k]
                J[k, j + k] += c[j]
        try:
            c = c - np.linalg.solve(J, _autocorrelation(c) - target)
        except np.linalg.LinAlgError:
            break
        err = np.linalg.norm(_autocorrelation(c) - target)
        if err >= best_err or np.any(np.abs(np.roots(c)) >= 1.0):
            break
        best, best_err = c, err
    return best


def spectral_factor_trig(A: TrigPolynomial) -> Polynomial:
    """Minimum-phase ``C(z) = sum_j c_j z^-j`` with ``|C|^2 = A`` on the circle.

    The lifted polynomial ``z^Nc A(z)`` is palindromic; its roots come in
    pairs ``(r, 1/conj(r))`` and the ``Nc`` roots inside the disk define
    ``C`` up to a gain fixed by ``A_0 = sum c_j^2``.

    Returns
    -------
    Polynomial
        Coefficients ``c_0..c_Nc`` (ascending in ``z**-1``), with ``c_0 > 0``.

    Raises
    ------
    NotPositive
        If ``A`` is negative somewhere on the check grid.
    """
    a = A.coeffs
    nc = a.size - 1
    amin = A.minimum()
    # exact nonnegative squares such as 2 + 2 cos w touch zero; only a
    # genuinely negative minimum is rejected
    if not amin > -1e-12 * np.max(np.abs(a)) or not a[0] > 0:
        raise NotPositive(f"trigonometric polynomial has minimum {amin:.3e}")
    if nc == 0:
        return Polynomial([np.sqrt(a[0])])
    # a tail of rounding-level coefficients puts lifted roots near 0 and
    # infinity that np.roots cannot resolve, while a genuinely small tail
    # must be kept; factor both versions and keep the better reproduction
    keep = np.flatnonzero(np.abs(a) > 64 * np.finfo(float).eps * np.sum(np.abs(a)))[-1]
    w = A.check_grid()
    best, best_err = None, np.inf
    for order in sorted({nc, keep}, reverse=True):
        c = np.pad(_factor_roots(a[: order + 1]), (0, nc - order))
        err = np.max(np.abs(np.abs(np.polyval(c[::-1], np.exp(-1j * w))) ** 2 - A(w)))
        if err < best_err:
            best, best_err = c, err
    return Polynomial(best)


def _factor_roots(a: np.ndarray) -> np.ndarray:
    nc = a.size - 1
    if nc == 0:
        return np.array([np.sqrt(a[0])])
    lifted = np.concatenate([a[:0:-1], a])
    r = np.roots(lifted[::-1])
    r = r[np.argsort(np.abs(r))][:nc]
    # circle roots are double and may split to either side numerically
    outside = np.abs(r) > 1.0
    r[outside] = r[outside] / np.abs(r[outside]) ** 2
    p = np.real(np.poly(r))
    c = np.sqrt(a[0] / (p @ p)) * p
    c = _wilson_polish(c, a)
    return -c if c[0] < 0 else c


def fit_magnitude_sq(target: GridSamples, Nc: int, floor_rel: float = 1e-9) -> TrigPolynomial:
    """Least-squares cosine-basis fit of a nonnegative target density.

    If the fit dips below ``floor_rel * max A`` on the check grid, a constant
    is added to lift the minimum to that level; the shift is recorded.
    """
    t = np.real(np.asarray(target.values, dtype=complex))
    w = target.grid.omegas
    k = np.arange(1, Nc + 1)
    basis = np.hstack([np.ones((w.size, 1)), 2.0 * np.cos(np.multiply.outer(w, k))])
    coeffs, *_ = np.linalg.lstsq(basis, t, rcond=None)
    fit = TrigPolynomial(coeffs)
    vals = fit(fit.check_grid())
    floor = floor_rel * np.max(vals)
    shift = max(0.0, floor - float(np.min(vals)))
    coeffs = coeffs.copy()
    coeffs[0] += shift
    scale = np.linalg.norm(t)
    residual = float(np.linalg.norm(basis @ coeffs - t) / scale) if scale > 0 else 0.0
    return TrigPolynomial(coeffs, residual, shift)
