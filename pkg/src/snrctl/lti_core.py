"""Scalar rational transfer functions, state-space plants and norms.

Transfer functions are rational in ``z`` with real coefficients. Polynomials
are :class:`numpy.polynomial.Polynomial` objects, i.e. coefficient arrays in
*ascending* powers of ``z``. FIR objects (Youla parameters, encoders) are
usually specified by their taps in powers of ``z**-1``; use
:meth:`RationalTransfer.from_fir` and :meth:`RationalTransfer.fir_taps` to
convert between the two conventions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as npoly

from .errors import (
    DimensionMismatch,
    NonzeroD22,
    PoleOnCircle,
    Unstable,
    ZeroOnCircle,
)

__all__ = [
    "Polynomial",
    "RationalTransfer",
    "StateSpaceModel",
    "GeneralizedPlant",
    "FrequencyGrid",
    "GridSamples",
    "eval_freq",
    "poles",
    "zeros",
    "is_schur_stable",
    "h2_norm_sq",
    "l2_norm_sq",
    "l2_norm_sq_grid",
    "l1_norm_grid",
    "normalize_channel_factor",
    "blocks_from_state_space",
    "minimal_realization",
]

STABILITY_MARGIN = 1e-9
COINCIDENCE_TOL = 1e-9
_TRIM_RTOL = 1e-14


def _trim(coef: np.ndarray) -> np.ndarray:
    """Drop negligible highest-order coefficients (keeps at least one)."""
    coef = np.atleast_1d(np.asarray(coef, dtype=float))
    if coef.size == 0:
        return np.zeros(1)
    scale = np.max(np.abs(coef))
    if scale == 0.0:
        return np.zeros(1)
    nz = np.nonzero(np.abs(coef) > _TRIM_RTOL * scale)[0]
    return coef[: nz[-1] + 1].copy()


def _low_zeros(coef: np.ndarray) -> int:
    """Number of exactly-zero lowest-order coefficients."""
    nz = np.nonzero(coef)[0]
    return int(nz[0]) if nz.size else 0


def _roots(coef: np.ndarray) -> np.ndarray:
    # np.roots strips trailing zeros of the descending array, which turns
    # structural z**k factors into exact zero roots.
    coef = _trim(coef)
    if coef.size <= 1:
        return np.zeros(0, dtype=complex)
    return np.roots(coef[::-1]).astype(complex)


def _real_poly_from_roots(roots: Sequence[complex]) -> np.ndarray:
    if len(roots) == 0:
        return np.ones(1)
    return np.real(npoly.polyfromroots(roots))


@dataclass(frozen=True, eq=False)
class RationalTransfer:
    """Scalar real-rational function ``num(z) / den(z)``.

    The denominator is normalised to be monic. Properness is *not*
    enforced; use :attr:`is_proper` where it matters.
    """

    num: Polynomial
    den: Polynomial = field(default_factory=lambda: Polynomial([1.0]))

    def __post_init__(self):
        num = _trim(np.asarray(getattr(self.num, "coef", self.num), dtype=float))
        den = _trim(np.asarray(getattr(self.den, "coef", self.den), dtype=float))
        if not np.any(den):
            raise ZeroDivisionError("denominator is identically zero")
        if not np.any(num):
            num, den = np.zeros(1), np.ones(1)
        else:
            k = min(_low_zeros(num), _low_zeros(den))
            num, den = num[k:], den[k:]
            lead = den[-1]
            num, den = num / lead, den / lead
        object.__setattr__(self, "num", Polynomial(num))
        object.__setattr__(self, "den", Polynomial(den))

    # -- constructors -------------------------------------------------
    @classmethod
    def from_coeffs(cls, num, den=(1.0,)) -> "RationalTransfer":
        """Build from coefficient arrays in ascending powers of ``z``."""
        return cls(Polynomial(np.asarray(num, float)), Polynomial(np.asarray(den, float)))

    @classmethod
    def from_desc(cls, num, den=(1.0,)) -> "RationalTransfer":
        """Build from coefficient arrays in descending powers of ``z``."""
        return cls.from_coeffs(np.asarray(num, float)[::-1], np.asarray(den, float)[::-1])

    @classmethod
    def from_fir(cls, taps) -> "RationalTransfer":
        """``sum_j taps[j] z**-j`` as a rational function of ``z``."""
        taps = np.atleast_1d(np.asarray(taps, float))
        den = np.zeros(taps.size)
        den[-1] = 1.0
        return cls.from_coeffs(taps[::-1], den)

    @classmethod
    def constant(cls, c: float) -> "RationalTransfer":
        return cls.from_coeffs([float(c)])

    @classmethod
    def delay(cls, k: int) -> "RationalTransfer":
        den = np.zeros(k + 1)
        den[k] = 1.0
        return cls.from_coeffs([1.0], den)

    # -- basic properties ---------------------------------------------
    @property
    def num_coeffs(self) -> np.ndarray:
        return self.num.coef

    @property
    def den_coeffs(self) -> np.ndarray:
        return self.den.coef

    @property
    def num_desc(self) -> np.ndarray:
        return self.num.coef[::-1].copy()

    @property
    def den_desc(self) -> np.ndarray:
        return self.den.coef[::-1].copy()

    @property
    def num_degree(self) -> int:
        return 0 if self.is_zero else self.num.coef.size - 1

    @property
    def den_degree(self) -> int:
        return self.den.coef.size - 1

    @property
    def is_zero(self) -> bool:
        return not np.any(self.num.coef)

    @property
    def is_proper(self) -> bool:
        return self.num_degree <= self.den_degree

    @property
    def is_strictly_proper(self) -> bool:
        return self.is_zero or self.num_degree < self.den_degree

    def is_monomial_den(self) -> bool:
        return bool(np.all(self.den.coef[:-1] == 0.0))

    def fir_taps(self) -> np.ndarray:
        """Taps in powers of ``z**-1`` of a proper FIR transfer function."""
        if not self.is_monomial_den() or not self.is_proper:
            raise ValueError("not a proper FIR transfer function")
        k = self.den_degree
        taps = np.zeros(k + 1)
        num = self.num.coef
        taps[k - np.arange(num.size)] = num
        return taps

    # -- evaluation ---------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return npoly.polyval(z, self.num.coef) / npoly.polyval(z, self.den.coef)

    def freq(self, omegas) -> np.ndarray:
        """Frequency response at ``exp(1j * omegas)``."""
        return self(np.exp(1j * np.asarray(omegas, dtype=float)))

    def poles(self) -> np.ndarray:
        return _roots(self.den.coef)

    def zeros(self) -> np.ndarray:
        if self.is_zero:
            return np.zeros(0, dtype=complex)
        return _roots(self.num.coef)

    # -- algebra ------------------------------------------------------
    @staticmethod
    def _coerce(other) -> "RationalTransfer":
        if isinstance(other, RationalTransfer):
            return other
        if np.isscalar(other):
            return RationalTransfer.constant(float(other))
        return NotImplemented

    def __neg__(self):
        return RationalTransfer(-self.num, self.den)

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        d1, d2 = self.den.coef, other.den.coef
        if d1.size == d2.size and np.array_equal(d1, d2):
            return RationalTransfer(self.num + other.num, self.den)
        if self.is_monomial_den() and other.is_monomial_den():
            k1, k2 = d1.size - 1, d2.size - 1
            k = max(k1, k2)
            n1 = _polymulx_pow(self.num.coef, k - k1)
            n2 = _polymulx_pow(other.num.coef, k - k2)
            den = np.zeros(k + 1)
            den[k] = 1.0
            return RationalTransfer(Polynomial(npoly.polyadd(n1, n2)), Polynomial(den))
        return RationalTransfer(self.num * other.den + other.num * self.den, self.den * other.den)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return RationalTransfer(self.num * other.num, self.den * other.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if other.is_zero:
            raise ZeroDivisionError("division by the zero transfer function")
        return RationalTransfer(self.num * other.den, self.den * other.num)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, k: int):
        out = RationalTransfer.constant(1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def reduce(self, tol: float = COINCIDENCE_TOL) -> "RationalTransfer":
        """Cancel numerator/denominator roots closer than ``tol`` (relative)."""
        if self.is_zero:
            return self
        zn, zd = self.zeros(), self.poles()
        if zn.size == 0 or zd.size == 0:
            return self
        used = np.zeros(zn.size, dtype=bool)
        common = []
        for r in zd:
            dist = np.where(used, np.inf, np.abs(zn - r))
            j = int(np.argmin(dist))
            if dist[j] <= tol * max(1.0, abs(r)):
                used[j] = True
                common.append(r)
        if not common:
            return self
        factor = _real_poly_from_roots(common)
        num, _ = npoly.polydiv(self.num.coef, factor)
        den, _ = npoly.polydiv(self.den.coef, factor)
        return RationalTransfer(Polynomial(num), Polynomial(den))

    def to_state_space(self) -> "StateSpaceModel":
        """Controllable-canonical realization (requires a proper function)."""
        if not self.is_proper:
            raise ValueError("improper transfer function has no realization")
        if self.den_degree == 0:
            return StateSpaceModel(
                np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                np.array([[self.num.coef[0] / self.den.coef[0]]]),
            )
        with warnings.catch_warnings():
            # near-cancelled numerators trip scipy's conditioning warning
            warnings.simplefilter("ignore", scipy.signal.BadCoefficients)
            A, B, C, D = scipy.signal.tf2ss(self.num_desc, self.den_desc)
        return StateSpaceModel(A, B, C, D)

    def __repr__(self):
        return f"RationalTransfer(num={self.num.coef.tolist()}, den={self.den.coef.tolist()})"


def _polymulx_pow(c, k):
    return np.concatenate([np.zeros(k), np.asarray(c, float)]) if k > 0 else np.asarray(c, float)


# ---------------------------------------------------------------------------
# State space
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Discrete-time realization ``x+ = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float)) if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        D = np.atleast_2d(np.asarray(self.D, float))
        p, m = D.shape
        B = np.asarray(self.B, float).reshape(n, m) if n else np.zeros((0, m))
        C = np.asarray(self.C, float).reshape(p, n) if n else np.zeros((p, 0))
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    def freq(self, omegas) -> np.ndarray:
        """Frequency response, shape ``(len(omegas), p, m)``."""
        z = np.exp(1j * np.asarray(omegas, float))
        n = self.n_states
        out = np.broadcast_to(self.D.astype(complex), (z.size,) + self.D.shape).copy()
        if n:
            zI_A = z[:, None, None] * np.eye(n) - self.A
            X = np.linalg.solve(zI_A, np.broadcast_to(self.B, (z.size, n, self.n_inputs)))
            out += self.C @ X
        return out

    def _unstable_modes(self):
        lam = np.linalg.eigvals(self.A) if self.n_states else np.zeros(0)
        return lam[np.abs(lam) >= 1.0 - STABILITY_MARGIN]

    def is_stabilizable(self, input_cols=None, tol: float = 1e-9) -> bool:
        """PBH test on the unstable/marginal modes."""
        B = self.B if input_cols is None else self.B[:, input_cols]
        n = self.n_states
        for lam in self._unstable_modes():
            M = np.hstack([self.A - lam * np.eye(n), B])
            s = np.linalg.svd(M, compute_uv=False)
            if s[-1] <= tol * max(1.0, s[0]):
                return False
        return True

    def is_detectable(self, output_rows=None, tol: float = 1e-9) -> bool:
        C = self.C if output_rows is None else self.C[output_rows, :]
        dual = StateSpaceModel(self.A.T, C.T, self.B.T, np.zeros((self.B.shape[1], C.shape[0])))
        return dual.is_stabilizable(tol=tol)

    def to_transfer(self) -> RationalTransfer:
        """Transfer function of a single-input single-output realization."""
        if self.D.shape != (1, 1):
            raise DimensionMismatch("to_transfer needs a SISO realization")
        return _siso_tf(self)

    def select(self, outputs, inputs) -> "StateSpaceModel":
        return StateSpaceModel(self.A, self.B[:, inputs], self.C[outputs, :], self.D[np.ix_(outputs, inputs)])


def _ctrb(A, B):
    n = A.shape[0]
    blocks, X = [], B
    for _ in range(n):
        blocks.append(X)
        X = A @ X
    return np.hstack(blocks) if blocks else np.zeros((0, B.shape[1]))


def minimal_realization(ss: StateSpaceModel, tol: float = 1e-9) -> StateSpaceModel:
    """Remove uncontrollable then unobservable states (orthogonal staircase)."""
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    if A.shape[0] == 0:
        return ss
    U, s, _ = np.linalg.svd(_ctrb(A, B))
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    T = U[:, :r]
    A, B, C = T.T @ A @ T, T.T @ B, C @ T
    if r == 0:
        return StateSpaceModel(np.zeros((0, 0)), np.zeros((0, B.shape[1])), np.zeros((C.shape[0], 0)), D)
    _, s, Vt = np.linalg.svd(_ctrb(A.T, C.T).T)
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    T = Vt[:r].T
    return StateSpaceModel(T.T @ A @ T, T.T @ B, C @ T, D)


def _siso_tf(ss: StateSpaceModel) -> RationalTransfer:
    ss = minimal_realization(ss)
    d = float(ss.D[0, 0])
    if ss.n_states == 0:
        return RationalTransfer.constant(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.signal.BadCoefficients)
        num, den = scipy.signal.ss2tf(ss.A, ss.B, ss.C, ss.D)
    return RationalTransfer.from_desc(np.atleast_2d(num)[0], den)


# ---------------------------------------------------------------------------
# Generalized plant
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    """Four-block plant with scalar control input and measurement.

    Inputs are ordered ``(v, u)`` with ``n_v + 1`` columns and outputs
    ``(z, y)`` with ``n_z + 1`` rows.
    """

    realization: StateSpaceModel
    n_v: int
    n_z: int
    G_zv: list
    G_zu: list
    G_yv: list
    G_yu: RationalTransfer

    @classmethod
    def from_siso(cls, P: RationalTransfer) -> "GeneralizedPlant":
        """Plant with all four blocks equal to the SISO transfer function ``P``."""
        if not P.is_strictly_proper:
            raise NonzeroD22("G_yu must be strictly proper")
        r = P.to_state_space()
        ss = StateSpaceModel(r.A, np.hstack([r.B, r.B]), np.vstack([r.C, r.C]), np.zeros((2, 2)))
        # keep the exact coefficients rather than a round trip through ss2tf
        return cls(ss, 1, 1, [[P]], [P], [P], P)

    @property
    def A(self):
        return self.realization.A

    @property
    def B1(self):
        return self.realization.B[:, : self.n_v]

    @property
    def B2(self):
        return self.realization.B[:, self.n_v:]

    @property
    def C1(self):
        return self.realization.C[: self.n_z, :]

    @property
    def C2(self):
        return self.realization.C[self.n_z:, :]

    @property
    def D11(self):
        return self.realization.D[: self.n_z, : self.n_v]

    @property
    def D12(self):
        return self.realization.D[: self.n_z, self.n_v:]

    @property
    def D21(self):
        return self.realization.D[self.n_z:, : self.n_v]

    def freq_blocks(self, omegas):
        """Block frequency responses ``(G_zv, G_zu, G_yv, G_yu)`` on a grid.

        Shapes are ``(n, n_z, n_v)``, ``(n, n_z)``, ``(n, n_v)`` and ``(n,)``.
        """
        G = self.realization.freq(omegas)
        nz, nv = self.n_z, self.n_v
        return G[:, :nz, :nv], G[:, :nz, nv], G[:, nz, :nv], G[:, nz, nv]

    def is_stabilizable(self) -> bool:
        return self.realization.is_stabilizable(input_cols=[self.n_v])

    def is_detectable(self) -> bool:
        return self.realization.is_detectable(output_rows=[self.n_z])


def blocks_from_state_space(ss: StateSpaceModel, n_v: int, n_z: int) -> GeneralizedPlant:
    """Split a realization into the four transfer-function blocks."""
    if n_v < 1 or n_z < 1 or ss.n_inputs != n_v + 1 or ss.n_outputs != n_z + 1:
        raise DimensionMismatch(
            f"realization is {ss.n_outputs}x{ss.n_inputs}, expected {n_z + 1}x{n_v + 1}"
        )
    if ss.D[n_z, n_v] != 0.0:
        raise NonzeroD22("D22 must be zero")
    entry = lambda i, j: _siso_tf(ss.select([i], [j]))
    G_zv = [[entry(i, j) for j in range(n_v)] for i in range(n_z)]
    G_zu = [entry(i, n_v) for i in range(n_z)]
    G_yv = [entry(n_z, j) for j in range(n_v)]
    G_yu = entry(n_z, n_v)
    return GeneralizedPlant(ss, n_v, n_z, G_zv, G_zu, G_yv, G_yu)


# ---------------------------------------------------------------------------
# Grids and norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid ``omega_k = 2 pi k / n``, ``k = 0..n-1``."""

    n: int

    def __post_init__(self):
        if int(self.n) < 2:
            raise ValueError("grid needs at least two points")

    @cached_property
    def omegas(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n

    @cached_property
    def z(self) -> np.ndarray:
        return np.exp(1j * self.omegas)


@dataclass(frozen=True, eq=False)
class GridSamples:
    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape[0] != self.grid.n:
            raise DimensionMismatch("sample count does not match the grid")
        object.__setattr__(self, "values", values)


def eval_freq(tf: RationalTransfer, omega: float) -> complex:
    z = np.exp(1j * omega)
    den = complex(npoly.polyval(z, tf.den.coef))
    if abs(den) < 1e-12:
        raise PoleOnCircle(f"pole at omega={omega}")
    return complex(npoly.polyval(z, tf.num.coef)) / den


def poles(tf: RationalTransfer) -> np.ndarray:
    return tf.poles()


def zeros(tf: RationalTransfer) -> np.ndarray:
    return tf.zeros()


def is_schur_stable(tf: RationalTransfer) -> bool:
    p = tf.poles()
    return bool(np.all(np.abs(p) < 1.0 - STABILITY_MARGIN))


def _stable_version(tf: RationalTransfer) -> RationalTransfer:
    if is_schur_stable(tf):
        return tf
    red = tf.reduce()
    if is_schur_stable(red):
        return red
    raise Unstable(f"poles {np.round(red.poles(), 6)} not inside the unit disk")


def h2_norm_sq(tf: RationalTransfer) -> float:
    """Squared H2 norm via the observability Gramian of a realization."""
    tf = _stable_version(tf)
    if not tf.is_proper:
        raise Unstable("improper transfer function is not in H2")
    ss = tf.to_state_space()
    d2 = float(ss.D[0, 0] ** 2)
    if ss.n_states == 0:
        return d2
    Wo = scipy.linalg.solve_discrete_lyapunov(ss.A.T, ss.C.T @ ss.C)
    return float((ss.B.T @ Wo @ ss.B)[0, 0]) + d2


def l2_norm_sq(tf: RationalTransfer) -> float:
    """Squared L2 norm on the unit circle of a function with no circle poles.

    Unstable poles are reflected (``p -> 1/conj(p)``, gain ``1/|p|``) and
    improper functions are padded with poles at the origin; neither changes
    ``|tf|`` on the circle, and the result is then in RH2.
    """
    if tf.is_zero:
        return 0.0
    p = tf.poles()
    if np.any(np.abs(np.abs(p) - 1.0) < STABILITY_MARGIN):
        tf = tf.reduce()
        p = tf.poles()
        if np.any(np.abs(np.abs(p) - 1.0) < STABILITY_MARGIN):
            raise PoleOnCircle("L2 norm undefined for poles on the unit circle")
    num = tf.num.coef
    den = tf.den.coef
    outside = np.abs(p) > 1.0
    if np.any(outside):
        gain = np.prod(1.0 / np.abs(p[outside]))
        new_p = p.copy()
        new_p[outside] = 1.0 / np.conj(p[outside])
        den = _real_poly_from_roots(new_p)
        num = num * gain
    extra = max(0, (num.size - 1) - (den.size - 1))
    if extra:
        den = _polymulx_pow(den, extra)
    return h2_norm_sq(RationalTransfer(Polynomial(num), Polynomial(den)))


def _pointwise_sq(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values)
    return np.abs(v) ** 2 if v.ndim == 1 else np.sum(np.abs(v.reshape(v.shape[0], -1)) ** 2, axis=1)


def l2_norm_sq_grid(s: GridSamples) -> float:
    """Rectangle-rule ``(1/n) sum |s_k|_F^2``."""
    return float(np.mean(_pointwise_sq(s.values)))


def l1_norm_grid(s: GridSamples) -> float:
    """Rectangle-rule ``(1/n) sum tr sqrt(s_k^* s_k)`` (nuclear norm per point)."""
    v = np.asarray(s.values)
    if v.ndim == 1:
        return float(np.mean(np.abs(v)))
    return float(np.mean(np.sum(np.linalg.svd(v, compute_uv=False), axis=-1)))


def normalize_channel_factor(H: RationalTransfer, check_points: int = 4096) -> RationalTransfer:
    """Scale a stable channel factor to unit H2 norm."""
    if not is_schur_stable(H):
        H = H.reduce()
        if not is_schur_stable(H):
            raise Unstable("channel factor must be stable")
    zr = H.zeros()
    if H.is_zero or np.any(np.abs(np.abs(zr) - 1.0) < STABILITY_MARGIN):
        raise ZeroOnCircle("channel factor vanishes on the unit circle")
    mag = np.abs(H.freq(FrequencyGrid(check_points).omegas))
    if mag.min() <= 1e-12 * mag.max():
        raise ZeroOnCircle("channel factor vanishes on the unit circle")
    return H * (1.0 / np.sqrt(h2_norm_sq(H)))
