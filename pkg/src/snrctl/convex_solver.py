"""Discretized convex program over FIR Youla parameters.

The relaxed program minimizes ``gamma`` over ``(q, a, e, gamma)`` subject to
``a_k >= g_k |h_k(q)|``, ``e_k >= |w_k(q)|``, a power bound and an arrow
LMI. The objective

    rho_n(a, e) = (1/n) a'a + ((1/n) a'e)^2 / (sigma^2 - (1/n) e'e)

is nondecreasing in every ``a_k`` and ``e_k``, so ``a`` and ``e`` may be
eliminated at their lower bounds. What remains is a smooth-almost-everywhere
convex function of ``q`` that is minimized here by damped Newton steps with
modulus smoothing and a log barrier on the power slack. The LMI is kept as
an independent certificate (:func:`verify_lmi`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import GridTooCoarse
from .youla_program import FirParameter, ProgramData, fir_basis

__all__ = [
    "DiscreteProgram",
    "SolverStatus",
    "SolverReport",
    "assemble",
    "minimize",
    "verify_lmi",
    "lmi_matrix",
    "least_squares_power",
]

STRICT_MARGIN = 1e-6
TAU_SCHEDULE = tuple(10.0 ** -k for k in range(3, 11))


class SolverStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class SolverReport:
    iterations: int
    final_gradient_norm: float
    barrier_parameter: float
    lmi_min_eigenvalue: float
    power_slack: float
    status: SolverStatus
    min_power: float = float("nan")
    smoothing: float = float("nan")


@dataclass(frozen=True, eq=False)
class DiscreteProgram:
    """Affine maps ``h = Ah q + h0`` and ``w = Aw q + w0`` plus the linear ``Delta_n``.

    ``delta_lin`` and ``delta_const`` give ``Delta_n(q) = delta_const + delta_lin @ q``.
    """

    data: ProgramData
    m: int
    Ah: np.ndarray
    h0: np.ndarray
    Aw: np.ndarray
    w0: np.ndarray
    g: np.ndarray
    delta_lin: np.ndarray
    delta_const: float
    sigma2: float

    @property
    def n(self) -> int:
        return self.data.n

    def h(self, q) -> np.ndarray:
        return self.Ah @ q + self.h0

    def w(self, q) -> np.ndarray:
        return self.Aw @ q + self.w0

    def power(self, q) -> float:
        return float(np.mean(np.abs(self.w(q)) ** 2))

    def delta(self, q) -> float:
        return self.delta_const + float(self.delta_lin @ q)

    def rho(self, a: np.ndarray, e: np.ndarray) -> float:
        n = a.size
        d = self.sigma2 - (e @ e) / n
        if d <= 0:
            return float("inf")
        return float(a @ a / n + (a @ e / n) ** 2 / d)

    def tight(self, q):
        """Lower bounds ``(a, e)`` of the eliminated variables."""
        return self.g * np.abs(self.h(q)), np.abs(self.w(q))

    def objective(self, q) -> float:
        """Exact ``rho_n + Delta_n`` at the tight ``(a, e)``."""
        a, e = self.tight(np.asarray(q, float))
        return self.rho(a, e) + self.delta(q)


def assemble(data: ProgramData, m: int) -> DiscreteProgram:
    """Build the affine per-point maps for an FIR parameter with ``m`` taps.

    Raises
    ------
    GridTooCoarse
        If ``n < 2 m``.
    """
    n = data.n
    if m < 1 or n < 2 * m:
        raise GridTooCoarse(f"grid with n={n} cannot resolve {m} FIR taps (need n >= 2m)")
    Z = fir_basis(data.grid.omegas, m)
    Ah = data.m2[:, None] * Z
    Aw = data.E[:, None] * Z
    delta_lin = 2.0 * np.real(data.ell @ Z) / n
    delta_const = data.L_norm_sq + 2.0 * float(np.mean(np.real(data.ell * data.v_over_n)))
    prog = DiscreteProgram(data, m, Ah, data.b.copy(), Aw, data.F.copy(), data.g.copy(),
                           delta_lin, delta_const, data.sigma2_eff)

    # the affine maps must reproduce direct evaluation
    q = np.random.default_rng(0).standard_normal(m)
    _, h, w = data.samples(q)
    scale = 1.0 + np.max(np.abs(h)) + np.max(np.abs(w))
    assert np.max(np.abs(prog.h(q) - h)) <= 1e-12 * scale
    assert np.max(np.abs(prog.w(q) - w)) <= 1e-12 * scale
    Qk = Z @ q
    direct = data.L_norm_sq + 2.0 * np.mean(np.real(data.ell * (Qk + data.v_over_n)))
    assert abs(prog.delta(q) - direct) <= 1e-12 * (1.0 + abs(direct))
    return prog


def _stack(A: np.ndarray, b: np.ndarray):
    return np.vstack([A.real, A.imag]), np.concatenate([b.real, b.imag])


def least_squares_power(prog: DiscreteProgram):
    """Exact minimizer of the grid channel power ``(1/n) sum |w_k(q)|^2``."""
    A, b = _stack(prog.Aw, prog.w0)
    q, *_ = np.linalg.lstsq(A, -b, rcond=None)
    return q, prog.power(q)


def _smooth_mod(A: np.ndarray, v: np.ndarray, tau: float):
    """Smoothed modulus ``sqrt(|v|^2 + tau^2)`` with gradient rows."""
    r = np.sqrt(np.abs(v) ** 2 + tau**2)
    G = np.real(np.conj(v)[:, None] * A)
    return r, G / r[:, None], G


@dataclass
class _Eval:
    f: float
    grad: np.ndarray
    hess: np.ndarray | None = None


def _evaluate(prog: DiscreteProgram, q, tau: float, mu: float, bound: float, hessian: bool = True):
    n = prog.n
    h, w = prog.h(q), prog.w(q)
    g = prog.g
    p = float(np.mean(np.abs(w) ** 2))
    slack = bound - p
    d = prog.sigma2 - p
    if slack <= 0 or d <= 0:
        return None
    rh, drh, Gh = _smooth_mod(prog.Ah, h, tau)
    rw, drw, Gw = _smooth_mod(prog.Aw, w, tau)
    s = float(np.mean(g * rh * rw))
    quad = float(np.mean(g**2 * np.abs(h) ** 2))
    f = prog.delta(q) + quad + s * s / d - mu * np.log(slack)

    grad_quad = 2.0 * (g**2) @ Gh / n
    grad_p = 2.0 * np.real(np.conj(w) @ prog.Aw) / n
    grad_s = ((g * rw) @ drh + (g * rh) @ drw) / n
    grad = (prog.delta_lin + grad_quad + 2.0 * s * grad_s / d + s * s * grad_p / d**2
            + mu * grad_p / slack)
    if not hessian:
        return _Eval(f, grad)

    def re_gram(A, c):
        return np.real(A.conj().T @ (c[:, None] * A))

    hess_quad = 2.0 * re_gram(prog.Ah, g**2) / n
    hess_p = 2.0 * re_gram(prog.Aw, np.ones(n)) / n
    # second derivatives of the smoothed moduli: Re(A^H A)/r - G G^T / r^3
    cw_h, cw_w = g * rw, g * rh
    hess_s = (re_gram(prog.Ah, cw_h / rh) - Gh.T @ ((cw_h / rh**3)[:, None] * Gh)
              + re_gram(prog.Aw, cw_w / rw) - Gw.T @ ((cw_w / rw**3)[:, None] * Gw)
              + drh.T @ (g[:, None] * drw) + drw.T @ (g[:, None] * drh)) / n
    outer_sp = np.outer(grad_s, grad_p)
    hess = (hess_quad
            + 2.0 * np.outer(grad_s, grad_s) / d + 2.0 * s * hess_s / d
            + 2.0 * s * (outer_sp + outer_sp.T) / d**2
            + s * s * hess_p / d**2 + 2.0 * s * s * np.outer(grad_p, grad_p) / d**3
            + mu * hess_p / slack + mu * np.outer(grad_p, grad_p) / slack**2)
    return _Eval(f, grad, hess)


def smoothed_objective(prog: DiscreteProgram, q, tau: float, mu: float = 0.0):
    """Smoothed reduced objective and gradient (``None`` outside the domain)."""
    bound = prog.sigma2 * (1.0 - STRICT_MARGIN)
    ev = _evaluate(prog, np.asarray(q, float), tau, mu, bound, hessian=False)
    return None if ev is None else (ev.f, ev.grad)


def _newton_direction(H: np.ndarray, grad: np.ndarray) -> np.ndarray:
    H = 0.5 * (H + H.T)
    reg = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    for _ in range(20):
        try:
            L = np.linalg.cholesky(H + reg * np.eye(H.shape[0]))
            return -np.linalg.solve(L.T, np.linalg.solve(L, grad))
        except np.linalg.LinAlgError:
            reg = max(1e-12 * scale, 10.0 * reg)
    return -grad


def minimize(prog: DiscreteProgram, tol: float = 1e-8, max_iter: int = 500):
    """Minimize the reduced objective ``rho_n + Delta_n`` over FIR taps.

    Returns
    -------
    q : FirParameter
    gamma : float
        Exact (unsmoothed) objective at ``q``; ``inf`` when infeasible.
    report : SolverReport
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    bound = prog.sigma2 * (1.0 - STRICT_MARGIN)
    q = np.zeros(prog.m)
    p0 = prog.power(q)
    min_power = p0
    if p0 >= bound:
        q, min_power = least_squares_power(prog)
        if min_power >= bound:
            report = SolverReport(0, float("nan"), 0.0, float("nan"), bound - min_power,
                                  SolverStatus.INFEASIBLE, min_power=min_power)
            return FirParameter(q), float("inf"), report

    scale = 1.0 + abs(prog.objective(q))
    iters = 0
    converged = False
    gnorm = float("nan")
    mu = 0.0
    tau = TAU_SCHEDULE[0]
    for tau in TAU_SCHEDULE:
        mu = tau * scale
        ev = _evaluate(prog, q, tau, mu, bound)
        converged = False
        while iters < max_iter:
            gnorm = float(np.linalg.norm(ev.grad))
            if gnorm < tol * (1.0 + abs(ev.f)):
                converged = True
                break
            step = _newton_direction(ev.hess, ev.grad)
            slope = float(ev.grad @ step)
            if slope >= 0:
                step, slope = -ev.grad, -gnorm**2
            t, new = 1.0, None
            if -slope <= 1e-8 * (1.0 + abs(ev.f)):
                # pure Newton phase: the decrease is below what f can resolve,
                # so judge the full step by the gradient instead
                cand = _evaluate(prog, q + step, tau, mu, bound)
                if cand is not None and np.linalg.norm(cand.grad) < gnorm:
                    new = cand
                t = 1.0 if new is not None else 0.5
            while new is None and t > 1e-16:
                cand = _evaluate(prog, q + t * step, tau, mu, bound)
                if cand is not None and cand.f <= ev.f + 1e-4 * t * slope:
                    new = cand
                    break
                t *= 0.5
            iters += 1
            if new is None:
                # no representable decrease left; accept if the gradient is at rounding level
                converged = gnorm < 1e2 * tol * (1.0 + abs(ev.f))
                break
            q = q + t * step
            ev = new
        else:
            gnorm = float(np.linalg.norm(ev.grad))
            converged = gnorm < tol * (1.0 + abs(ev.f))
        if iters >= max_iter and not converged:
            break

    gamma = prog.objective(q)
    lmi = verify_lmi(prog, q, gamma)
    status = SolverStatus.OPTIMAL if converged else SolverStatus.MAX_ITER
    report = SolverReport(iters, gnorm, mu, lmi, bound - prog.power(q), status,
                          min_power=min_power, smoothing=tau)
    return FirParameter(q), gamma, report


def lmi_matrix(prog: DiscreteProgram, q, gamma: float) -> np.ndarray:
    """Dense ``(n+2) x (n+2)`` arrow matrix at the tight ``(a, e)``."""
    q = np.asarray(getattr(q, "coeffs", q), float)
    a, e = prog.tight(q)
    n = prog.n
    Mx = np.zeros((n + 2, n + 2))
    Mx[:n, :n] = np.eye(n)
    Mx[:n, n] = Mx[n, :n] = e
    Mx[:n, n + 1] = Mx[n + 1, :n] = a
    Mx[n, n] = n * prog.sigma2
    Mx[n + 1, n + 1] = n * gamma - n * prog.delta(q)
    return Mx


def verify_lmi(prog: DiscreteProgram, q, gamma: float) -> float:
    """Minimum eigenvalue of the arrow LMI, computed in ``O(n)``.

    With ``X = [e a] = U R`` (thin QR) the matrix is unitarily similar to
    ``diag(I_{n-2}, [[I_2, R], [R', D]])``, so only a 4 x 4 eigenproblem
    remains.
    """
    q = np.asarray(getattr(q, "coeffs", q), float)
    a, e = prog.tight(q)
    n = prog.n
    _, R = np.linalg.qr(np.column_stack([e, a]))
    small = np.zeros((4, 4))
    small[:2, :2] = np.eye(2)
    small[:2, 2:] = R
    small[2:, :2] = R.T
    small[2, 2] = n * prog.sigma2
    small[3, 3] = n * gamma - n * prog.delta(q)
    lam = float(np.min(np.linalg.eigvalsh(small)))
    return min(lam, 1.0) if n > 2 else lam
