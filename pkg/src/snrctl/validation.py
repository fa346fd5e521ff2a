"""Closed-loop maps, analytic cost, internal stability and Monte-Carlo checks.

The loop is plant -> encoder ``C`` -> additive channel noise ``n = H w`` ->
decoder ``D`` -> plant, so the controller seen by the plant is ``K = D C``
and ``S = 1 / (1 - K G_yu)`` (positive feedback).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DegenerateLoop, UnstableLoop
from .factorization import CoprimeFactors
from .lti_core import (
    STABILITY_MARGIN,
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    StateSpaceModel,
)
from .youla_program import FirParameter

__all__ = [
    "ClosedLoop",
    "StabilityReport",
    "CostPair",
    "SimulationEstimate",
    "closed_loop",
    "check_internal_stability",
    "analytic_cost",
    "grid_cost",
    "simulate",
]

MIN_STEPS = 10_000
N_BATCHES = 30


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Closed-loop transfer functions and a state-space realization.

    Attributes
    ----------
    T_map : list of list of RationalTransfer
        Map from the three injection points to ``(y, t, u)``::

            [[K G S, G S, D G S],
             [C S,  C G S, K G S],
             [K S,  K G S, D S]]

    z_map : tuple
        ``(z_v, z_n)``: ``z_v[i][j] = G_zv + D C G_zu G_yv S`` and
        ``z_n[i] = D H G_zu S``.
    t_map : tuple
        ``(t_v, t_n)``: ``t_v[j] = C G_yv S`` and ``t_n = D C H G_yu S``.
    realization : StateSpaceModel
        Inputs ``(v, w)`` and outputs ``(z, t)``; ``w`` is the white source
        of the channel noise.
    """

    plant: GeneralizedPlant
    C: RationalTransfer
    D: RationalTransfer
    H: RationalTransfer
    K: RationalTransfer
    S: RationalTransfer
    T_map: list
    z_map: tuple
    t_map: tuple
    realization: StateSpaceModel
    youla: bool


def _interconnect(plant: GeneralizedPlant, C: RationalTransfer, D: RationalTransfer,
                  H: RationalTransfer) -> StateSpaceModel:
    """Literal encoder/channel/decoder loop around the plant realization."""
    nv, nz = plant.n_v, plant.n_z
    Pc = C.to_state_space()
    Pd = D.to_state_space()
    Ph = H.to_state_space()
    nx, nc, nd, nh = plant.A.shape[0], Pc.n_states, Pd.n_states, Ph.n_states
    N = nx + nc + nd + nh
    sx, sc, sd, sh = (slice(0, nx), slice(nx, nx + nc), slice(nx + nc, nx + nc + nd),
                      slice(nx + nc + nd, N))
    ni = nv + 1

    def signal():
        return np.zeros((1, N)), np.zeros((1, ni))

    # y = C2 x + D21 v
    y_x, y_in = signal()
    y_x[:, sx] = plant.C2
    y_in[:, :nv] = plant.D21
    # t = Cc xc + Dc y
    t_x = Pc.D @ y_x
    t_x[:, sc] += Pc.C
    t_in = Pc.D @ y_in
    # n = Ch xh + Dh w
    n_x, n_in = signal()
    n_x[:, sh] = Ph.C
    n_in[:, nv:] = Ph.D
    r_x, r_in = t_x + n_x, t_in + n_in
    # u = Cd xd + Dd r
    u_x = Pd.D @ r_x
    u_x[:, sd] += Pd.C
    u_in = Pd.D @ r_in

    A = np.zeros((N, N))
    B = np.zeros((N, ni))
    A[sx, sx] = plant.A
    A[sx] += plant.B2 @ u_x
    B[sx, :nv] = plant.B1
    B[sx] += plant.B2 @ u_in
    A[sc, sc] = Pc.A
    A[sc] += Pc.B @ y_x
    B[sc] += Pc.B @ y_in
    A[sd, sd] = Pd.A
    A[sd] += Pd.B @ r_x
    B[sd] += Pd.B @ r_in
    A[sh, sh] = Ph.A
    B[sh, nv:] = Ph.B

    Cz = np.zeros((nz, N))
    Cz[:, sx] = plant.C1
    Cz += plant.D12 @ u_x
    Dz = np.hstack([plant.D11, np.zeros((nz, 1))]) + plant.D12 @ u_in
    return StateSpaceModel(A, B, np.vstack([Cz, t_x]), np.vstack([Dz, t_in]))


def closed_loop(plant: GeneralizedPlant, C: RationalTransfer, D: RationalTransfer,
                H: RationalTransfer, youla: tuple[CoprimeFactors, FirParameter] | None = None
                ) -> ClosedLoop:
    """Form the closed-loop maps of the encoder/decoder pair ``(C, D)``.

    With ``youla = (factors, q)`` and ``D C = (M Q - U)/(N Q + V)`` every
    entry is built from the cancellation-free forms ``S = M (N Q + V)``,
    ``K S = (M Q - U) M`` and ``K G S = (M Q - U) N``; otherwise products are
    formed directly and reduced.

    Raises
    ------
    DegenerateLoop
        If ``1 - D C G_yu`` vanishes identically.
    """
    G = plant.G_yu
    K = (D * C).reduce()
    if youla is not None and not K.is_zero:
        f, q = youla
        Q = RationalTransfer.from_fir(getattr(q, "coeffs", q))
        num = (f.M * Q - f.U).reduce()
        den = (f.N * Q + f.V).reduce()
        S = (f.M * den).reduce()
        KS = (num * f.M).reduce()
        KGS = (num * f.N).reduce()
        GS = (f.N * den).reduce()
        CS = (C * S).reduce()
        CGS = (C * GS).reduce()
        DS = (KS / C).reduce()
        DGS = (KGS / C).reduce()
        used_youla = True
    else:
        ret = (1.0 - K * G).reduce()
        if ret.is_zero:
            raise DegenerateLoop("1 - D C G_yu vanishes identically")
        S = (1.0 / ret).reduce()
        KS, KGS, GS = (K * S).reduce(), (K * G * S).reduce(), (G * S).reduce()
        CS, CGS = (C * S).reduce(), (C * G * S).reduce()
        DS, DGS = (D * S).reduce(), (D * G * S).reduce()
        used_youla = False
    T = [[KGS, GS, DGS], [CS, CGS, KGS], [KS, KGS, DS]]

    # The z and t maps mix plant blocks whose unstable poles cancel only
    # jointly (with multiplicity); reading them off the interconnection
    # avoids cancelling root clusters in rational arithmetic.
    real = _interconnect(plant, C, D, H)
    nz, nv = plant.n_z, plant.n_v
    tf = lambda i, j: real.select([i], [j]).to_transfer()
    z_v = [[tf(i, j) for j in range(nv)] for i in range(nz)]
    z_n = [tf(i, nv) for i in range(nz)]
    t_v = [tf(nz, j) for j in range(nv)]
    t_n = tf(nz, nv)
    return ClosedLoop(plant, C, D, H, K, S, T, (z_v, z_n), (t_v, t_n), real, used_youla)


class StabilityReport(NamedTuple):
    stable: bool
    entries: np.ndarray
    max_pole_modulus: np.ndarray
    realization_stable: bool

    def __bool__(self) -> bool:
        return self.stable


def _max_pole(tf: RationalTransfer) -> float:
    p = tf.poles()
    return float(np.max(np.abs(p))) if p.size else 0.0


def check_internal_stability(loop: ClosedLoop) -> StabilityReport:
    """Stability of all nine entries of the injection map.

    ``stable`` follows the entries only; ``realization_stable`` records the
    spectral radius test on the interconnected realization as a cross-check.
    """
    mods = np.array([[_max_pole(t) for t in row] for row in loop.T_map])
    ok = mods < 1.0 - STABILITY_MARGIN
    A = loop.realization.A
    rstable = bool(A.size == 0 or np.max(np.abs(np.linalg.eigvals(A))) < 1.0 - STABILITY_MARGIN)
    return StabilityReport(bool(np.all(ok)), ok, mods, rstable)


class CostPair(NamedTuple):
    J: float
    channel_power: float


def _spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def grid_cost(loop: ClosedLoop, n: int | None = None) -> CostPair:
    """Dense-grid quadrature of the cost and power from pointwise loop algebra."""
    if n is None:
        r = _spectral_radius(loop.realization.A)
        n = int(min(2**18, max(4096, np.ceil(60.0 / max(1e-6, 1.0 - r)))))
    w = FrequencyGrid(n).omegas
    Gzv, Gzu, Gyv, Gyu = loop.plant.freq_blocks(w)
    C, D, H = loop.C.freq(w), loop.D.freq(w), loop.H.freq(w)
    S = 1.0 / (1.0 - D * C * Gyu)
    zv = Gzv + (D * C * S)[:, None, None] * Gzu[:, :, None] * Gyv[:, None, :]
    zn = (D * H * S)[:, None] * Gzu
    tv = (C * S)[:, None] * Gyv
    tn = D * C * H * Gyu * S
    J = np.mean(np.sum(np.abs(zv) ** 2, axis=(1, 2)) + np.sum(np.abs(zn) ** 2, axis=1))
    p = np.mean(np.sum(np.abs(tv) ** 2, axis=1) + np.abs(tn) ** 2)
    return CostPair(float(J), float(p))


def _gramian_cost(ss: StateSpaceModel, n_z: int) -> CostPair:
    A, B, Cm, Dm = ss.A, ss.B, ss.C, ss.D
    if A.size:
        Wc = scipy.linalg.solve_discrete_lyapunov(A, B @ B.T)
        out = np.einsum("ij,jk,ik->i", Cm, Wc, Cm) + np.sum(Dm**2, axis=1)
    else:
        out = np.sum(Dm**2, axis=1)
    return CostPair(float(np.sum(out[:n_z])), float(out[n_z]))


def analytic_cost(loop: ClosedLoop, check: bool = True) -> CostPair:
    """Squared H2 norms of the ``z`` and ``t`` maps via the controllability Gramian.

    The Gramian values are cross-checked against :func:`grid_cost` at
    ``1e-6`` relative.

    Raises
    ------
    UnstableLoop
        If the loop is not internally stable.
    """
    rep = check_internal_stability(loop)
    if not (rep.stable and rep.realization_stable):
        raise UnstableLoop("closed loop is not internally stable")
    cost = _gramian_cost(loop.realization, loop.plant.n_z)
    if check:
        grid = grid_cost(loop)
        for a, b, name in ((cost.J, grid.J, "J"), (cost.channel_power, grid.channel_power, "power")):
            if abs(a - b) > 1e-6 * max(1.0, abs(a)):
                raise UnstableLoop(f"{name}: Gramian {a:.12g} disagrees with quadrature {b:.12g}")
    return cost


@dataclass(frozen=True)
class SimulationEstimate:
    z_variance: float
    t_power: float
    samples: int
    seed: int
    confidence_halfwidth: float
    z_halfwidth: float = float("nan")
    t_halfwidth: float = float("nan")
    burn_in: int = 0


def simulate(loop: ClosedLoop, steps: int, seed: int, noise: str = "gaussian") -> SimulationEstimate:
    """Drive the realized loop with unit-variance white ``v`` and ``w``.

    ``confidence_halfwidth`` is the larger of the two 3-sigma batch-means
    halfwidths for ``E[z'z]`` and ``E[t^2]``.

    Raises
    ------
    UnstableLoop
        If the realization is not stable.
    ValueError
        If ``steps < 10**4`` or ``noise`` is unknown.
    """
    if steps < MIN_STEPS:
        raise ValueError(f"steps must be at least {MIN_STEPS}")
    ss = loop.realization
    r = _spectral_radius(ss.A)
    if r >= 1.0 - STABILITY_MARGIN:
        raise UnstableLoop("closed-loop realization is unstable")
    burn = int(np.ceil(10.0 / (1.0 - r))) if ss.A.size else 0
    rng = np.random.default_rng(seed)
    total = steps + burn
    ni = ss.n_inputs
    if noise == "gaussian":
        inp = rng.standard_normal((total, ni))
    elif noise == "uniform":
        inp = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), (total, ni))
    else:
        raise ValueError(f"unknown noise model {noise!r}")

    A, B, Cm, Dm = ss.A, ss.B, ss.C, ss.D
    nx = A.shape[0]
    X = np.empty((total, nx))
    Bu = inp @ B.T
    x = np.zeros(nx)
    for k in range(total):
        X[k] = x
        x = A @ x + Bu[k]
    Y = X[burn:] @ Cm.T + inp[burn:] @ Dm.T
    nz = loop.plant.n_z
    zz = np.sum(Y[:, :nz] ** 2, axis=1)
    tt = Y[:, nz] ** 2

    size = steps // N_BATCHES

    def batch(v):
        means = v[: size * N_BATCHES].reshape(N_BATCHES, size).mean(axis=1)
        return float(v.mean()), 3.0 * float(means.std(ddof=1)) / np.sqrt(N_BATCHES)

    zm, zh = batch(zz)
    tm, th = batch(tt)
    return SimulationEstimate(zm, tm, steps, int(seed), max(zh, th), zh, th, burn)
