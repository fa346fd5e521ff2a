import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import stable_plant, du_data, du_plant, du_result
from snrctl.errors import NonNormalizedChannel, OutsideDomain, ZeroOnCircle
from snrctl.factorization import coprime_factorize
from snrctl.lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    StateSpaceModel,
    blocks_from_state_space,
    h2_norm_sq,
    is_schur_stable,
)
from snrctl.synthesis import min_snr_for_stabilization
from snrctl.youla_program import (
    FirParameter,
    build_program_data,
    channel_power,
    circle_roots,
    delta,
    fir_basis,
    in_theta_q,
    k_from_q,
    perturb_q,
    phi,
    phi0,
)

ONE = RationalTransfer.constant(1.0)


def _data(plant, snr, n=256, H=ONE):
    f = coprime_factorize(plant)
    return f, build_program_data(plant, f, H, FrequencyGrid(n), snr)


def _random_plant(rng, nx=3, n_v=2, n_z=2):
    A = rng.standard_normal((nx, nx))
    A *= 0.8 / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((nx, n_v + 1))
    C = rng.standard_normal((n_z + 1, nx))
    D = rng.standard_normal((n_z + 1, n_v + 1))
    D[-1, -1] = 0.0
    return blocks_from_state_space(StateSpaceModel(A, B, C, D), n_v, n_z)


def _delay_plant():
    return GeneralizedPlant.from_siso(RationalTransfer.delay(1))


# ---------------------------------------------------------------- program data


def test_stable_siso_identities():
    plant = stable_plant()
    f, d = _data(plant, 5.0)
    w = d.grid.omegas
    P = plant.G_yu.freq(w)
    np.testing.assert_allclose(d.m2, 1.0)
    np.testing.assert_allclose(d.E, P, rtol=1e-12)
    np.testing.assert_allclose(d.F, 0.0, atol=1e-14)
    np.testing.assert_allclose(d.g, np.abs(P) ** 2, rtol=1e-12)
    assert d.L_norm_sq == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(d.ell, 0.0, atol=1e-12)


def test_delayed_unstable_channel_term_orthogonal_to_one(rng):
    _, f, d = du_data()
    FH = (f.M * f.V - 1.0).reduce()
    assert abs(FH(1e9)) < 1e-9  # strictly proper
    for _ in range(5):
        q = rng.standard_normal(20)
        Qk = fir_basis(d.grid.omegas, 20) @ q
        val = np.mean(f.M.freq(d.grid.omegas) * (f.N.freq(d.grid.omegas) * Qk + f.V.freq(d.grid.omegas)))
        assert val == pytest.approx(1.0, abs=1e-10)


def test_matrix_reduction_brute_force(rng):
    for seed in range(5):
        plant = _random_plant(np.random.default_rng(seed))
        f, d = _data(plant, 50.0, n=128)
        w = d.grid.omegas
        Gzv, Gzu, Gyv, _ = plant.freq_blocks(w)
        M, N, V = f.M.freq(w), f.N.freq(w), f.V.freq(w)
        q = rng.standard_normal(4)
        Qk = fir_basis(w, 4) @ q
        outer = Gzu[:, :, None] * Gyv[:, None, :]
        AQB = (M**2 * Qk + M**2 * V / N)[:, None, None] * outer
        frob = np.linalg.norm(AQB, axis=(1, 2))
        _, h, _ = d.samples(q)
        np.testing.assert_allclose(frob, d.g * np.abs(h), rtol=1e-8)
        # Delta against the matrix inner product with L = Gzv - (M/N) Gzu Gyv
        L = Gzv - (M / N)[:, None, None] * outer
        direct = np.mean(np.linalg.norm(L, axis=(1, 2)) ** 2) + 2 * np.mean(
            np.real(np.einsum("kij,kij->k", np.conj(L), AQB))
        )
        assert delta(d, q) == pytest.approx(direct, rel=1e-6, abs=1e-9)


def test_build_errors():
    plant = stable_plant()
    f = coprime_factorize(plant)
    g = FrequencyGrid(64)
    with pytest.raises(NonNormalizedChannel):
        build_program_data(plant, f, RationalTransfer.constant(2.0), g, 1.0)
    with pytest.raises(ZeroOnCircle):
        build_program_data(plant, f, RationalTransfer.from_fir([1.0, 1.0]) * np.sqrt(0.5), g, 1.0)
    zp = GeneralizedPlant.from_siso(RationalTransfer.from_desc([1.0, -1.0], [1.0, -0.5, 0.0]))
    with pytest.raises(ZeroOnCircle):
        build_program_data(zp, coprime_factorize(zp), ONE, g, 1.0)


def test_L_norm_cross_check_recorded():
    _, _, d = du_data()
    assert d.L_norm_sq == pytest.approx(d.L_norm_sq_check, rel=1e-6, abs=1e-12)


# ---------------------------------------------------------------- phi


def test_phi_at_zero_is_open_loop_norm():
    plant = stable_plant()
    _, d = _data(plant, 3.0, n=1024)
    assert phi(d, np.zeros(3)) == pytest.approx(h2_norm_sq(plant.G_zv[0][0]), rel=1e-9)
    assert phi0(d, np.zeros(3)) == pytest.approx(phi(d, np.zeros(3)) - delta(d, np.zeros(3)))


def test_phi_large_snr_limit(rng):
    _, _, d = du_data(1e12)
    q = rng.standard_normal(20) * 0.1
    _, h, _ = d.samples(q)
    model = d.L_norm_sq + 2 * np.mean(np.real(d.ell * (fir_basis(d.grid.omegas, 20) @ q + d.v_over_n)))
    model += np.mean(d.g**2 * np.abs(h) ** 2)
    assert phi(d, q) == pytest.approx(model, rel=1e-8)


def test_phi_outside_domain():
    _, _, d = du_data(10.0)
    with pytest.raises(OutsideDomain):
        phi(d, np.zeros(20))


def test_phi_matches_closed_loop_expression(rng):
    plant, f, d = du_data(20.0)
    w = d.grid.omegas
    Gzv, Gzu, Gyv, Gyu = plant.freq_blocks(w)
    q0 = du_result(20.0).q.coeffs
    for _ in range(4):
        q = q0 + 0.05 * rng.standard_normal(20)
        yc = k_from_q(f, q)
        assert not yc.circle_roots.size
        K = yc.K.freq(w)
        S = 1.0 / (1.0 - K * Gyu)
        zv = Gzv[:, 0, 0] + K * Gzu[:, 0] * Gyv[:, 0] * S
        l1 = np.mean(np.abs(K * Gzu[:, 0] * Gyv[:, 0] * S**2))
        alpha = d.snr - np.mean(np.abs(K * Gyu * S) ** 2)
        expected = np.mean(np.abs(zv) ** 2) + l1**2 / alpha
        assert phi(d, q) == pytest.approx(expected, rel=1e-6)


def test_convexity_and_domain(rng):
    _, _, d = du_data(20.0)
    q0 = du_result(20.0).q.coeffs
    members = []
    while len(members) < 40:
        q = q0 + rng.standard_normal(20) * rng.uniform(0.01, 0.5)
        if in_theta_q(d, q).member:
            members.append(q)
    for i in range(len(members) - 1):
        q1, q2 = members[i], members[i + 1]
        f1, f2 = phi(d, q1), phi(d, q2)
        for t in (0.25, 0.5, 0.75):
            qt = t * q1 + (1 - t) * q2
            assert in_theta_q(d, qt).member
            assert phi(d, qt) <= t * f1 + (1 - t) * f2 + 1e-9 * (1 + abs(phi(d, qt)))


# ---------------------------------------------------------------- theta_q


def test_theta_membership():
    _, d = _data(stable_plant(), 1.0)
    chk = in_theta_q(d, np.zeros(2))
    assert chk.member and chk.power == pytest.approx(0.0, abs=1e-15) and chk.slack == pytest.approx(1.0)
    assert not in_theta_q(d, 1e6 * np.ones(2)).member


def test_no_member_below_threshold(rng):
    _, _, d = du_data(10.0)
    thr = min_snr_for_stabilization(du_plant(), ONE, 20, 629)
    assert thr > 10.0
    for _ in range(50):
        assert not in_theta_q(d, rng.standard_normal(20) * 3).member


def test_channel_power_quadratic_growth(rng):
    _, _, d = du_data(20.0)
    q = rng.standard_normal(20)
    p = [channel_power(d, t * q) for t in (10.0, 20.0)]
    assert p[1] / p[0] == pytest.approx(4.0, rel=0.05)


# ---------------------------------------------------------------- K from Q and perturbation


def test_k_zero_for_stable_plant():
    f = coprime_factorize(stable_plant())
    assert k_from_q(f, np.zeros(4)).K.is_zero


def test_k_from_solver_output_stabilizes():
    plant, f, _ = du_data()
    res = du_result(20.0)
    yc = k_from_q(f, res.q_hat)
    S = f.M * f.youla_denominator(res.q_hat.to_transfer())
    assert is_schur_stable(S.reduce())
    w = FrequencyGrid(300).omegas
    np.testing.assert_allclose(1.0 / (1.0 - yc.K.freq(w) * plant.G_yu.freq(w)), S.freq(w), rtol=1e-8)


def test_circle_root_flagged():
    f = coprime_factorize(_delay_plant())
    # 1 + z^-1 Q with Q = -1 + z^-1 vanishes at exp(+-i pi/3)
    roots = circle_roots(f, [-1.0, 1.0])
    np.testing.assert_allclose(np.sort(np.angle(roots)), [-np.pi / 3, np.pi / 3], atol=1e-9)
    assert k_from_q(f, [-1.0, 1.0]).needs_perturbation


def test_perturb_noop_without_roots():
    f, d = _data(_delay_plant(), 10.0, n=64)
    q = FirParameter([0.3, 0.1])
    assert np.array_equal(perturb_q(f, d, q, 1e-2).coeffs, q.coeffs)


@pytest.mark.parametrize("q", [[-1.0], [-1.0, 1.0]])
def test_perturb_moves_roots_off_circle(q):
    f, d = _data(_delay_plant(), 10.0, n=64)
    eps = 1e-2
    qh = perturb_q(f, d, q, eps)
    assert circle_roots(f, qh).size == 0
    roots = np.roots(f.youla_denominator(qh.to_transfer()).num_desc)
    assert np.min(np.abs(1 - np.abs(roots))) > 1e-6
    assert phi(d, qh) < phi(d, np.asarray(q)) + eps
    assert in_theta_q(d, qh).member


def test_perturb_complex_pair_single_update():
    f, d = _data(_delay_plant(), 10.0, n=64)
    qh = perturb_q(f, d, [-1.0, 1.0], 1e-2)
    roots = np.roots(f.youla_denominator(qh.to_transfer()).num_desc)
    # the conjugate pair moves together to the same radius
    np.testing.assert_allclose(np.abs(roots), np.abs(roots[0]), rtol=1e-9)
    assert np.abs(roots[0]) > 1.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, np.pi - 0.2))
def test_perturb_property_constructed_pairs(theta):
    f, d = _data(_delay_plant(), 10.0, n=64)
    q = [-2 * np.cos(theta), 1.0]
    if not in_theta_q(d, q).member:
        return
    qh = perturb_q(f, d, q, 1e-2)
    roots = np.roots(f.youla_denominator(qh.to_transfer()).num_desc)
    assert np.min(np.abs(1 - np.abs(roots))) > 1e-6
    assert phi(d, qh) < phi(d, np.asarray(q)) + 1e-2
