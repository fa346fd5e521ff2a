import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import stable_plant, du_plant
from snrctl.errors import NotDetectable, NotPositive, NotStabilizable
from snrctl.factorization import TrigPolynomial, coprime_factorize, fit_magnitude_sq, spectral_factor_trig
from snrctl.lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    GridSamples,
    RationalTransfer,
    StateSpaceModel,
    blocks_from_state_space,
    is_schur_stable,
)
from snrctl.youla_program import fir_basis, k_from_q

PLANTS = {
    "stable": stable_plant,
    "delayed_unstable": du_plant,
    "first_order_unstable": lambda: GeneralizedPlant.from_siso(RationalTransfer.from_desc([1.0], [1.0, -2.0])),
    "two_unstable_poles": lambda: GeneralizedPlant.from_siso(
        RationalTransfer.from_desc([1.0, 0.5], [1.0, -3.25, 2.5])
    ),
}


def _bezout_on(f, n):
    w = FrequencyGrid(n).omegas
    return np.max(np.abs(f.V.freq(w) * f.M.freq(w) + f.U.freq(w) * f.N.freq(w) - 1.0))


# ---------------------------------------------------------------- coprime factors


@pytest.mark.parametrize("name", PLANTS)
def test_bezout_and_ratio(name):
    plant = PLANTS[name]()
    f = coprime_factorize(plant)
    assert f.bezout_residual < 1e-8
    for X in (f.M, f.N, f.U, f.V):
        assert is_schur_stable(X) and X.is_proper
    assert f.N.is_strictly_proper
    w = FrequencyGrid(512).omegas
    P = plant.G_yu.freq(w)
    np.testing.assert_allclose(f.N.freq(w) / f.M.freq(w), P, rtol=1e-8)


@pytest.mark.parametrize("name", PLANTS)
def test_bezout_residual_grid_invariant(name):
    f = coprime_factorize(PLANTS[name]())
    assert abs(_bezout_on(f, 1024) - _bezout_on(f, 8192)) < 1e-12


def test_stable_shortcut_is_exact():
    plant = stable_plant()
    f = coprime_factorize(plant)
    assert f.method == "shortcut"
    assert f.U.is_zero and f.M(2.0) == 1.0 and f.V(2.0) == 1.0
    assert f.bezout_residual == 0.0


def test_deadbeat_factors_are_fir():
    f = coprime_factorize(PLANTS["first_order_unstable"]())
    for X in (f.M, f.N, f.U, f.V):
        assert X.is_monomial_den


@pytest.mark.parametrize("name", PLANTS)
@settings(max_examples=10, deadline=None)
@given(q=st.lists(st.floats(-2, 2), min_size=1, max_size=6))
def test_sensitivity_identity(name, q):
    f = coprime_factorize(PLANTS[name]())
    yc = k_from_q(f, q)
    if yc.circle_roots.size:
        return
    w = FrequencyGrid(257).omegas
    Q = fir_basis(w, len(q)) @ np.asarray(q)
    lhs = 1.0 - yc.K.freq(w) * PLANTS[name]().G_yu.freq(w)
    rhs = 1.0 / (f.M.freq(w) * (f.N.freq(w) * Q + f.V.freq(w)))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-10)


def test_not_stabilizable_or_detectable():
    A = np.diag([2.0, 0.5])
    # unstable mode not reachable from u
    ss = StateSpaceModel(A, np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 1.0], [1.0, 1.0]]), np.zeros((2, 2)))
    with pytest.raises(NotStabilizable):
        coprime_factorize(blocks_from_state_space(ss, 1, 1))
    # unstable mode not seen by y
    ss = StateSpaceModel(A, np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((2, 2)))
    with pytest.raises(NotDetectable):
        coprime_factorize(blocks_from_state_space(ss, 1, 1))


# ---------------------------------------------------------------- spectral factor


def test_spectral_factor_perfect_square():
    np.testing.assert_allclose(spectral_factor_trig(TrigPolynomial([2.0, 1.0])).coef, [1.0, 1.0], atol=1e-7)


def test_spectral_factor_constant():
    np.testing.assert_allclose(spectral_factor_trig(TrigPolynomial([4.0])).coef, [2.0], atol=1e-14)


def test_spectral_factor_root_flip_oracle():
    # c0^2 + c1^2 = 2.5 and c0 c1 = 1 with the root of c0 z + c1 inside the disk
    np.testing.assert_allclose(
        spectral_factor_trig(TrigPolynomial([2.5, 1.0])).coef, [np.sqrt(2.0), 1 / np.sqrt(2.0)], atol=1e-13
    )


def test_spectral_factor_rejects_negative():
    with pytest.raises(NotPositive):
        spectral_factor_trig(TrigPolynomial([1.0, 1.0]))


def _random_min_phase(rng, Nc):
    # jittered angle lattice keeps roots well separated, so np.roots stays accurate
    k = np.arange(Nc)
    r = rng.uniform(0.2, 0.9, Nc) * np.exp(1j * np.pi * (k + 0.5 + 0.4 * rng.uniform(-1, 1, Nc)) / max(Nc // 2, 1))
    roots = np.concatenate([r[: Nc // 2], np.conj(r[: Nc // 2])])
    if Nc % 2:
        roots = np.append(roots, rng.uniform(-0.95, 0.95))
    return np.real(np.poly(roots)) * rng.uniform(0.5, 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_spectral_round_trip_and_root_pairing(seed, Nc):
    rng = np.random.default_rng(seed)
    c_true = _random_min_phase(rng, Nc)
    A = TrigPolynomial(np.correlate(c_true, c_true, "full")[Nc:])
    c = spectral_factor_trig(A).coef
    assert c[0] > 0
    assert np.max(np.abs(np.roots(c))) < 1.0
    w = np.linspace(0, np.pi, 10 * A.check_grid().size // 2)
    Cw = np.polyval(c[::-1], np.exp(-1j * w))
    rel = np.max(np.abs(np.abs(Cw) ** 2 - A(w))) / np.max(np.abs(A(w)))
    assert rel < 1e-8
    # lifted polynomial z^Nc A(z) has reciprocal-conjugate root pairs
    lifted = np.concatenate([A.coeffs[::-1], A.coeffs[1:]])
    roots = np.roots(lifted)
    inside = roots[np.abs(roots) < 1]
    outside = roots[np.abs(roots) >= 1]
    refl = np.sort_complex(1 / np.conj(inside))
    if inside.size == outside.size and inside.size:
        np.testing.assert_allclose(np.sort_complex(outside), refl, atol=1e-7 * np.max(np.abs(refl)))


# ---------------------------------------------------------------- magnitude fit


def test_fit_recovers_in_span_target():
    g = FrequencyGrid(128)
    target = 3.0 + 2 * 1.2 * np.cos(g.omegas)
    fit = fit_magnitude_sq(GridSamples(g, target), 4)
    np.testing.assert_allclose(fit.coeffs, [3.0, 1.2, 0, 0, 0], atol=1e-12)
    assert fit.residual < 1e-12 and fit.shift == 0.0


def test_fit_constant_target():
    g = FrequencyGrid(64)
    fit = fit_magnitude_sq(GridSamples(g, np.full(64, 2.5)), 3)
    np.testing.assert_allclose(fit.coeffs, [2.5, 0, 0, 0], atol=1e-13)


def test_fit_floors_negative_dips():
    g = FrequencyGrid(256)
    # a narrow band forces Gibbs undershoot below zero
    target = (np.cos(g.omegas) > 0.9).astype(float)
    fit = fit_magnitude_sq(GridSamples(g, target), 6)
    assert fit.shift > 0
    # the floor is relative to the maximum of the unshifted fit
    peak = np.max(fit(fit.check_grid())) - fit.shift
    assert fit.minimum() == pytest.approx(1e-9 * peak, rel=1e-3)
    spectral_factor_trig(fit)


def test_fit_residual_monotone_on_example_shape():
    from conftest import du_result

    res = du_result(20.0)
    g = FrequencyGrid(4096)
    target = np.abs(res.K.freq(g.omegas))
    resid = [fit_magnitude_sq(GridSamples(g, target), Nc).residual for Nc in (4, 8, 16, 32)]
    assert all(a > b for a, b in zip(resid, resid[1:]))


def test_magnitude_round_trip_fit_then_factor():
    g = FrequencyGrid(1024)
    target = 1.0 / np.abs(1 - 0.7 * np.exp(-1j * g.omegas)) ** 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = fit_magnitude_sq(GridSamples(g, target), 40)
    c = spectral_factor_trig(fit).coef
    Cw = fir_basis(g.omegas, c.size) @ c
    np.testing.assert_allclose(np.abs(Cw) ** 2, target, rtol=1e-5)


def test_spectral_factor_ignores_rounding_level_tail():
    c_true = np.array([1.0, -0.5, 0.06])
    a = np.correlate(c_true, c_true, "full")[2:]
    a = np.concatenate([a, 1e-17 * np.array([1.0, -1.0, 1.0] * 40)])
    c = spectral_factor_trig(TrigPolynomial(a)).coef
    assert c.size == a.size
    np.testing.assert_allclose(c[:3], c_true, atol=1e-12)
    assert np.max(np.abs(c[3:])) < 1e-12
    assert np.max(np.abs(np.roots(np.trim_zeros(c, "b")))) < 1.0


def test_spectral_factor_keeps_small_but_exact_tail():
    # tiny trailing coefficients that carry real root information
    roots = 0.25 * np.exp(1j * np.pi * (np.arange(6) + 0.5) / 6)
    c_true = np.real(np.poly(np.concatenate([roots, np.conj(roots)])))
    A = TrigPolynomial(np.correlate(c_true, c_true, "full")[c_true.size - 1:])
    c = spectral_factor_trig(A).coef
    w = A.check_grid()
    err = np.max(np.abs(np.abs(np.polyval(c[::-1], np.exp(-1j * w))) ** 2 - A(w))) / np.max(A(w))
    assert err < 1e-10
