import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nitsche_hydro.physics import (
    IdealGas,
    ThermodynamicStateError,
    ViscositySettings,
    compression_switch,
    min_eigenpair,
    pressure,
    sound_speed,
    sym_velocity_gradient,
    viscosity_coefficient,
)

GAS = IdealGas(1.4)
VISC = ViscositySettings()
finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
matrices = arrays(np.float64, (2, 2), elements=finite)


def visc(grad_v, rho=1.0, c_s=1.0, jac=None, jac0_inv=None, l0=0.1, settings=VISC):
    eye = np.eye(2)
    return viscosity_coefficient(rho, c_s, np.asarray(grad_v, dtype=float),
                                 eye if jac is None else jac,
                                 eye if jac0_inv is None else jac0_inv, l0, settings)


@pytest.mark.parametrize("gamma,rho,e,p", [(1.4, 1.0, 1.0, 0.4), (1.4, 1.0, 0.0, 0.0),
                                           (5.0 / 3.0, 2.0, 3.0, 4.0)])
def test_pressure_examples(gamma, rho, e, p):
    assert pressure(IdealGas(gamma), rho, e) == pytest.approx(p, abs=1e-14)


def test_pressure_clamps_negative_energy():
    assert pressure(GAS, 1.0, -0.3) == 0.0


@pytest.mark.parametrize("rho", [0.0, -1.0])
def test_pressure_rejects_nonpositive_density(rho):
    with pytest.raises(ThermodynamicStateError):
        pressure(GAS, rho, 1.0)


@pytest.mark.parametrize("e,c", [(1.0, 0.748331), (0.0, 0.0), (0.25, 0.3741657)])
def test_sound_speed_examples(e, c):
    assert sound_speed(GAS, e) == pytest.approx(c, abs=1e-6)


def test_gas_validation():
    with pytest.raises(ValueError):
        IdealGas(1.0)
    with pytest.raises(ValueError):
        ViscositySettings(q1=-1.0)


@pytest.mark.parametrize("grad,eps", [([[0, -1], [1, 0]], [[0, 0], [0, 0]]),
                                      (np.eye(2), np.eye(2)),
                                      ([[1, 2], [0, 3]], [[1, 1], [1, 3]])])
def test_sym_velocity_gradient_examples(grad, eps):
    np.testing.assert_array_equal(sym_velocity_gradient(np.asarray(grad, float)), eps)


@pytest.mark.parametrize("delta,switch", [(-0.5, 1.0), (0.1, 0.0), (0.0, 0.0)])
def test_compression_switch_examples(delta, switch):
    assert compression_switch(delta) == switch


def test_zero_strain_gives_zero_viscosity():
    mu, sigma = visc(np.zeros((2, 2)))
    assert mu == 0.0
    assert not sigma.any()


def test_pure_expansion_has_no_viscosity():
    mu, sigma = visc(np.eye(2))
    assert mu == 0.0 and not sigma.any()


def test_pure_shear_suppresses_linear_term():
    grad = np.array([[0.0, 1.0], [0.0, 0.0]])
    mu, _ = visc(grad, c_s=100.0, l0=0.1)
    # only the quadratic term survives: eigenvalue -1/2, l_s = l0
    assert mu == pytest.approx(VISC.q2 * 0.01 * 0.5, rel=1e-13)


def test_rigid_rotation_has_no_viscosity():
    mu, sigma = visc([[0.0, -2.0], [2.0, 0.0]])
    assert mu == 0.0 and not sigma.any()


def test_uniaxial_compression_value():
    # v = (-x, 0): eps = diag(-1, 0), s = e_x, psi0 = 1
    rho, c_s, l0 = 2.0, 0.5, 0.1
    mu, sigma = visc([[-1.0, 0.0], [0.0, 0.0]], rho=rho, c_s=c_s, l0=l0)
    expected = rho * (VISC.q2 * l0 ** 2 * 1.0 + VISC.q1 * 1.0 * 1.0 * l0 * c_s)
    assert mu == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(sigma, expected * np.diag([-1.0, 0.0]), atol=1e-15)


def test_length_scale_follows_deformation():
    # compression along x in a cell stretched 3x in x since t0
    grad = np.diag([-1.0, 0.0])
    base, _ = visc(grad, c_s=0.0, l0=0.1)
    stretched, _ = visc(grad, c_s=0.0, l0=0.1, jac=np.diag([3.0, 1.0]))
    assert stretched == pytest.approx(9.0 * base, rel=1e-13)
    sideways, _ = visc(grad, c_s=0.0, l0=0.1, jac=np.diag([1.0, 3.0]))
    assert sideways == pytest.approx(base, rel=1e-13)


def test_psi0_is_clamped():
    # compression plus shear: |div v| / |grad v| < 1 but nonzero
    grad = np.array([[-1.0, 5.0], [0.0, -1.0]])
    mu_full, _ = visc(grad, c_s=1.0)
    mu_quad, _ = visc(grad, c_s=0.0)
    psi0 = 2.0 / np.linalg.norm(grad)
    lam = np.linalg.eigvalsh(sym_velocity_gradient(grad))[0]
    assert mu_full - mu_quad == pytest.approx(VISC.q1 * psi0 * 0.1, rel=1e-12)
    assert lam < 0
    # isotropic compression: |tr| / |grad|_F = sqrt(2) is clamped to 1
    mu_c, _ = visc(-np.eye(2), c_s=1.0)
    mu_cq, _ = visc(-np.eye(2), c_s=0.0)
    assert mu_c - mu_cq == pytest.approx(VISC.q1 * 0.1, rel=1e-12)


def test_disabled_viscosity():
    mu, sigma = visc(-np.eye(2), settings=ViscositySettings(enabled=False))
    assert mu == 0.0 and not sigma.any()


def test_broadcasting_over_points():
    rng = np.random.default_rng(2)
    grads = rng.normal(size=(5, 7, 2, 2))
    jac = np.broadcast_to(np.eye(2), grads.shape)
    mu, sigma = viscosity_coefficient(np.ones((5, 7)), np.ones((5, 7)), grads, jac, jac,
                                      np.full((5, 7), 0.1), VISC)
    assert mu.shape == (5, 7) and sigma.shape == (5, 7, 2, 2)
    mu_one, _ = visc(grads[3, 4])
    assert mu[3, 4] == pytest.approx(float(mu_one), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(grad=matrices)
def test_viscous_stress_symmetric_nonnegative_dissipative(grad):
    rng = np.random.default_rng(0)
    jac = np.eye(2) + 0.2 * rng.normal(size=(2, 2))
    mu, sigma = visc(grad, jac=jac)
    assert mu >= 0.0
    assert np.abs(sigma - sigma.T).max() < 1e-14 * max(1.0, np.abs(sigma).max())
    assert np.sum(sigma * sym_velocity_gradient(grad)) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(grad=matrices)
def test_rigid_motions_have_zero_viscosity(grad):
    skew = grad - grad.T
    mu, _ = visc(skew)
    assert mu == 0.0


@settings(max_examples=300, deadline=None)
@given(a=finite, b=finite, c=finite)
def test_min_eigenpair_matches_eigh(a, b, c):
    sym = np.array([[a, b], [b, c]])
    lam, vec = min_eigenpair(sym)
    ref = np.linalg.eigvalsh(sym)[0]
    scale = max(1.0, np.abs(sym).max())
    assert abs(lam - ref) < 1e-12 * scale
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-12
    np.testing.assert_allclose(sym @ vec, lam * vec, atol=1e-11 * scale)


def test_min_eigenpair_reconstruction():
    rng = np.random.default_rng(5)
    for dim in (2, 3):
        m = rng.normal(size=(50, dim, dim))
        sym = 0.5 * (m + np.swapaxes(m, 1, 2))
        lam, vec = np.linalg.eigh(sym)
        rebuilt = np.einsum("nik,nk,njk->nij", vec, lam, vec)
        assert np.abs(rebuilt - sym).max() < 1e-12
        lmin, vmin = min_eigenpair(sym)
        np.testing.assert_allclose(lmin, lam[:, 0], atol=1e-12)
        np.testing.assert_allclose(np.einsum("nij,nj->ni", sym, vmin),
                                   lmin[:, None] * vmin, atol=1e-12)


def test_min_eigenpair_isotropic():
    lam, vec = min_eigenpair(2.0 * np.eye(2))
    assert lam == 2.0
    np.testing.assert_array_equal(vec, [1.0, 0.0])
