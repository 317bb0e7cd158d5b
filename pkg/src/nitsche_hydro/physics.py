"""Ideal-gas closure and tensor artificial viscosity.

All functions broadcast over leading axes, so the same code evaluates a single
point or every quadrature point of the mesh at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ThermodynamicStateError(ValueError):
    pass


@dataclass(frozen=True)
class IdealGas:
    gamma: float = 1.4

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")


@dataclass(frozen=True)
class ViscositySettings:
    q1: float = 0.5
    q2: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if self.q1 < 0 or self.q2 < 0:
            raise ValueError("viscosity coefficients must be nonnegative")


def pressure(gas: IdealGas, rho, e):
    """``p = (gamma - 1) rho e`` with ``e`` clamped at zero from below."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ThermodynamicStateError("density must be positive")
    return (gas.gamma - 1.0) * rho * np.maximum(e, 0.0)


def sound_speed(gas: IdealGas, e):
    return np.sqrt(gas.gamma * (gas.gamma - 1.0) * np.maximum(e, 0.0))


def sym_velocity_gradient(grad_v):
    grad_v = np.asarray(grad_v, dtype=float)
    return 0.5 * (grad_v + np.swapaxes(grad_v, -1, -2))


def compression_switch(delta_s):
    """1 where the directional compression measure is negative, else 0."""
    return np.where(np.asarray(delta_s) < 0.0, 1.0, 0.0)


def min_eigenpair(sym):
    """Smallest eigenvalue and a unit eigenvector of symmetric matrices (..., d, d)."""
    sym = np.asarray(sym, dtype=float)
    if sym.shape[-1] != 2:
        lam, vec = np.linalg.eigh(sym)
        return lam[..., 0], vec[..., :, 0]
    a, b, c = sym[..., 0, 0], sym[..., 0, 1], sym[..., 1, 1]
    half_tr = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lam = half_tr - rad
    # two candidate eigenvectors; keep the better conditioned one
    v1 = np.stack([b, lam - a], axis=-1)
    v2 = np.stack([lam - c, b], axis=-1)
    # hypot avoids underflow for tiny entries
    n1 = np.hypot(v1[..., 0], v1[..., 1])
    n2 = np.hypot(v2[..., 0], v2[..., 1])
    vec = np.where((n1 >= n2)[..., None], v1, v2)
    nrm = np.maximum(n1, n2)
    iso = nrm == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        vec = vec / np.where(iso, 1.0, nrm)[..., None]
    vec[iso] = (1.0, 0.0)
    return lam, vec


def viscosity_coefficient(rho, c_s, grad_v, jac, jac0_inv, l0, settings: ViscositySettings):
    """Scalar viscosity ``mu`` and viscous stress ``mu * eps`` at points.

    Parameters
    ----------
    rho, c_s : array (...)
        Density and sound speed.
    grad_v : array (..., d, d)
        Physical velocity gradient, ``grad_v[..., i, k] = d v_i / d x_k``.
    jac : array (..., d, d)
        Current reference-to-physical Jacobian.
    jac0_inv : array (..., d, d)
        Inverse of the initial reference-to-physical Jacobian.
    l0 : array (...)
        Initial length scale (element size over polynomial degree).

    Notes
    -----
    The compression direction ``s`` is the eigenvector of the strain rate
    belonging to its smallest eigenvalue; the compression measure is that
    eigenvalue clipped to ``(-inf, 0]``.  The directional length scale is
    ``l0 * |jac @ jac0_inv @ s|``, i.e. the initial length stretched by the
    motion along ``s``.  The vorticity switch ``|div v| / |grad v|_F`` is
    clamped to ``[0, 1]``.
    """
    grad_v = np.asarray(grad_v, dtype=float)
    eps = sym_velocity_gradient(grad_v)
    if not settings.enabled:
        return np.zeros(eps.shape[:-2]), np.zeros_like(eps)
    lam_min, s_dir = min_eigenpair(eps)
    delta_s = np.minimum(lam_min, 0.0)
    stretched = (np.asarray(jac) @ (np.asarray(jac0_inv) @ s_dir[..., None]))[..., 0]
    l_s = l0 * np.linalg.norm(stretched, axis=-1)

    div_v = np.trace(grad_v, axis1=-2, axis2=-1)
    gnorm = np.linalg.norm(grad_v, axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        psi0 = np.where(gnorm > 0.0, np.abs(div_v) / gnorm, 0.0)
    psi0 = np.clip(psi0, 0.0, 1.0)
    psi1 = compression_switch(delta_s)

    mu = rho * (settings.q2 * l_s ** 2 * np.abs(delta_s)
                + settings.q1 * psi0 * psi1 * l_s * c_s)
    return mu, mu[..., None, None] * eps
