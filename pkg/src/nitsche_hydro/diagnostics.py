"""Conservation monitors, wall-violation norms, shock-front extraction and the
self-similar Sedov reference."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.spatial import cKDTree

from .fem import FACE_TANGENTS_2D, eval_basis
from .operators import HydroOperator, _det_inv, _rho0_values, face_fields


@dataclass(frozen=True)
class ConservationReport:
    kinetic_energy: float       # 1/2 v^T M_V v, volume and wall parts together
    ke_penalty: float           # part carried by the initial-boundary mass block
    internal_energy: float
    total_energy: float
    momentum: np.ndarray
    boundary_violation: float
    mass: float

    @property
    def ke_volume(self) -> float:
        return self.kinetic_energy - self.ke_penalty


def conservation_report(state, op: HydroOperator) -> ConservationReport:
    """Energies, momentum, wall violation and mass of ``state``.

    Momentum uses the volume block of ``M_V`` only, i.e. the physical
    momentum ``int rho v``.
    """
    d = op.kin.dim
    v = np.asarray(state.v, dtype=float).reshape(-1)
    mv_vol = op.mass_v.volume @ v
    mv_bdr = op.mass_v.boundary @ v
    ke_vol = 0.5 * float(v @ mv_vol)
    ke_pen = 0.5 * float(v @ mv_bdr)
    ke = ke_vol + ke_pen
    ie = float(op.mass_e.matvec(state.e).sum())
    momentum = mv_vol.reshape(-1, d).sum(axis=0)
    return ConservationReport(
        kinetic_energy=ke, ke_penalty=ke_pen, internal_energy=ie, total_energy=ke + ie,
        momentum=momentum, boundary_violation=boundary_violation(state, op),
        mass=current_mass(state, op),
    )


def current_mass(state, op: HydroOperator) -> float:
    """``int rho dx`` on the current configuration with ``rho = rho0 J0 / J``."""
    qd, kin = op.qd, op.kin
    xe = np.asarray(state.x, dtype=float).reshape(-1, kin.dim)[kin.elem_dofs]
    det, _ = _det_inv(np.einsum("eai,qak->eqik", xe, qd.w_grads, optimize=True))
    rho = qd.rho0_detJ0 / det
    return float(np.sum(rho * det * qd.weights))


def _wall_geometry(x, qd, kin, mask):
    xf = np.asarray(x, dtype=float).reshape(-1, kin.dim)[kin.elem_dofs[qd.face_elem[mask]]]
    jac = np.einsum("fai,fqak->fqik", xf, qd.bw_grads[mask], optimize=True)
    tangent = np.einsum("fqik,fk->fqi", jac, FACE_TANGENTS_2D[qd.face_id[mask]])
    tlen = np.linalg.norm(tangent, axis=-1)
    normal = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1) / tlen[..., None]
    return normal, tlen * qd.face_w1d


def _tag_mask(qd, tags) -> np.ndarray:
    if tags is None:
        return np.ones(qd.face_elem.shape, dtype=bool)
    return np.isin(qd.face_tag, np.atleast_1d(tags))


def boundary_violation(state, op: HydroOperator, tags=None) -> float:
    """``sqrt(int_Gamma(t) (v.n)^2)`` over wall faces, optionally restricted to ``tags``."""
    qd, kin = op.qd, op.kin
    mask = _tag_mask(qd, tags)
    if not mask.any():
        return 0.0
    normal, dgamma = _wall_geometry(state.x, qd, kin, mask)
    vf = np.asarray(state.v, dtype=float).reshape(-1, kin.dim)[kin.elem_dofs[qd.face_elem[mask]]]
    v_pt = np.einsum("fqa,fai->fqi", qd.bw_vals[mask], vf)
    vn = np.einsum("fqi,fqi->fq", v_pt, normal)
    return float(np.sqrt(np.sum(vn * vn * dgamma)))


def wall_momentum_flux(state, op: HydroOperator) -> np.ndarray:
    """``int_Gamma(t) (n.sigma n - beta rho c_s v.n) n dGamma`` at ``state``.

    This is the net force the wall terms exert on the body.  It is integrated
    directly on the faces, without going through the assembled force blocks.
    """
    qd = op.qd
    if qd.face_elem.size == 0 or qd.mode != "weak":
        return np.zeros(op.kin.dim)
    ff = face_fields(state.x, state.v, state.e, qd, op.gas, op.visc, op.spaces)
    sn = np.einsum("fqi,fqij,fqj->fq", ff.normal, ff.fields.sigma, ff.normal)
    vn = np.einsum("fqi,fqi->fq", ff.v, ff.normal)
    density = (sn - qd.beta * ff.fields.rho * ff.fields.cs * vn) * ff.dgamma
    return np.einsum("fq,fqi->i", density, ff.normal)


def penalty_momentum(op: HydroOperator, dv) -> np.ndarray:
    """``int_Gamma0 alpha0 rho_max L (dv.n0) n0 dGamma0``: momentum stored in the
    initial-boundary mass block by a velocity increment ``dv``."""
    qd, kin = op.qd, op.kin
    if qd.face_elem.size == 0:
        return np.zeros(kin.dim)
    dvf = np.asarray(dv, dtype=float).reshape(-1, kin.dim)[kin.elem_dofs[qd.face_elem]]
    dv_pt = np.einsum("fqa,fai->fqi", qd.bw_vals, dvf)
    dvn = np.einsum("fqi,fqi->fq", dv_pt, qd.n0)
    coef = qd.alpha0 * qd.rho_max * qd.bbox_perimeter * qd.surf0_weight
    return np.einsum("fq,fqi->i", coef * dvn, qd.n0)


def predicted_momentum_change(old, new, op: HydroOperator) -> np.ndarray:
    """Volume momentum change over one step predicted from wall integrals alone.

    Summing the momentum equation over all nodes cancels the interior stress
    divergence, leaving ``dt`` times the wall flux at the midpoint state minus
    the momentum absorbed by the initial-boundary mass block.
    """
    if new.half is None:
        raise ValueError("state does not carry its midpoint")
    dt = new.t - old.t if new.dt == 0 else new.dt
    return dt * wall_momentum_flux(new.half, op) - penalty_momentum(op, new.v - old.v)


# --- point location and shock front ------------------------------------------

class PointLocator:
    """Locate physical points in a (possibly moved) high-order mesh.

    Candidates are the elements with the nearest centroids; each candidate is
    tested by Newton iteration on its reference map.
    """

    def __init__(self, kin, x, n_candidates: int = 9):
        self.kin = kin
        self.x = np.asarray(x, dtype=float).reshape(-1, kin.dim)
        self.xe = self.x[kin.elem_dofs]
        self.tree = cKDTree(self.xe.mean(axis=1))
        self.n_cand = min(n_candidates, kin.elem_dofs.shape[0])
        # node bounding boxes, padded because curved edges may bulge past the nodes
        lo, hi = self.xe.min(axis=1), self.xe.max(axis=1)
        pad = 0.1 * (hi - lo).max(axis=1, keepdims=True)
        self.box_lo, self.box_hi = lo - pad, hi + pad

    def locate(self, points, tol: float = 1e-10, iters: int = 25):
        """Return ``(elem, ref, found)``; ``elem`` is -1 where not found."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        _, cand = self.tree.query(pts, k=self.n_cand)
        cand = np.asarray(cand).reshape(n, -1)
        elem = np.full(n, -1, dtype=np.int64)
        ref = np.full((n, self.kin.dim), np.nan)
        for c in range(cand.shape[1]):
            todo = np.flatnonzero(elem < 0)
            if todo.size == 0:
                break
            ce = cand[todo, c]
            inbox = np.all((pts[todo] >= self.box_lo[ce]) & (pts[todo] <= self.box_hi[ce]), axis=1)
            todo, ce = todo[inbox], ce[inbox]
            if todo.size == 0:
                continue
            xi, ok = self._newton(ce, pts[todo], tol, iters)
            elem[todo[ok]] = ce[ok]
            ref[todo[ok]] = xi[ok]
        return elem, ref, elem >= 0

    def _newton(self, elems, pts, tol, iters):
        xe = self.xe[elems]
        xi = np.full((len(elems), self.kin.dim), 0.5)
        scale = np.ptp(self.x, axis=0).max()
        for _ in range(iters):
            vals, grads = eval_basis(self.kin.basis, xi)
            xp = np.einsum("na,nai->ni", vals, xe)
            jac = np.einsum("nai,nak->nik", xe, grads)
            det, jinv = _det_inv(jac)
            bad = ~(det > 0)
            jinv[bad] = 0.0
            step = np.einsum("nik,nk->ni", jinv, pts - xp)
            xi = np.clip(xi + step, -0.5, 1.5)
            if np.abs(step).max() < 1e-14:
                break
        vals, _ = eval_basis(self.kin.basis, xi)
        res = np.linalg.norm(np.einsum("na,nai->ni", vals, xe) - pts, axis=-1)
        eps = 1e-9
        inside = np.all((xi >= -eps) & (xi <= 1 + eps), axis=-1)
        return np.clip(xi, 0.0, 1.0), inside & (res <= tol * max(scale, 1.0) * 1e3)


def density_at_points(state, op: HydroOperator, points) -> np.ndarray:
    """``rho0 J0 / J`` at physical points of the current configuration; NaN outside."""
    kin = op.kin
    loc = PointLocator(kin, state.x)
    elem, ref, found = loc.locate(points)
    rho = np.full(len(elem), np.nan)
    if not found.any():
        return rho
    e, xi = elem[found], ref[found]
    vals, grads = eval_basis(kin.basis, xi)
    x0e = kin.x0[kin.elem_dofs[e]]
    jac0 = np.einsum("nai,nak->nik", x0e, grads)
    jac = np.einsum("nai,nak->nik", loc.xe[e], grads)
    det0, _ = _det_inv(jac0)
    det, _ = _det_inv(jac)
    x0 = np.einsum("na,nai->ni", vals, x0e)
    rho[found] = _rho0_values(op.rho0, x0) * det0 / det
    return rho


@dataclass(frozen=True)
class ShockFront:
    radius: float               # ray median, NaN before a shock forms
    ray_radii: np.ndarray       # NaN for flagged rays
    spacing: float

    @property
    def formed(self) -> bool:
        return bool(np.isfinite(self.radius))


def ray_density_maximum(density, origin, angles, r_max: float, n_samples: int = 400,
                        flat_tol: float = 1e-8) -> tuple[np.ndarray, float]:
    """Radius of maximum density along each ray.

    ``density`` maps points ``(n, 2)`` to values, NaN outside the domain.  A
    ray whose samples are flat to ``flat_tol`` (relative) or whose maximum
    sits at the first sample is flagged with NaN.  Returns the radii and the
    sample spacing.
    """
    origin = np.asarray(origin, dtype=float)
    angles = np.asarray(angles, dtype=float)
    radii = r_max * np.arange(1, n_samples + 1) / n_samples
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    pts = origin + radii[None, :, None] * dirs[:, None, :]
    rho = np.asarray(density(pts.reshape(-1, 2)), dtype=float).reshape(len(angles), n_samples)
    out = np.full(len(angles), np.nan)
    for j, row in enumerate(rho):
        ok = np.isfinite(row)
        if ok.sum() < 2:
            continue
        vals = row[ok]
        if vals.max() - vals.min() <= flat_tol * abs(vals.max()):
            continue
        i = int(np.argmax(vals))
        if i == 0:
            continue
        out[j] = radii[ok][i]
    return out, r_max / n_samples


def shock_front_radius(state, op: HydroOperator, n_rays: int = 16, n_samples: int = 400,
                       origin=(0.0, 0.0), angle_range=(0.0, 0.5 * np.pi)) -> ShockFront:
    """Ray-median radius of the density maximum about ``origin``.

    Rays are spread uniformly over the open ``angle_range`` and sampled out to
    the farthest current node.
    """
    lo, hi = angle_range
    angles = lo + (hi - lo) * (np.arange(n_rays) + 0.5) / n_rays
    x = np.asarray(state.x, dtype=float).reshape(-1, op.kin.dim)
    r_max = float(np.linalg.norm(x - np.asarray(origin), axis=-1).max())
    radii, spacing = ray_density_maximum(lambda p: density_at_points(state, op, p),
                                         origin, angles, r_max, n_samples)
    radius = float(np.nanmedian(radii)) if np.isfinite(radii).any() else float("nan")
    return ShockFront(radius, radii, spacing)


# --- Sedov self-similar reference ----------------------------------------------

_SPHERE_FACTOR = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}


def _sedov_rhs(lam, y, gamma, nu, delta):
    u, r, p = y
    a = np.array([
        [r, u - lam, 0.0],
        [u - lam, 0.0, 1.0 / r],
        [0.0, -gamma * (u - lam) / r, (u - lam) / p],
    ])
    b = np.array([
        -(nu - 1) * r * u / lam,
        (1.0 - delta) / delta * u,
        2.0 * (1.0 - delta) / delta,
    ])
    return np.linalg.solve(a, b)


@dataclass(frozen=True)
class SedovReference:
    """Self-similar point blast in ``dim`` dimensions.

    ``E_total`` is the energy of the full, unbounded blast (per unit length in
    2D).  The shock radius is ``xi0 (E t^2 / rho0)^(1/(dim+2))``.
    """

    gamma: float = 1.4
    E_total: float = 1.0
    rho0: float = 1.0
    dim: int = 2
    lam_min: float = field(default=1e-6, repr=False)

    def __post_init__(self):
        if self.dim not in _SPHERE_FACTOR:
            raise ValueError("dim must be 1, 2 or 3")
        if not (self.gamma > 1 and self.E_total > 0 and self.rho0 > 0):
            raise ValueError("need gamma > 1, E_total > 0, rho0 > 0")

    @cached_property
    def profile(self):
        """Dense solution of the similarity ODEs from the shock inward."""
        g, nu = self.gamma, self.dim
        delta = 2.0 / (nu + 2)
        y0 = [2.0 / (g + 1), (g + 1) / (g - 1), 2.0 / (g + 1)]
        sol = solve_ivp(_sedov_rhs, (1.0, self.lam_min), y0, args=(g, nu, delta),
                        method="LSODA", rtol=1e-11, atol=1e-14, dense_output=True)
        if not sol.success:
            raise RuntimeError(f"Sedov similarity integration failed: {sol.message}")
        return sol

    @cached_property
    def xi0(self) -> float:
        g, nu = self.gamma, self.dim
        delta = 2.0 / (nu + 2)
        sol = self.profile

        def integrand(lam):
            u, r, p = sol.sol(lam)
            return (0.5 * r * u * u + p / (g - 1)) * lam ** (nu - 1)

        energy, _ = quad(integrand, self.lam_min, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float((_SPHERE_FACTOR[nu] * delta ** 2 * energy) ** (-1.0 / (nu + 2)))


def sedov_reference_radius(ref: SedovReference, t: float) -> float:
    if t < 0:
        raise ValueError("time must be nonnegative")
    return ref.xi0 * (ref.E_total * t * t / ref.rho0) ** (1.0 / (ref.dim + 2))
