"""Mass matrices, generalized force operator and mass solves.

The force operator couples kinematic and thermodynamic dofs.  It is never
assembled globally: every evaluation builds the small per-element blocks
``F_e[a, i, l]`` (kinematic node ``a``, component ``i``, energy dof ``l``)
from the current state, including the free-slip wall terms on boundary
faces.  ``F @ 1`` (momentum) and ``F.T @ u`` (energy) are then contractions of
the same blocks, which keeps the two sides exact transposes of each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    FACE_TANGENTS_2D,
    KinematicSpace,
    ThermodynamicSpace,
    eval_basis,
    face_ref_points,
    gauss_legendre_points,
    gauss_rule,
)
from .mesh import Mesh, TangledElementError, bounding_box_perimeter, is_axis_aligned
from .physics import IdealGas, ViscositySettings, pressure, sound_speed, viscosity_coefficient

log = logging.getLogger(__name__)

BC_WEAK = "weak"
BC_STRONG = "strong_axis_aligned"


MASS_SOLVERS = ("direct", "cg")


class SolverError(RuntimeError):
    pass


def penalty_CI(k: int, d: int, elem_kind: str = "tensor") -> float:
    """Polynomial-degree dependent penalty scale (inverse-inequality constant)."""
    if k < 1:
        raise ValueError("polynomial degree must be >= 1")
    if elem_kind == "tensor":
        return float((k + 1) ** 2)
    if elem_kind == "simplex":
        return (k + 1) * (k + d) / d
    raise ValueError(f"unknown element kind {elem_kind!r}")


@dataclass(frozen=True)
class BoundaryParams:
    """Wall treatment.

    ``beta=None`` selects ``20 * C_I``.  ``wall_tags=None`` makes every
    boundary face a free-slip wall.
    """

    mode: str = BC_WEAK
    beta: float | None = None
    wall_tags: tuple[int, ...] | None = None
    mass_penalty: bool = True

    def __post_init__(self):
        if self.mode not in (BC_WEAK, BC_STRONG):
            raise ValueError(f"unknown boundary mode {self.mode!r}")


# --- small dense helpers (2D closed forms are much faster than linalg) -------

def _det_inv(jac):
    if jac.shape[-1] == 2:
        a, b = jac[..., 0, 0], jac[..., 0, 1]
        c, d = jac[..., 1, 0], jac[..., 1, 1]
        det = a * d - b * c
        inv = np.empty_like(jac)
        inv[..., 0, 0] = d / det
        inv[..., 0, 1] = -b / det
        inv[..., 1, 0] = -c / det
        inv[..., 1, 1] = a / det
        return det, inv
    return np.linalg.det(jac), np.linalg.inv(jac)


def _min_singular_value(jac):
    if jac.shape[-1] == 2:
        # 2x2 closed form: sigma_max = (|(a+d, c-b)| + |(a-d, b+c)|) / 2, sigma_min = |det| / sigma_max
        a, b = jac[..., 0, 0], jac[..., 0, 1]
        c, d = jac[..., 1, 0], jac[..., 1, 1]
        smax = 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(smax > 0, np.abs(a * d - b * c) / smax, 0.0)
    return np.linalg.svd(jac, compute_uv=False)[..., -1]


# --- frozen quadrature data --------------------------------------------------

@dataclass
class QuadData:
    """Quantities frozen at the initial configuration.

    Volume arrays are shaped ``(n_elems, n_qp)``; boundary arrays
    ``(n_wall_faces, n_face_qp)``.
    """

    dim: int
    k: int
    weights: np.ndarray
    w_vals: np.ndarray          # (nq, nloc)
    w_grads: np.ndarray         # (nq, nloc, d)
    phi: np.ndarray             # (nq, nl)
    rho0: np.ndarray
    det_j0: np.ndarray
    rho0_detJ0: np.ndarray
    rho0_detJ0_w: np.ndarray
    jac0_inv: np.ndarray
    l0: np.ndarray              # (ne,)
    rho_max: float
    bbox_perimeter: float
    c_i: float
    beta: float
    mode: str
    # wall faces
    face_elem: np.ndarray
    face_id: np.ndarray
    face_tag: np.ndarray
    face_w1d: np.ndarray
    bw_vals: np.ndarray         # (nf, nqf, nloc)
    bw_grads: np.ndarray        # (nf, nqf, nloc, d)
    bphi: np.ndarray            # (nf, nqf, nl)
    n0: np.ndarray              # (nf, nqf, d)
    surf0_weight: np.ndarray
    j_box: np.ndarray
    alpha0: np.ndarray
    b_rho0_detJ0: np.ndarray
    b_jac0_inv: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def total_mass(self) -> float:
        return float(self.rho0_detJ0_w.sum())


def _rho0_values(rho0, points: np.ndarray) -> np.ndarray:
    if callable(rho0):
        vals = np.asarray(rho0(points), dtype=float)
        return np.broadcast_to(vals, points.shape[:-1]).copy()
    return np.full(points.shape[:-1], float(rho0))


def init_quad_data(mesh: Mesh, spaces: tuple[KinematicSpace, ThermodynamicSpace],
                   rho0: float | Callable = 1.0, gas: IdealGas | None = None,
                   bc: BoundaryParams | None = None, quad_pts: int | None = None) -> QuadData:
    """Evaluate and freeze the initial-configuration data.

    ``rho0`` is a constant or a callable mapping points ``(..., d)`` to
    densities.  ``gas`` is accepted for interface symmetry; the frozen data do
    not depend on it.
    """
    kin, thermo = spaces
    bc = bc or BoundaryParams()
    d, k = kin.dim, kin.degree
    nq1 = quad_pts or k + 2
    rule = gauss_rule(nq1, d)
    w_vals, w_grads = eval_basis(kin.basis, rule.points)
    phi, _ = eval_basis(thermo.basis, rule.points)

    xe0 = kin.x0[kin.elem_dofs]
    jac0 = np.einsum("eai,qak->eqik", xe0, w_grads)
    det_j0, jac0_inv = _det_inv(jac0)
    if np.any(det_j0 <= 0):
        raise TangledElementError("initial mesh has a nonpositive Jacobian")
    xq = np.einsum("qa,eai->eqi", w_vals, xe0)
    rho0_q = _rho0_values(rho0, xq)
    if np.any(rho0_q <= 0):
        raise ValueError("initial density must be positive")
    rho0_detJ0 = rho0_q * det_j0
    vol = np.sum(det_j0 * rule.weights, axis=1)
    l0 = vol ** (1.0 / d) / k

    c_i = penalty_CI(k, d, "tensor")
    beta = 20.0 * c_i if bc.beta is None else float(bc.beta)
    L = bounding_box_perimeter(mesh)

    faces = mesh.bdry_faces
    tags = mesh.bdry_tags
    if bc.wall_tags is not None:
        keep = np.isin(tags, bc.wall_tags)
        faces, tags = faces[keep], tags[keep]
    s1, w1 = gauss_legendre_points(nq1)
    face_vals, face_grads, face_phi = [], [], []
    for f in range(4):
        ref = face_ref_points(f, s1)
        v, g = eval_basis(kin.basis, ref)
        ph, _ = eval_basis(thermo.basis, ref)
        face_vals.append(v)
        face_grads.append(g)
        face_phi.append(ph)
    face_vals, face_grads, face_phi = map(np.array, (face_vals, face_grads, face_phi))
    fe, fid = faces[:, 0], faces[:, 1]
    bw_vals = face_vals[fid]
    bw_grads = face_grads[fid]
    bphi = face_phi[fid]
    xf0 = xe0[fe]
    bjac0 = np.einsum("fai,fqak->fqik", xf0, bw_grads)
    bdet0, bjac0_inv = _det_inv(bjac0)
    tangent = np.einsum("fqik,fk->fqi", bjac0, FACE_TANGENTS_2D[fid])
    tlen = np.linalg.norm(tangent, axis=-1)
    n0 = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1) / tlen[..., None]
    surf0 = tlen * w1
    bxq = np.einsum("fqa,fai->fqi", bw_vals, xf0)
    b_rho0 = _rho0_values(rho0, bxq)
    alpha0 = beta * L / bdet0 ** (1.0 / d)

    qd = QuadData(
        dim=d, k=k, weights=rule.weights, w_vals=w_vals, w_grads=w_grads, phi=phi,
        rho0=rho0_q, det_j0=det_j0, rho0_detJ0=rho0_detJ0,
        rho0_detJ0_w=rho0_detJ0 * rule.weights, jac0_inv=jac0_inv, l0=l0,
        rho_max=float(max(rho0_q.max(), b_rho0.max() if b_rho0.size else 0.0)),
        bbox_perimeter=L, c_i=c_i, beta=beta, mode=bc.mode,
        face_elem=fe, face_id=fid, face_tag=tags, face_w1d=w1,
        bw_vals=bw_vals, bw_grads=bw_grads, bphi=bphi, n0=n0, surf0_weight=surf0,
        j_box=bdet0, alpha0=alpha0, b_rho0_detJ0=b_rho0 * bdet0, b_jac0_inv=bjac0_inv,
    )
    if bc.mode == BC_STRONG:
        if not is_axis_aligned(mesh):
            raise ValueError("strong_axis_aligned walls need an axis-aligned boundary")
        qd.constrained = _axis_aligned_constraints(kin, qd)
        qd.alpha0 = np.zeros_like(alpha0)
        qd.beta = 0.0
    elif not bc.mass_penalty:
        qd.alpha0 = np.zeros_like(alpha0)
    for name in ("rho0_detJ0_w", "rho0_detJ0", "jac0_inv", "l0", "n0", "surf0_weight", "alpha0"):
        getattr(qd, name).setflags(write=False)
    return qd


def _axis_aligned_constraints(kin: KinematicSpace, qd: QuadData) -> np.ndarray:
    """Flat velocity dof indices whose normal component is fixed to zero."""
    from .fem import face_local_nodes

    dofs = set()
    for f, (e, fid) in enumerate(zip(qd.face_elem, qd.face_id)):
        comp = int(np.argmax(np.abs(qd.n0[f, 0])))
        for a in kin.elem_dofs[e, face_local_nodes(int(fid), kin.degree)]:
            dofs.add(int(a) * kin.dim + comp)
    return np.array(sorted(dofs), dtype=np.int64)


# --- mass matrices ------------------------------------------------------------

@dataclass
class KinematicMassMatrix:
    """Kinematic mass matrix with the initial-boundary penalty block.

    ``matrix = volume + boundary``; ``volume`` is the plain density-weighted
    mass and ``boundary`` the wall block built on the initial boundary.
    """

    matrix: sp.csr_matrix
    volume: sp.csr_matrix
    boundary: sp.csr_matrix
    constrained: np.ndarray
    free: np.ndarray
    free_matrix: sp.csr_matrix
    inv_diag: np.ndarray
    rtol: float = 1e-12
    maxiter: int = 1000
    last_iterations: int = 0
    solver: str = "direct"
    _lu: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def factor(self):
        """Sparse LU of the free block, computed once; the matrix never changes."""
        if self._lu is None:
            self._lu = spla.splu(self.free_matrix.tocsc())
        return self._lu


def _scalar_mass_entries(conn, vals, measure):
    """COO triplets of ``sum_q measure * W_a W_b`` per element."""
    local = np.einsum("eq,qa,qb->eab", measure, vals, vals)
    rows = np.repeat(conn, conn.shape[1], axis=1).ravel()
    cols = np.tile(conn, (1, conn.shape[1])).ravel()
    return rows, cols, local.ravel()


def assemble_mass_kinematic(spaces, quad_data: QuadData, x=None) -> KinematicMassMatrix:
    """Assemble the ``(n_V d) x (n_V d)`` kinematic mass matrix.

    With ``x`` (current node positions) the volume block is integrated on the
    current configuration using the pointwise density ``rho0 J0 / J``; the
    result must equal the initial one, which is what makes the matrix
    constant in time.  The boundary block always lives on the initial
    boundary.
    """
    kin = spaces[0] if isinstance(spaces, tuple) else spaces
    qd = quad_data
    d, n = kin.dim, kin.n_dofs
    if x is None:
        measure = qd.rho0_detJ0_w
    else:
        xe = np.asarray(x, dtype=float).reshape(-1, d)[kin.elem_dofs]
        jac = np.einsum("eai,qak->eqik", xe, qd.w_grads)
        det, _ = _det_inv(jac)
        rho = qd.rho0_detJ0 / det
        measure = rho * det * qd.weights
    r, c, v = _scalar_mass_entries(kin.elem_dofs, qd.w_vals, measure)
    scalar = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    volume = sp.kron(scalar, sp.identity(d), format="csr")

    # boundary block: alpha0 rho_max L <W_a n0_i, W_b n0_j> on the initial boundary
    coef = qd.alpha0 * qd.rho_max * qd.bbox_perimeter * qd.surf0_weight
    if qd.face_elem.size:
        fd = kin.elem_dofs[qd.face_elem]
        local = np.einsum("fq,fqa,fqb,fqi,fqj->faibj", coef, qd.bw_vals, qd.bw_vals, qd.n0, qd.n0)
        nl = fd.shape[1]
        gi = (fd[:, :, None] * d + np.arange(d)[None, None, :])
        rows = np.broadcast_to(gi[:, :, :, None, None], (len(fd), nl, d, nl, d)).ravel()
        cols = np.broadcast_to(gi[:, None, None, :, :], (len(fd), nl, d, nl, d)).ravel()
        boundary = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n * d, n * d)).tocsr()
    else:
        boundary = sp.csr_matrix((n * d, n * d))
    boundary.eliminate_zeros()
    matrix = (volume + boundary).tocsr()

    constrained = qd.constrained
    free = np.setdiff1d(np.arange(n * d), constrained)
    free_matrix = matrix[free][:, free].tocsr()
    diag = free_matrix.diagonal()
    if np.any(diag <= 0):
        raise SolverError("kinematic mass matrix has a nonpositive diagonal")
    return KinematicMassMatrix(matrix, volume, boundary, constrained, free, free_matrix, 1.0 / diag)


@dataclass
class ThermoMassMatrix:
    blocks: np.ndarray      # (ne, nl, nl)
    inv_blocks: np.ndarray

    def matvec(self, e):
        ne, nl, _ = self.blocks.shape
        return np.einsum("eml,el->em", self.blocks, np.asarray(e).reshape(ne, nl)).ravel()

    def to_sparse(self) -> sp.csr_matrix:
        return sp.block_diag(list(self.blocks), format="csr")


def assemble_mass_thermo(spaces, quad_data: QuadData, x=None) -> ThermoMassMatrix:
    kin, thermo = spaces
    qd = quad_data
    if x is None:
        measure = qd.rho0_detJ0_w
    else:
        xe = np.asarray(x, dtype=float).reshape(-1, kin.dim)[kin.elem_dofs]
        det, _ = _det_inv(np.einsum("eai,qak->eqik", xe, qd.w_grads))
        measure = (qd.rho0_detJ0 / det) * det * qd.weights
    blocks = np.einsum("eq,qm,ql->eml", measure, qd.phi, qd.phi)
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular thermodynamic mass block (degenerate element)") from exc
    return ThermoMassMatrix(blocks, np.linalg.inv(blocks))


def pcg(matrix, rhs, inv_diag, x0=None, rtol=1e-12, maxiter=1000):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations)``."""
    b = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matrix @ x if x0 is not None else b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    tol = rtol * bnorm
    for it in range(1, maxiter + 1):
        if np.linalg.norm(r) <= tol:
            return x, it - 1
        ap = matrix @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    res = np.linalg.norm(r)
    if res <= tol:
        return x, maxiter
    raise SolverError(f"CG did not converge in {maxiter} iterations "
                      f"(relative residual {res / bnorm:.3e})")


def solve_mass_kinematic(mass: KinematicMassMatrix, rhs, x0=None) -> np.ndarray:
    """Solve ``M_V a = rhs``; constrained components of ``a`` are zero."""
    rhs = np.asarray(rhs, dtype=float)
    shape = rhs.shape
    flat = rhs.reshape(-1)
    out = np.zeros_like(flat)
    if mass.solver == "direct":
        sol = mass.factor().solve(flat[mass.free])
        mass.last_iterations = 0
    else:
        guess = None if x0 is None else np.asarray(x0, dtype=float).reshape(-1)[mass.free]
        sol, its = pcg(mass.free_matrix, flat[mass.free], mass.inv_diag, guess,
                       mass.rtol, mass.maxiter)
        mass.last_iterations = its
    out[mass.free] = sol
    return out.reshape(shape)


def solve_mass_thermo(mass: ThermoMassMatrix, rhs) -> np.ndarray:
    ne, nl, _ = mass.blocks.shape
    r = np.asarray(rhs, dtype=float).reshape(ne, nl)
    return np.einsum("eml,el->em", mass.inv_blocks, r).ravel()


# --- force operator ----------------------------------------------------------------

@dataclass
class ForceResult:
    """Per-element force blocks at one state plus time-step diagnostics.

    ``blocks[e, a, i, l]`` is the entry of ``F`` for kinematic node ``a`` of
    element ``e``, component ``i`` and local energy dof ``l``.
    """

    blocks: np.ndarray
    momentum_rhs: np.ndarray        # (n_V, d) = -F 1 + B
    elem_dofs: np.ndarray
    n_dofs: int
    max_char_speed: float
    min_length: float
    dt_unit: float                  # stable step for cfl = 1
    min_det: float

    def energy_rhs(self, u) -> np.ndarray:
        """``F^T u + R`` for a velocity coefficient array ``u``."""
        ue = np.asarray(u, dtype=float).reshape(self.n_dofs, -1)[self.elem_dofs]
        return np.einsum("eail,eai->el", self.blocks, ue).ravel()

    def energy_rhs_factory(self) -> Callable[[np.ndarray], np.ndarray]:
        return self.energy_rhs


@dataclass
class PointFields:
    """Pointwise state at a set of quadrature points."""

    rho: np.ndarray
    e: np.ndarray
    p: np.ndarray
    cs: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    grad_v: np.ndarray
    det: np.ndarray
    jac: np.ndarray


def _stress(gas, visc, rho, e_pt, grad_v, jac, jac0_inv, l0):
    p = pressure(gas, rho, e_pt)
    cs = sound_speed(gas, e_pt)
    mu, s_art = viscosity_coefficient(rho, cs, grad_v, jac, jac0_inv, l0, visc)
    sigma = s_art.copy()
    d = sigma.shape[-1]
    for i in range(d):
        sigma[..., i, i] -= p
    return p, cs, mu, sigma


def volume_fields(x, v, e, qd: QuadData, gas: IdealGas, visc: ViscositySettings,
                  spaces) -> tuple[PointFields, np.ndarray]:
    """Fields at every volume quadrature point and physical basis gradients."""
    kin, thermo = spaces
    d = kin.dim
    xe = x.reshape(-1, d)[kin.elem_dofs]
    ve = v.reshape(-1, d)[kin.elem_dofs]
    ee = np.asarray(e).reshape(-1)[thermo.elem_dofs]
    jac = np.einsum("eai,qak->eqik", xe, qd.w_grads, optimize=True)
    det, jinv = _det_inv(jac)
    if not np.all(det > 0):
        if np.any(np.isnan(det)):
            raise FloatingPointError("NaN in node positions")
        raise TangledElementError(f"nonpositive Jacobian {np.nanmin(det):.3e}")
    grads = qd.w_grads[None] @ jinv
    grad_v = np.swapaxes(ve, 1, 2)[:, None] @ grads
    rho = qd.rho0_detJ0 / det
    e_pt = ee @ qd.phi.T
    p, cs, mu, sigma = _stress(gas, visc, rho, e_pt, grad_v, jac, qd.jac0_inv, qd.l0[:, None])
    return PointFields(rho, e_pt, p, cs, mu, sigma, grad_v, det, jac), grads


@dataclass
class FaceFields:
    normal: np.ndarray      # (nf, nqf, d)
    dgamma: np.ndarray      # surface measure x weight
    v: np.ndarray           # (nf, nqf, d)
    fields: PointFields


def face_fields(x, v, e, qd: QuadData, gas, visc, spaces) -> FaceFields:
    """One-sided fields at wall-face quadrature points of the current configuration."""
    kin, thermo = spaces
    d = kin.dim
    fe = qd.face_elem
    xf = x.reshape(-1, d)[kin.elem_dofs[fe]]
    vf = v.reshape(-1, d)[kin.elem_dofs[fe]]
    ef = np.asarray(e).reshape(-1)[thermo.elem_dofs[fe]]
    jac = np.einsum("fai,fqak->fqik", xf, qd.bw_grads)
    det, jinv = _det_inv(jac)
    if np.any(det <= 0):
        raise TangledElementError(f"nonpositive Jacobian {det.min():.3e} on a wall face")
    tangent = np.einsum("fqik,fk->fqi", jac, FACE_TANGENTS_2D[qd.face_id])
    tlen = np.linalg.norm(tangent, axis=-1)
    normal = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1) / tlen[..., None]
    grads = qd.bw_grads @ jinv
    grad_v = np.swapaxes(vf, 1, 2)[:, None] @ grads
    v_pt = np.einsum("fqa,fai->fqi", qd.bw_vals, vf)
    rho = qd.b_rho0_detJ0 / det
    e_pt = np.einsum("fql,fl->fq", qd.bphi, ef)
    p, cs, mu, sigma = _stress(gas, visc, rho, e_pt, grad_v, jac, qd.b_jac0_inv,
                               qd.l0[fe][:, None])
    pf = PointFields(rho, e_pt, p, cs, mu, sigma, grad_v, det, jac)
    return FaceFields(normal, tlen * qd.face_w1d, v_pt, pf)


def wall_traction_density(ff: FaceFields, beta: float) -> np.ndarray:
    """Scalar multiplying ``n_i W_a phi_l`` in the wall terms, times the surface weight."""
    sn = np.einsum("fqi,fqij,fqj->fq", ff.normal, ff.fields.sigma, ff.normal)
    vn = np.einsum("fqi,fqi->fq", ff.v, ff.normal)
    return (-sn + beta * ff.fields.rho * ff.fields.cs * vn) * ff.dgamma


def evaluate_force(state, quad_data: QuadData, gas: IdealGas, visc: ViscositySettings,
                   spaces, body_force=None) -> ForceResult:
    """Evaluate the force blocks at ``state`` (any object with ``x``, ``v``, ``e``).

    ``body_force`` is an optional ``(n_V, d)`` array added as ``B``; it
    defaults to zero.
    """
    kin, thermo = spaces
    qd = quad_data
    d = kin.dim
    x = np.asarray(state.x, dtype=float)
    v = np.asarray(state.v, dtype=float)
    e = np.asarray(state.e, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(e))):
        raise FloatingPointError("non-finite velocity or energy")

    pf, grads = volume_fields(x, v, e, qd, gas, visc, spaces)
    stress_w = pf.sigma * (pf.det * qd.weights)[..., None, None]
    t = grads @ np.swapaxes(stress_w, -1, -2)
    blocks = np.einsum("eqai,ql->eail", t, qd.phi, optimize=True)

    if qd.mode == BC_WEAK and qd.face_elem.size:
        ff = face_fields(x, v, e, qd, gas, visc, spaces)
        coef = wall_traction_density(ff, qd.beta)
        fb = np.einsum("fq,fqi,fqa,fql->fail", coef, ff.normal, qd.bw_vals, qd.bphi)
        np.add.at(blocks, qd.face_elem, fb)

    f1 = blocks.sum(axis=-1)            # (ne, nloc, d)
    rhs = np.zeros((kin.n_dofs, d))
    flat_dofs = kin.elem_dofs.ravel()
    for i in range(d):
        rhs[:, i] = -np.bincount(flat_dofs, weights=f1[..., i].ravel(), minlength=kin.n_dofs)
    if body_force is not None:
        rhs += body_force

    # time-step diagnostics from volume points
    hmin = _min_singular_value(pf.jac) / kin.degree
    speed = pf.cs + pf.mu / (pf.rho * hmin)
    with np.errstate(divide="ignore"):
        dt_pts = np.where(speed > 0, hmin / speed, np.inf)
    return ForceResult(
        blocks=blocks, momentum_rhs=rhs, elem_dofs=kin.elem_dofs, n_dofs=kin.n_dofs,
        max_char_speed=float(speed.max()), min_length=float(hmin.min()),
        dt_unit=float(dt_pts.min()), min_det=float(pf.det.min()),
    )


class HydroOperator:
    """Everything the time integrator needs, built once per problem."""

    def __init__(self, mesh: Mesh, spaces, gas: IdealGas, visc: ViscositySettings,
                 bc: BoundaryParams | None = None, rho0: float | Callable = 1.0,
                 quad_pts: int | None = None, mass_solver: str = "direct"):
        self.mesh = mesh
        self.spaces = spaces
        self.gas = gas
        self.visc = visc
        self.bc = bc or BoundaryParams()
        self.rho0 = rho0
        self.qd = init_quad_data(mesh, spaces, rho0, gas, self.bc, quad_pts)
        if mass_solver not in MASS_SOLVERS:
            raise ValueError(f"mass_solver must be one of {MASS_SOLVERS}, got {mass_solver!r}")
        self.mass_v = assemble_mass_kinematic(spaces, self.qd)
        self.mass_v.solver = mass_solver
        self.mass_e = assemble_mass_thermo(spaces, self.qd)
        self.force_evaluations = 0

    @property
    def kin(self) -> KinematicSpace:
        return self.spaces[0]

    @property
    def thermo(self) -> ThermodynamicSpace:
        return self.spaces[1]

    def force(self, state) -> ForceResult:
        self.force_evaluations += 1
        return evaluate_force(state, self.qd, self.gas, self.visc, self.spaces)

    def acceleration(self, force: ForceResult, guess=None) -> np.ndarray:
        return solve_mass_kinematic(self.mass_v, force.momentum_rhs, guess)

    def energy_rate(self, force: ForceResult, u) -> np.ndarray:
        return solve_mass_thermo(self.mass_e, force.energy_rhs(u))
