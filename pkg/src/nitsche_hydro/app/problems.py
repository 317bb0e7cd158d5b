"""Benchmark problem setup: meshes, spaces, operator and Sedov initial state."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..diagnostics import SedovReference
from ..fem import build_spaces, eval_basis
from ..integrator import HydroState, StepControls
from ..mesh import (Mesh, make_cartesian, make_disc, make_square_with_hole, make_trapezoid,
                    read_mesh)
from ..operators import BoundaryParams, HydroOperator, assemble_mass_thermo, init_quad_data
from ..physics import IdealGas, ViscositySettings
from .config import RunConfig


def thermo_node_positions(spaces) -> np.ndarray:
    """Initial physical position of every thermodynamic dof, shape ``(n_E, d)``."""
    kin, thermo = spaces
    vals, _ = eval_basis(kin.basis, thermo.basis.nodes)
    pts = np.einsum("qa,eai->eqi", vals, kin.x0[kin.elem_dofs])
    out = np.empty((thermo.n_dofs, kin.dim))
    out[thermo.elem_dofs.ravel()] = pts.reshape(-1, kin.dim)
    return out


def init_sedov(mesh: Mesh, spaces, gas: IdealGas, E_total: float, origin=(0.0, 0.0),
               rho0: float = 1.0, mass_e=None) -> HydroState:
    """Point blast: all internal energy in the thermodynamic dof nearest ``origin``.

    The dof value is ``E_total`` over the row sum of ``M_E`` so that
    ``1^T M_E e = E_total``.  Ties go to the lowest index with a warning.
    """
    kin, thermo = spaces
    if E_total <= 0:
        raise ValueError("E_total must be positive")
    if mass_e is None:
        mass_e = assemble_mass_thermo(spaces, init_quad_data(mesh, spaces, rho0))
    pos = thermo_node_positions(spaces)
    dist = np.linalg.norm(pos - np.asarray(origin, dtype=float), axis=-1)
    scale = max(float(np.ptp(kin.x0, axis=0).max()), 1.0)
    close = np.flatnonzero(dist <= dist.min() + 1e-12 * scale)
    l_star = int(close[0])
    if close.size > 1:
        warnings.warn(f"{close.size} energy dofs are equally close to the blast origin; "
                      f"depositing in dof {l_star}", stacklevel=2)
    ne, nl, _ = mass_e.blocks.shape
    row_sums = mass_e.blocks.sum(axis=2).reshape(-1)
    e = np.zeros(thermo.n_dofs)
    e[l_star] = E_total / row_sums[l_star]
    return HydroState(kin.x0.copy(), np.zeros_like(kin.x0), e)


@dataclass
class Problem:
    config: RunConfig
    mesh: Mesh
    spaces: tuple
    op: HydroOperator
    state: HydroState
    controls: StepControls
    origin: tuple[float, float]
    angle_range: tuple[float, float]
    blast_fraction: float
    reference: SedovReference

    @property
    def deposited_energy(self) -> float:
        return self.config.blast_energy * self.blast_fraction


def build_mesh(cfg: RunConfig) -> tuple[Mesh, tuple[float, float], tuple[float, float], float]:
    """Mesh, blast origin, ray sector and the share of the blast inside the domain."""
    k, res = cfg.order, cfg.res
    quadrant = (0.0, 0.5 * math.pi)
    if cfg.problem == "sedov_square":
        return make_cartesian(res, res, [[0.0, 0.0], [1.0, 1.0]], geom_degree=k), (0.0, 0.0), quadrant, 0.25
    if cfg.problem == "sedov_trapezoid":
        corners = np.asarray(cfg.trapezoid_corners, dtype=float).reshape(4, 2)
        return make_trapezoid(res, res, corners, geom_degree=k), (0.0, 0.0), quadrant, 0.25
    if cfg.problem in ("sedov_hole_circle", "sedov_hole_square"):
        shape = "circle" if cfg.problem == "sedov_hole_circle" else "rotated_square"
        mesh = make_square_with_hole(shape, n_t=res, n_r=max(1, res // 2),
                                     geom_degree=max(k, 2), size=cfg.hole_size,
                                     angle_deg=cfg.hole_angle)
        return mesh, (0.0, 0.0), quadrant, 0.25
    if cfg.problem == "sedov_disc":
        n_azi = cfg.n_azi or 4 * res
        n_rad = cfg.n_rad or max(1, res // 2)
        mesh = make_disc(n_rad, n_azi, 1.0, geom_degree=max(k, 2))
        return mesh, (0.0, 0.0), (0.0, 2.0 * math.pi), 1.0
    mesh = read_mesh(cfg.mesh_file)
    return mesh, (0.0, 0.0), quadrant, 1.0


def build_problem(cfg: RunConfig) -> Problem:
    mesh, origin, sector, fraction = build_mesh(cfg)
    if cfg.blast_fraction > 0:
        fraction = cfg.blast_fraction
    spaces = build_spaces(mesh, cfg.order, thermo_nodes=cfg.thermo_nodes)
    gas = IdealGas(cfg.gamma)
    visc = ViscositySettings(cfg.q1, cfg.q2, cfg.viscosity)
    bc = BoundaryParams(mode=cfg.bc, beta=cfg.beta if cfg.beta > 0 else None)
    op = HydroOperator(mesh, spaces, gas, visc, bc, rho0=cfg.rho0, quad_pts=cfg.quad_pts or None,
                       mass_solver=cfg.mass_solver)
    state = init_sedov(mesh, spaces, gas, cfg.blast_energy * fraction, origin, cfg.rho0, op.mass_e)
    controls = StepControls(cfl=cfg.cfl, dt_init=cfg.dt_init, dt_max=cfg.dt_max,
                            growth=cfg.growth, shrink=cfg.shrink, t_final=cfg.t_final,
                            max_rejections=cfg.max_rejections)
    reference = SedovReference(gamma=cfg.gamma, E_total=cfg.blast_energy, rho0=cfg.rho0, dim=2)
    return Problem(cfg, mesh, spaces, op, state, controls, origin, sector, fraction, reference)
