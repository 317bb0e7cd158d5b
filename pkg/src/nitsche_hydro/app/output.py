"""CSV history and legacy ASCII VTK snapshots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diagnostics import conservation_report, shock_front_radius
from ..fem import eval_basis
from ..operators import HydroOperator, _det_inv, _rho0_values

HISTORY_COLUMNS = ("step", "t", "dt", "ke", "ke_penalty", "ie", "etotal", "px", "py",
                   "bviol", "shock_r")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def history_row(state, op: HydroOperator, origin=(0.0, 0.0), angle_range=(0.0, 0.5 * math.pi),
                n_rays: int = 16, n_samples: int = 400) -> dict:
    rep = conservation_report(state, op)
    front = shock_front_radius(state, op, n_rays, n_samples, origin, angle_range)
    return {
        "step": state.step_count, "t": state.t, "dt": state.dt,
        "ke": rep.kinetic_energy, "ke_penalty": rep.ke_penalty, "ie": rep.internal_energy,
        "etotal": rep.total_energy, "px": rep.momentum[0], "py": rep.momentum[1],
        "bviol": rep.boundary_violation, "shock_r": front.radius,
    }


class HistoryWriter:
    """Collects history rows and writes them as CSV with a fixed header."""

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self.rows: list[dict] = []

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def write(self, path=None) -> Path:
        path = Path(path) if path is not None else self.path
        if path is None:
            raise ValueError("no output path")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])
        return path


def read_history(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header {reader.fieldnames}")
        rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in HISTORY_COLUMNS}


@dataclass(frozen=True)
class FieldSnapshot:
    time: float
    x: np.ndarray           # (n_V, d)
    v: np.ndarray           # (n_V, d)
    e: np.ndarray           # (n_E,)
    density: np.ndarray     # (n_elems, n_loc) at the kinematic nodes of each element


def make_snapshot(state, op: HydroOperator) -> FieldSnapshot:
    """Immutable copy of ``state`` with density at every element-local kinematic node."""
    kin = op.kin
    nodes = kin.basis.nodes
    _, grads = eval_basis(kin.basis, nodes)
    x = np.array(state.x, dtype=float).reshape(-1, kin.dim)
    xe, x0e = x[kin.elem_dofs], kin.x0[kin.elem_dofs]
    det, _ = _det_inv(np.einsum("eai,qak->eqik", xe, grads))
    det0, _ = _det_inv(np.einsum("eai,qak->eqik", x0e, grads))
    rho = _rho0_values(op.rho0, x0e) * det0 / det
    snap = FieldSnapshot(float(state.t), x, np.array(state.v, dtype=float).reshape(-1, kin.dim),
                         np.array(state.e, dtype=float), rho)
    for arr in (snap.x, snap.v, snap.e, snap.density):
        arr.setflags(write=False)
    return snap


def write_vtk(snapshot: FieldSnapshot, spaces, path) -> Path:
    """Legacy ASCII unstructured grid; each element becomes ``k x k`` quads.

    Points are not shared between elements, so there are
    ``n_elems (k+1)^2`` of them.  Point data: velocity magnitude, density and
    its base-10 logarithm.
    """
    kin = spaces[0]
    k = kin.degree
    n1 = k + 1
    ne = kin.elem_dofs.shape[0]
    pts = snapshot.x[kin.elem_dofs].reshape(-1, kin.dim)
    speed = np.linalg.norm(snapshot.v[kin.elem_dofs], axis=-1).reshape(-1)
    rho = snapshot.density.reshape(-1)

    cells = []
    for e in range(ne):
        base = e * n1 * n1
        for j in range(k):
            for i in range(k):
                a = base + j * n1 + i
                cells.append((a, a + 1, a + n1 + 1, a + n1))
    cells = np.asarray(cells, dtype=np.int64)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"hydro snapshot t={snapshot.time!r}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {len(pts)} double\n")
            for p in pts:
                fh.write(f"{p[0]!r} {p[1]!r} 0.0\n")
            fh.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
            for c in cells:
                fh.write(f"4 {c[0]} {c[1]} {c[2]} {c[3]}\n")
            fh.write(f"CELL_TYPES {len(cells)}\n")
            fh.write("9\n" * len(cells))
            fh.write(f"POINT_DATA {len(pts)}\n")
            for name, vals in (("velocity_magnitude", speed), ("density", rho),
                               ("log10_density", np.log10(rho))):
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{float(v)!r}\n" for v in vals)
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_counts(path) -> tuple[int, int]:
    """Number of points and cells declared in a legacy VTK file."""
    n_pts = n_cells = -1
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                n_pts = int(line.split()[1])
            elif line.startswith("CELLS"):
                n_cells = int(line.split()[1])
    return n_pts, n_cells
