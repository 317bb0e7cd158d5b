"""Curved tensor-product meshes in the initial configuration.

Meshes are assembled from one or more logically rectangular *blocks*, each
carrying a smooth map from the block parameter square onto the physical
domain.  Geometry nodes of degree ``k_g`` are placed by evaluating the block
map at the Gauss-Lobatto lattice of every cell, so curved boundaries are
interpolated at their Lobatto points (nodes on a circle lie exactly on it).

Conventions
-----------
* Element nodes are ordered lexicographically (first reference coordinate
  fastest); element vertices are counter-clockwise oriented, so every valid
  element has a positive Jacobian determinant.
* Local faces: 0 bottom, 1 right, 2 top, 3 left, each traversed
  counter-clockwise (see :mod:`nitsche_hydro.fem`).
* Boundary tags: 1 outer boundary, 2 interior hole boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .fem import (
    FACE_TANGENTS_2D,
    Basis1D,
    TensorBasis,
    eval_basis,
    face_ref_points,
    number_nodes_2d,
)

TAG_OUTER = 1
TAG_HOLE = 2


class MeshError(ValueError):
    """Invalid mesh construction parameters or inconsistent mesh data."""


class TangledElementError(RuntimeError):
    """A nonpositive Jacobian determinant was found."""


class DegenerateFaceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mesh:
    dim: int
    geom_degree: int
    node_coords: np.ndarray
    elem_conn: np.ndarray
    bdry_faces: np.ndarray
    bdry_tags: np.ndarray = field(default=None)

    def __post_init__(self):
        coords = np.ascontiguousarray(self.node_coords, dtype=float)
        conn = np.ascontiguousarray(self.elem_conn, dtype=np.int64)
        faces = np.asarray(self.bdry_faces, dtype=np.int64).reshape(-1, 2)
        tags = (np.full(len(faces), TAG_OUTER, dtype=np.int64) if self.bdry_tags is None
                else np.asarray(self.bdry_tags, dtype=np.int64).reshape(-1))
        if coords.ndim != 2 or coords.shape[1] != self.dim:
            raise MeshError("node_coords must have shape (n_nodes, dim)")
        if conn.shape[1] != (self.geom_degree + 1) ** self.dim:
            raise MeshError("connectivity width does not match geometry degree")
        if conn.size and (conn.min() < 0 or conn.max() >= len(coords)):
            raise MeshError("element connectivity index out of range")
        if len(tags) != len(faces):
            raise MeshError("one tag per boundary face required")
        if len({(int(e), int(f)) for e, f in faces}) != len(faces):
            raise MeshError("duplicate boundary face")
        for arr in (coords, conn, faces, tags):
            arr.setflags(write=False)
        object.__setattr__(self, "node_coords", coords)
        object.__setattr__(self, "elem_conn", conn)
        object.__setattr__(self, "bdry_faces", faces)
        object.__setattr__(self, "bdry_tags", tags)

    @property
    def elem_count(self) -> int:
        return self.elem_conn.shape[0]

    @property
    def node_count(self) -> int:
        return self.node_coords.shape[0]

    @property
    def basis(self) -> TensorBasis:
        return TensorBasis(Basis1D.lobatto(self.geom_degree), self.dim)


@dataclass(frozen=True)
class FaceFrame:
    normal: np.ndarray
    surf_weight: float
    phys_point: np.ndarray


# --- block assembly ---------------------------------------------------------

BlockMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class _Block:
    nx: int
    ny: int
    fmap: BlockMap  # (s, t) arrays in [0,1] -> (..., 2) physical points


def _assemble_blocks(blocks: Sequence[_Block], geom_degree: int,
                     tagger: Callable[[np.ndarray], np.ndarray] | None = None,
                     merge_tol: float = 1e-9) -> Mesh:
    k = geom_degree
    p = Basis1D.lobatto(k).node_points
    corner_pts, elem_params = [], []
    for b, blk in enumerate(blocks):
        ci, cj = np.meshgrid(np.arange(blk.nx), np.arange(blk.ny), indexing="xy")
        ci, cj = ci.ravel(), cj.ravel()
        s0, s1 = ci / blk.nx, (ci + 1) / blk.nx
        t0, t1 = cj / blk.ny, (cj + 1) / blk.ny
        corners = np.stack([
            blk.fmap(s0, t0), blk.fmap(s1, t0), blk.fmap(s0, t1), blk.fmap(s1, t1)
        ], axis=1)
        corner_pts.append(corners)
        elem_params.append((b, ci, cj))
    corners_all = np.concatenate(corner_pts, axis=0)
    ne = corners_all.shape[0]
    flat = corners_all.reshape(-1, 2)
    scale = max(np.ptp(flat, axis=0).max(), 1.0)
    tree = cKDTree(flat)
    pairs = tree.query_pairs(merge_tol * scale, output_type="ndarray")
    parent = np.arange(len(flat))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(flat))])
    _, vid = np.unique(roots, return_inverse=True)
    corners_ids = vid.reshape(ne, 4)

    conn, n_nodes = number_nodes_2d(corners_ids, k)

    # node coordinates: first writer wins for shared nodes
    coords = np.full((n_nodes, 2), np.nan)
    ii, jj = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    offset = 0
    for (b, ci, cj) in elem_params:
        blk = blocks[b]
        s = (ci[:, None] + p[ii][None, :]) / blk.nx
        t = (cj[:, None] + p[jj][None, :]) / blk.ny
        xy = blk.fmap(s, t)
        ids = conn[offset:offset + len(ci)]
        unset = np.isnan(coords[ids.ravel(), 0])
        coords[ids.ravel()[unset]] = xy.reshape(-1, 2)[unset]
        offset += len(ci)

    faces = _boundary_faces(conn, k)
    tags = np.full(len(faces), TAG_OUTER, dtype=np.int64)
    if tagger is not None and len(faces):
        mids = np.array([_face_midpoint(coords, conn, k, e, f) for e, f in faces])
        tags = np.asarray(tagger(mids), dtype=np.int64)
    mesh = Mesh(2, k, coords, conn, faces, tags)
    check_positive_jacobians(mesh)
    return mesh


def _face_vertex_pairs(k: int):
    n = k + 1
    c0, c1, c2, c3 = 0, k, n * k, n * n - 1
    return ((c0, c1), (c1, c3), (c3, c2), (c2, c0))


def _boundary_faces(conn: np.ndarray, k: int) -> np.ndarray:
    counts: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for e in range(conn.shape[0]):
        for f, (a, b) in enumerate(_face_vertex_pairs(k)):
            va, vb = int(conn[e, a]), int(conn[e, b])
            key = (va, vb) if va < vb else (vb, va)
            counts.setdefault(key, []).append((e, f))
    faces = [owners[0] for owners in counts.values() if len(owners) == 1]
    faces.sort()
    return np.array(faces, dtype=np.int64).reshape(-1, 2)


def _face_midpoint(coords, conn, k, e, f):
    basis = TensorBasis(Basis1D.lobatto(k), 2)
    vals, _ = eval_basis(basis, face_ref_points(f, 0.5))
    return vals[0] @ coords[conn[e]]


def _bilinear(p00, p10, p01, p11) -> BlockMap:
    p00, p10, p01, p11 = (np.asarray(q, dtype=float) for q in (p00, p10, p01, p11))

    def fmap(s, t):
        s = np.asarray(s, dtype=float)[..., None]
        t = np.asarray(t, dtype=float)[..., None]
        return (1 - s) * (1 - t) * p00 + s * (1 - t) * p10 + (1 - s) * t * p01 + s * t * p11

    return fmap


# --- generators ----------------------------------------------------------------

def make_cartesian(nx: int, ny: int, bounds, geom_degree: int = 1) -> Mesh:
    """Axis-aligned ``nx`` x ``ny`` quadrilateral mesh of the box ``bounds``.

    ``bounds`` is a pair of corners ``((x0, y0), (x1, y1))``.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    if geom_degree < 1:
        raise MeshError("geom_degree must be >= 1")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if lo.shape != (2,) or hi.shape != (2,) or np.any(hi <= lo):
        raise MeshError(f"degenerate bounds {bounds!r}")
    fmap = _bilinear(lo, (hi[0], lo[1]), (lo[0], hi[1]), hi)
    return _assemble_blocks([_Block(nx, ny, fmap)], geom_degree)


def make_trapezoid(nx: int, ny: int, corners=((0.0, 0.0), (1.0, 0.0), (1.0, 0.6), (0.0, 1.0)),
                   geom_degree: int = 1) -> Mesh:
    """Mapped Cartesian mesh of a convex quadrilateral.

    ``corners`` are given counter-clockwise starting at the lower-left vertex:
    ``(p00, p10, p11, p01)``.  The default is a right trapezoid with a slanted
    top wall.
    """
    c = np.asarray(corners, dtype=float)
    if c.shape != (4, 2):
        raise MeshError("trapezoid needs four 2D corners")
    for i in range(4):
        a, b, d = c[i - 1], c[i], c[(i + 1) % 4]
        cross = (b[0] - a[0]) * (d[1] - b[1]) - (b[1] - a[1]) * (d[0] - b[0])
        if cross <= 0:
            raise MeshError("corners must form a convex, counter-clockwise quadrilateral")
    fmap = _bilinear(c[0], c[1], c[3], c[2])
    return _assemble_blocks([_Block(nx, ny, fmap)], geom_degree)


def _rot90(xy: np.ndarray, times: int, center=(0.0, 0.0)) -> np.ndarray:
    cx, cy = center
    x, y = xy[..., 0] - cx, xy[..., 1] - cy
    for _ in range(times % 4):
        x, y = -y, x
    return np.stack([x + cx, y + cy], axis=-1)


def make_disc(n_rad: int, n_azi: int, radius: float = 1.0, geom_degree: int = 2) -> Mesh:
    """All-quadrilateral disc mesh centred at the origin.

    Five-block layout: a central square with ``n_azi / 4`` cells per side and
    four annular blocks with ``n_rad`` cells in the radial direction.
    """
    if geom_degree < 2:
        raise MeshError("a curved disc boundary needs geom_degree >= 2 "
                        "(degree 1 would only approximate it by chords)")
    if n_azi < 4 or n_azi % 4:
        raise MeshError("n_azi must be a positive multiple of 4")
    if n_rad < 1 or radius <= 0:
        raise MeshError("n_rad must be >= 1 and radius positive")
    m = n_azi // 4
    a = radius * m / (m + 2 * n_rad)
    a = min(max(a, 0.25 * radius), 0.6 * radius)

    def right(s, t):
        # s radial (outward), t counter-clockwise along the arc
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        theta = -0.25 * math.pi + 0.5 * math.pi * t
        inner = np.stack([np.full_like(t, a), -a + 2 * a * t], axis=-1)
        outer = radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return (1 - s)[..., None] * inner + s[..., None] * outer

    blocks = [_Block(m, m, _bilinear((-a, -a), (a, -a), (-a, a), (a, a)))]
    for r in range(4):
        blocks.append(_Block(n_rad, m, lambda s, t, r=r: _rot90(right(s, t), r)))
    return _assemble_blocks(blocks, geom_degree)


def make_square_with_hole(shape: str = "circle", n_t: int = 8, n_r: int = 4,
                          geom_degree: int = 2, center=(0.5, 0.5), size: float = 0.2,
                          angle_deg: float = 20.0) -> Mesh:
    """Unit square with a circular or rotated-square hole.

    Parameters
    ----------
    shape : ``"circle"`` or ``"rotated_square"``
    n_t, n_r : cells per block along the outer side and across the annulus
    center : hole centre
    size : circle radius, or half side length of the square hole
    angle_deg : counter-clockwise rotation of the square hole
    """
    c = np.asarray(center, dtype=float)
    if shape == "circle":
        if geom_degree < 2:
            raise MeshError("a curved hole boundary needs geom_degree >= 2")
        reach = size
    elif shape == "rotated_square":
        reach = size * math.sqrt(2.0)
    else:
        raise MeshError(f"unknown hole shape {shape!r}")
    if size <= 0 or np.any(c - reach <= 0) or np.any(c + reach >= 1):
        raise MeshError("hole must lie strictly inside the unit square")
    if n_t < 1 or n_r < 1:
        raise MeshError("n_t and n_r must be >= 1")
    if not np.allclose(c, 0.5):
        # four-block layout uses the square's symmetry about the hole centre
        raise MeshError("hole must be centred in the unit square")

    phi = math.radians(angle_deg)
    hole_corner = np.array([
        c + size * np.array([math.cos(th), math.sin(th)]) * math.sqrt(2.0)
        for th in (-0.75 * math.pi + phi, -0.25 * math.pi + phi)
    ])

    def bottom(s, t):
        # s along the bottom side (counter-clockwise), t from outer side to hole
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        outer = np.stack([s, np.zeros_like(s)], axis=-1)
        if shape == "circle":
            theta = -0.75 * math.pi + 0.5 * math.pi * s
            inner = c + size * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        else:
            inner = (1 - s)[..., None] * hole_corner[0] + s[..., None] * hole_corner[1]
        return (1 - t)[..., None] * outer + t[..., None] * inner

    blocks = [_Block(n_t, n_r, lambda s, t, r=r: _rot90(bottom(s, t), r, center=c))
              for r in range(4)]
    threshold = 0.5 * (reach + 0.5)

    def tagger(mid):
        dist = np.linalg.norm(mid - c, axis=1)
        return np.where(dist < threshold, TAG_HOLE, TAG_OUTER)

    return _assemble_blocks(blocks, geom_degree, tagger)


# --- geometry queries ---------------------------------------------------------

def element_coords(mesh: Mesh, coords=None) -> np.ndarray:
    coords = mesh.node_coords if coords is None else np.asarray(coords, dtype=float)
    return coords.reshape(-1, mesh.dim)[mesh.elem_conn]


def reference_jacobian(mesh: Mesh, elem: int, ref_point, coords=None) -> np.ndarray:
    """Jacobian ``d x / d xi`` of element ``elem`` at a reference point.

    ``coords`` defaults to the initial node positions; pass current positions
    to get the Jacobian of the deformed element.
    """
    pt = np.asarray(ref_point, dtype=float)
    if np.any(pt < -1e-14) or np.any(pt > 1 + 1e-14):
        raise ValueError("reference point outside [0,1]^d")
    _, grads = eval_basis(mesh.basis, pt)
    xe = element_coords(mesh, coords)[elem]
    return np.einsum("ai,ak->ik", xe, grads[0])


def check_positive_jacobians(mesh: Mesh, coords=None, n_pts: int | None = None) -> float:
    """Smallest Jacobian determinant over a Gauss lattice; raises if nonpositive."""
    from .fem import gauss_rule

    rule = gauss_rule(n_pts or mesh.geom_degree + 2, mesh.dim)
    _, grads = eval_basis(mesh.basis, rule.points)
    jac = np.einsum("eai,qak->eqik", element_coords(mesh, coords), grads)
    det = np.linalg.det(jac)
    dmin = float(det.min())
    if dmin <= 0:
        bad = int(np.argmin(det.min(axis=1)))
        raise TangledElementError(f"nonpositive Jacobian {dmin:.3e} in element {bad}")
    return dmin


def face_frame(mesh: Mesh, elem: int, local_face: int, s: float, coords=None,
               weight: float = 1.0) -> FaceFrame:
    """Outward unit normal and surface weight at face parameter ``s``."""
    if mesh.dim != 2:
        raise NotImplementedError("face frames are implemented for 2D meshes")
    is_bdry = np.any((mesh.bdry_faces[:, 0] == elem) & (mesh.bdry_faces[:, 1] == local_face))
    if not is_bdry:
        raise MeshError(f"(element {elem}, face {local_face}) is not a boundary face")
    ref = face_ref_points(local_face, s)[0]
    vals, grads = eval_basis(mesh.basis, ref)
    xe = element_coords(mesh, coords)[elem]
    jac = np.einsum("ai,ak->ik", xe, grads[0])
    tangent = jac @ FACE_TANGENTS_2D[local_face]
    length = float(np.hypot(*tangent))
    if length == 0.0:
        raise DegenerateFaceError(f"zero tangent on element {elem}, face {local_face}")
    normal = np.array([tangent[1], -tangent[0]]) / length
    return FaceFrame(normal, length * weight, vals[0] @ xe)


def bounding_box_perimeter(mesh: Mesh) -> float:
    """Perimeter of the axis-aligned bounding box; total edge length in 3D."""
    ext = np.ptp(mesh.node_coords, axis=0)
    if mesh.dim == 2:
        return float(2.0 * ext.sum())
    if mesh.dim == 3:
        return float(4.0 * ext.sum())
    raise MeshError("dim must be 2 or 3")


def mesh_area(mesh: Mesh, coords=None, n_pts: int | None = None) -> float:
    from .fem import gauss_rule

    rule = gauss_rule(n_pts or mesh.geom_degree + 2, mesh.dim)
    _, grads = eval_basis(mesh.basis, rule.points)
    jac = np.einsum("eai,qak->eqik", element_coords(mesh, coords), grads)
    return float(np.sum(np.linalg.det(jac) * rule.weights))


def is_axis_aligned(mesh: Mesh, tol: float = 1e-12) -> bool:
    """True when every boundary face is a straight horizontal or vertical segment."""
    k = mesh.geom_degree
    from .fem import face_local_nodes

    for e, f in mesh.bdry_faces:
        pts = mesh.node_coords[mesh.elem_conn[e, face_local_nodes(int(f), k)]]
        spread = np.ptp(pts, axis=0)
        if min(spread) > tol * max(1.0, max(spread)):
            return False
    return True


# --- plain-text mesh files ------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in the plain-text format read by :func:`read_mesh`.

    Floats use ``repr`` so that a read/write cycle is bit-exact.
    """
    lines = [f"{mesh.dim} {mesh.geom_degree} {mesh.node_count} {mesh.elem_count} "
             f"{len(mesh.bdry_faces)}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.node_coords]
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.elem_conn]
    lines += [f"{int(e)} {int(f)} {int(t)}" for (e, f), t in zip(mesh.bdry_faces, mesh.bdry_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()
            and not ln.lstrip().startswith("#")]
    try:
        dim, degree, nn, ne, nb = (int(v) for v in rows[0])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"bad mesh header in {path}") from exc
    body = rows[1:]
    if len(body) != nn + ne + nb:
        raise MeshError(f"{path}: expected {nn + ne + nb} data rows, found {len(body)}")
    coords = np.array([[float(v) for v in r] for r in body[:nn]]).reshape(nn, dim)
    conn = np.array([[int(v) for v in r] for r in body[nn:nn + ne]], dtype=np.int64)
    bd = [[int(v) for v in r] for r in body[nn + ne:]]
    faces = np.array([r[:2] for r in bd], dtype=np.int64).reshape(-1, 2)
    tags = np.array([r[2] if len(r) > 2 else TAG_OUTER for r in bd], dtype=np.int64)
    return Mesh(dim, degree, coords, conn, faces, tags)
