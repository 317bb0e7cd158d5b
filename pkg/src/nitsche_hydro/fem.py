"""Reference-element bases, quadrature and degree-of-freedom maps.

The reference cell is ``[0, 1]^d``.  Local shape functions of a tensor-product
element are numbered lexicographically with the first reference coordinate
running fastest, so for a 2D element of degree ``k`` the local index of node
``(i, j)`` is ``i + (k + 1) * j``.

Kinematic fields (position, velocity) live in the continuous ``Q_k`` space
with Gauss-Lobatto nodes; the internal energy lives in the discontinuous
``Q_{k-1}`` space with Gauss-Lobatto nodes by default (Gauss-Legendre on request).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from numpy.polynomial import legendre


def gauss_legendre_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` Gauss-Legendre points and weights mapped to ``[0, 1]``."""
    if n < 1:
        raise ValueError("need at least one Gauss point")
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_lobatto_points(n: int) -> np.ndarray:
    """``n`` Gauss-Lobatto points on ``[0, 1]`` (endpoints included)."""
    if n < 2:
        raise ValueError("Gauss-Lobatto rule needs at least two points")
    if n == 2:
        return np.array([0.0, 1.0])
    # interior points are the roots of P'_{n-1}
    coef = np.zeros(n)
    coef[-1] = 1.0
    interior = np.sort(legendre.legroots(legendre.legder(coef)).real)
    x = np.concatenate(([-1.0], interior, [1.0]))
    # symmetrize so that node i and node n-1-i mirror exactly
    x = 0.5 * (x - x[::-1])
    return 0.5 * (x + 1.0)


@dataclass(frozen=True)
class Basis1D:
    """Nodal Lagrange basis on ``[0, 1]``.

    ``kind`` is ``"closed-lobatto"`` (kinematic space) or ``"open-gauss"``
    (thermodynamic space).
    """

    degree: int
    node_points: np.ndarray
    kind: str

    @classmethod
    def lobatto(cls, degree: int) -> "Basis1D":
        if degree < 1:
            raise ValueError("closed Lobatto basis needs degree >= 1")
        return cls(degree, gauss_lobatto_points(degree + 1), "closed-lobatto")

    @classmethod
    def gauss(cls, degree: int) -> "Basis1D":
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        return cls(degree, gauss_legendre_points(degree + 1)[0], "open-gauss")

    @property
    def size(self) -> int:
        return self.degree + 1

    def eval(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Values and first derivatives at points ``x``; shapes ``(npts, n)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.node_points
        n = nodes.size
        vals = np.ones((x.size, n))
        ders = np.zeros((x.size, n))
        for i in range(n):
            others = [j for j in range(n) if j != i]
            denom = np.prod(nodes[i] - nodes[others]) if others else 1.0
            factors = x[:, None] - nodes[others][None, :]
            vals[:, i] = np.prod(factors, axis=1) / denom
            for m in range(len(others)):
                rest = np.delete(factors, m, axis=1)
                ders[:, i] += np.prod(rest, axis=1)
            ders[:, i] /= denom
        return vals, ders


@dataclass(frozen=True)
class TensorBasis:
    """Tensor product of a 1D nodal basis in ``dim`` directions."""

    basis1d: Basis1D
    dim: int

    @property
    def degree(self) -> int:
        return self.basis1d.degree

    @property
    def size(self) -> int:
        return self.basis1d.size ** self.dim

    @property
    def nodes(self) -> np.ndarray:
        """Reference coordinates of the local nodes, shape ``(size, dim)``."""
        return _tensor_nodes(self.basis1d.node_points, self.dim)


def _tensor_nodes(p: np.ndarray, dim: int) -> np.ndarray:
    idx = np.array(list(product(range(p.size), repeat=dim)))[:, ::-1]
    return p[idx]


def eval_basis(basis: TensorBasis, ref_points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a tensor basis at reference points.

    Parameters
    ----------
    basis : TensorBasis
    ref_points : array_like, shape ``(npts, dim)`` or ``(dim,)``

    Returns
    -------
    values : ndarray, shape ``(npts, nloc)``
    grads : ndarray, shape ``(npts, nloc, dim)``
        Gradients with respect to the reference coordinates.
    """
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    dim = basis.dim
    if pts.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional reference points")
    n1 = basis.basis1d.size
    v1, d1 = zip(*(basis.basis1d.eval(pts[:, k]) for k in range(dim)))
    idx = np.array(list(product(range(n1), repeat=dim)))[:, ::-1]
    npts = pts.shape[0]
    values = np.ones((npts, idx.shape[0]))
    grads = np.ones((npts, idx.shape[0], dim))
    for k in range(dim):
        values *= v1[k][:, idx[:, k]]
        for m in range(dim):
            grads[:, :, m] *= (d1[k] if k == m else v1[k])[:, idx[:, k]]
    return values, grads


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def _gauss_rule_cached(n: int, dim: int) -> QuadratureRule:
    x, w = gauss_legendre_points(n)
    pts = _tensor_nodes(x, dim)
    idx = np.array(list(product(range(n), repeat=dim)))[:, ::-1]
    wts = np.prod(w[idx], axis=1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


def gauss_rule(n_pts_per_dim: int, dim: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on ``[0,1]^dim``, exact to degree ``2n-1`` per direction."""
    if n_pts_per_dim < 1:
        raise ValueError("n_pts_per_dim must be >= 1")
    return _gauss_rule_cached(int(n_pts_per_dim), int(dim))


# --- face geometry of the reference square -------------------------------
#
# Faces are numbered counter-clockwise: 0 bottom (eta=0), 1 right (xi=1),
# 2 top (eta=1), 3 left (xi=0).  The face parameter s in [0,1] runs in the
# counter-clockwise direction, so the outward normal of a face with tangent
# t = dx/ds is (t_y, -t_x).

FACE_COUNT_2D = 4
FACE_TANGENTS_2D = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def face_ref_points(face: int, s) -> np.ndarray:
    """Reference-cell points on local ``face`` at face parameters ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    one, zero = np.ones_like(s), np.zeros_like(s)
    if face == 0:
        return np.stack([s, zero], axis=-1)
    if face == 1:
        return np.stack([one, s], axis=-1)
    if face == 2:
        return np.stack([1.0 - s, one], axis=-1)
    if face == 3:
        return np.stack([zero, 1.0 - s], axis=-1)
    raise ValueError(f"invalid local face id {face}")


def face_local_nodes(face: int, k: int) -> np.ndarray:
    """Local node indices of a degree-``k`` element lying on ``face``, in face order."""
    n = k + 1
    i = np.arange(n)
    if face == 0:
        return i
    if face == 1:
        return k + n * i
    if face == 2:
        return (n - 1 - i) + n * k
    if face == 3:
        return n * (n - 1 - i)
    raise ValueError(f"invalid local face id {face}")


# --- spaces ---------------------------------------------------------------

@dataclass(frozen=True)
class KinematicSpace:
    """Continuous ``Q_k`` space; vector fields carry ``dim`` components per dof.

    ``x0`` holds the initial position of every dof, so the isoparametric map
    of element ``e`` is ``x0[elem_dofs[e]]`` contracted with the basis.
    """

    degree: int
    dim: int
    basis: TensorBasis
    elem_dofs: np.ndarray
    n_dofs: int
    x0: np.ndarray

    @property
    def n_elems(self) -> int:
        return self.elem_dofs.shape[0]

    @property
    def n_vector_dofs(self) -> int:
        return self.n_dofs * self.dim


@dataclass(frozen=True)
class ThermodynamicSpace:
    """Discontinuous ``Q_{k-1}`` space with element-local numbering."""

    degree: int
    dim: int
    basis: TensorBasis
    elem_dofs: np.ndarray
    n_dofs: int

    @property
    def n_elems(self) -> int:
        return self.elem_dofs.shape[0]

    @property
    def n_local(self) -> int:
        return self.elem_dofs.shape[1]


def number_nodes_2d(corners: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Continuous ``Q_k`` numbering of a conforming quadrilateral mesh.

    ``corners`` has shape ``(n_elems, 4)`` in lexicographic order, i.e. the
    vertices at reference points (0,0), (1,0), (0,1), (1,1).  Vertex dofs are
    numbered first (keeping the vertex ids), then edge-interior dofs ordered
    from the lower to the higher vertex id, then cell interiors.
    """
    corners = np.asarray(corners, dtype=np.int64)
    ne = corners.shape[0]
    n = k + 1
    nv = int(corners.max()) + 1 if corners.size else 0
    conn = np.full((ne, n * n), -1, dtype=np.int64)
    conn[:, 0] = corners[:, 0]
    conn[:, k] = corners[:, 1]
    conn[:, n * k] = corners[:, 2]
    conn[:, n * n - 1] = corners[:, 3]
    next_id = nv
    if k > 1:
        # local edges as (start corner, end corner, local node indices start->end)
        inner = np.arange(1, k)
        edges = (
            (0, 1, inner),
            (2, 3, n * k + inner),
            (0, 2, n * inner),
            (1, 3, k + n * inner),
        )
        edge_ids: dict[tuple[int, int], int] = {}
        for e in range(ne):
            for ca, cb, loc in edges:
                va, vb = int(corners[e, ca]), int(corners[e, cb])
                key = (va, vb) if va < vb else (vb, va)
                base = edge_ids.get(key)
                if base is None:
                    base = next_id
                    edge_ids[key] = base
                    next_id += k - 1
                ids = base + np.arange(k - 1)
                conn[e, loc] = ids if va < vb else ids[::-1]
        ii, jj = np.meshgrid(inner, inner, indexing="xy")
        interior = (ii + n * jj).ravel()
        conn[:, interior] = next_id + np.arange(ne * (k - 1) ** 2).reshape(ne, -1)
        next_id += ne * (k - 1) ** 2
    return conn, next_id


def element_corners(elem_conn: np.ndarray, k: int) -> np.ndarray:
    """Vertex ids of each element from a lexicographic degree-``k`` connectivity."""
    n = k + 1
    return elem_conn[:, [0, k, n * k, n * n - 1]]


THERMO_NODES = ("lobatto", "gauss")


def thermo_basis_1d(degree: int, nodes: str = "lobatto") -> Basis1D:
    """1D thermodynamic basis; a constant space always uses the midpoint."""
    if nodes not in THERMO_NODES:
        raise ValueError(f"thermo nodes must be one of {THERMO_NODES}, got {nodes!r}")
    if nodes == "gauss" or degree == 0:
        return Basis1D.gauss(degree)
    return Basis1D.lobatto(degree)


def build_spaces(mesh, k: int, quad_pts: int | None = None, thermo_nodes: str = "lobatto"
                 ) -> tuple[KinematicSpace, ThermodynamicSpace]:
    """Build the ``Q_k`` kinematic and ``Q_{k-1}`` thermodynamic spaces on ``mesh``.

    When ``k`` equals the mesh geometry degree the kinematic dofs coincide with
    the mesh nodes.  Otherwise a fresh continuous numbering is derived from the
    element vertices and the dof positions are obtained by evaluating the
    geometry map.

    ``thermo_nodes`` places the discontinuous energy nodes at closed Lobatto
    points (default) or open Gauss points.  With closed nodes the ``Q_1``
    energy basis is nonnegative and has a node on every element corner, so a
    point deposit at a mesh vertex stays nonnegative inside the element.
    """
    if k < 1:
        raise ValueError("kinematic degree k must be >= 1")
    if mesh.dim != 2:
        raise NotImplementedError("spaces are implemented for 2D meshes")
    kin_basis = TensorBasis(Basis1D.lobatto(k), mesh.dim)
    if k == mesh.geom_degree:
        conn = mesh.elem_conn
        n_dofs = mesh.node_count
        x0 = mesh.node_coords
    else:
        corners = element_corners(mesh.elem_conn, mesh.geom_degree)
        # vertex ids in elem_conn are arbitrary mesh-node ids: compress them
        uniq, inv = np.unique(corners, return_inverse=True)
        conn, n_dofs = number_nodes_2d(inv.reshape(corners.shape), k)
        geo_basis = TensorBasis(Basis1D.lobatto(mesh.geom_degree), mesh.dim)
        vals, _ = eval_basis(geo_basis, kin_basis.nodes)
        xe = mesh.node_coords[mesh.elem_conn]
        local = np.einsum("qa,ead->eqd", vals, xe)
        x0 = np.zeros((n_dofs, mesh.dim))
        x0[conn.ravel()] = local.reshape(-1, mesh.dim)
    thermo_basis = TensorBasis(thermo_basis_1d(k - 1, thermo_nodes), mesh.dim)
    nl = thermo_basis.size
    ne = mesh.elem_count
    thermo_dofs = np.arange(ne * nl, dtype=np.int64).reshape(ne, nl)
    kin = KinematicSpace(k, mesh.dim, kin_basis, conn, int(n_dofs), np.asarray(x0, dtype=float))
    thermo = ThermodynamicSpace(k - 1, mesh.dim, thermo_basis, thermo_dofs, ne * nl)
    return kin, thermo


def interpolate(space, coefficients, elem: int, ref_point) -> np.ndarray:
    """Value of a finite element field at reference point(s) of element ``elem``.

    ``coefficients`` is shaped ``(n_dofs,)`` for scalars or ``(n_dofs, m)`` for
    vector fields.  Returns shape ``(npts,)`` or ``(npts, m)``; a single point
    input gives a scalar / length-``m`` vector.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    pts = np.asarray(ref_point, dtype=float)
    single = pts.ndim == 1
    vals, _ = eval_basis(space.basis, np.atleast_2d(pts))
    local = coefficients[space.elem_dofs[elem]]
    out = np.tensordot(vals, local, axes=(1, 0))
    return out[0] if single else out
