"""
P1 finite elements on a structured triangulation of the unit square.

Fields are plain numpy arrays: a nodal field has one value per mesh node
(``mesh.n_nodes``), a boundary field has one value per boundary node in
the counter-clockwise order of ``mesh.boundary_nodes``.

The discrete Helmholtz operator uses the sign convention

    Δu + k²(1+n)u = s   in Ω,      u = f   on ∂Ω,

whose weak form is  a(u, φ) = ∫∇u·∇φ − k²(1+n)uφ = −∫sφ  for interior test
functions. Neumann data are recovered from the variational residual on the
boundary test functions, which is one order more accurate than
differentiating the P1 gradient.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MeshError(ValueError):
    """Invalid mesh construction or a field/mesh mismatch."""


class NonPhysicalIndexError(ValueError):
    """Raised when 1 + n <= 0 somewhere."""


class ResonanceError(RuntimeError):
    """The reduced Dirichlet system is (numerically) singular."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (pivot-ratio condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


# ∫_T b_l b_i b_j = |T| * _TRI[l, i, j] for barycentric coordinates b
_TRI = np.full((3, 3, 3), 1.0 / 60.0)
for _a in range(3):
    for _b in range(3):
        if _a != _b:
            _TRI[_a, _a, _b] = _TRI[_a, _b, _a] = _TRI[_b, _a, _a] = 1.0 / 30.0
    _TRI[_a, _a, _a] = 1.0 / 10.0

_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0

_SIDE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform right-triangle mesh of [0, 1]².

    Attributes
    ----------
    nodes : (n_nodes, 2) array, row-major (node ``j*(N+1) + i`` sits at ``(i/N, j/N)``)
    elements : (2N², 3) counter-clockwise node triples
    boundary_nodes : (4N,) node ids walking ∂Ω counter-clockwise from (0, 0)
    boundary_edges : (4N, 2) consecutive boundary node pairs
    edge_normals : (4N, 2) outward unit normal of each boundary edge
    edge_side : (4N,) side index 0=bottom, 1=right, 2=top, 3=left
    """

    N: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    boundary_edges: np.ndarray
    edge_normals: np.ndarray
    edge_side: np.ndarray
    areas: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_nodes.shape[0]

    @property
    def boundary_points(self) -> np.ndarray:
        return self.nodes[self.boundary_nodes]

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def boundary_node_normals(self) -> np.ndarray:
        """Outward normal at each boundary node; corners get the averaged
        (non-unit) normal so that ν·∇v is the mean of both one-sided values."""
        nb = self.n_boundary
        out = np.zeros((nb, 2))
        out += self.edge_normals
        out += np.roll(self.edge_normals, 1, axis=0)
        return 0.5 * out

    def distance_to_boundary(self, points: Optional[np.ndarray] = None) -> np.ndarray:
        p = self.nodes if points is None else np.atleast_2d(points)
        return np.min(np.stack([p[:, 0], 1 - p[:, 0], p[:, 1], 1 - p[:, 1]]), axis=0)

    def side_mask(self, side: str) -> np.ndarray:
        """Boolean mask over boundary *edges* for ``side`` in
        {'bottom', 'right', 'top', 'left'}."""
        names = {"bottom": 0, "right": 1, "top": 2, "left": 3}
        if side not in names:
            raise MeshError(f"unknown side {side!r}")
        return self.edge_side == names[side]

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and barycentric coordinates of each point."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        N = self.N
        s = np.clip(p * N, 0.0, N * (1 - 1e-14))
        i = np.floor(s[:, 0]).astype(int)
        j = np.floor(s[:, 1]).astype(int)
        fx, fy = s[:, 0] - i, s[:, 1] - j
        upper = fy > fx
        elem = 2 * (j * N + i) + upper.astype(int)
        # lower triangle (v00, v10, v11): b = (1-fx, fx-fy, fy)
        # upper triangle (v00, v11, v01): b = (1-fy, fx, fy-fx)
        bary = np.where(
            upper[:, None],
            np.stack([1 - fy, fx, fy - fx], axis=1),
            np.stack([1 - fx, fx - fy, fy], axis=1),
        )
        return elem, bary

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the P1 interpolant of nodal ``values`` at ``points``."""
        elem, bary = self.locate(points)
        return np.einsum("pk,pk->p", bary, np.asarray(values)[self.elements[elem]])

    def interpolate_gradient(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Elementwise-constant gradient of the P1 interpolant at ``points``."""
        elem, _ = self.locate(points)
        vals = np.asarray(values)[self.elements[elem]]
        return np.einsum("pkd,pk->pd", self.grads[elem], vals)


def build_unit_square_mesh(N: int) -> Mesh:
    """Uniform mesh of [0,1]² with N subdivisions per side and 2N² triangles."""
    if int(N) != N or N < 2:
        raise MeshError(f"invalid resolution N={N!r}; need an integer N >= 2")
    N = int(N)
    ticks = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    v00 = (jj * (N + 1) + ii).ravel()
    v10, v01 = v00 + 1, v00 + N + 1
    v11 = v01 + 1
    elements = np.empty((2 * N * N, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([v00, v10, v11])
    elements[1::2] = np.column_stack([v00, v11, v01])

    r = np.arange(N)
    bottom = r
    right = N + r * (N + 1)
    top = N * (N + 1) + N - r
    left = (N - r) * (N + 1)
    boundary_nodes = np.concatenate([bottom, right, top, left]).astype(np.int64)
    boundary_edges = np.column_stack([boundary_nodes, np.roll(boundary_nodes, -1)])
    edge_side = np.repeat(np.arange(4), N)
    edge_normals = _SIDE_NORMALS[edge_side]

    p = nodes[elements]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    # rows of inv(J)^T give ∇b1, ∇b2; ∇b0 = -(∇b1 + ∇b2)
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-(g1 + g2), g1, g2], axis=1)

    return Mesh(N, nodes, elements, boundary_nodes, boundary_edges, edge_normals,
                edge_side, areas, grads)


def _check_nodal(mesh: Mesh, values, name: str = "field") -> np.ndarray:
    v = np.asarray(values)
    if v.ndim == 0:
        v = np.full(mesh.n_nodes, v)
    if v.shape != (mesh.n_nodes,):
        raise MeshError(f"{name} has shape {v.shape}, expected ({mesh.n_nodes},)")
    return v


def _check_boundary(mesh: Mesh, values, name: str = "boundary field") -> np.ndarray:
    v = np.asarray(values)
    if v.ndim == 0:
        v = np.full(mesh.n_boundary, v)
    if v.shape != (mesh.n_boundary,):
        raise MeshError(f"{name} has shape {v.shape}, expected ({mesh.n_boundary},)")
    return v


def _element_coo(mesh: Mesh):
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    return rows, cols


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    Ke = mesh.areas[:, None, None] * np.einsum("eid,ejd->eij", mesh.grads, mesh.grads)
    rows, cols = _element_coo(mesh)
    n = mesh.n_nodes
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


def mass_matrix(mesh: Mesh, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Consistent mass matrix ∫ w φ_i φ_j with w a P1 nodal weight (default 1)."""
    if weight is None:
        Me = mesh.areas[:, None, None] * _MASS_REF[None]
    else:
        w = _check_nodal(mesh, weight, "weight")[mesh.elements]
        Me = mesh.areas[:, None, None] * np.einsum("el,lij->eij", w, _TRI)
    rows, cols = _element_coo(mesh)
    n = mesh.n_nodes
    return sp.csr_matrix((Me.ravel(), (rows, cols)), shape=(n, n))


def trilinear_vector(mesh: Mesh, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vector of ∫ φ_l a b over Ω for P1 fields a, b (the derivative of
    aᵀ M_w b with respect to the nodal weight w)."""
    ae = np.asarray(a)[mesh.elements]
    be = np.asarray(b)[mesh.elements]
    loc = mesh.areas[:, None] * np.einsum("lij,ei,ej->el", _TRI, ae, be)
    out = np.zeros(mesh.n_nodes, dtype=loc.dtype)
    np.add.at(out, mesh.elements.ravel(), loc.ravel())
    return out


def boundary_mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """1D P1 mass matrix on ∂Ω indexed by boundary-node position."""
    nb = mesh.n_boundary
    i = np.arange(nb)
    j = (i + 1) % nb
    h = np.linalg.norm(mesh.nodes[mesh.boundary_nodes[j]] - mesh.nodes[mesh.boundary_nodes[i]], axis=1)
    rows = np.concatenate([i, i, j, j])
    cols = np.concatenate([i, j, i, j])
    vals = np.concatenate([h / 3, h / 6, h / 6, h / 3])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nb, nb))


class HelmholtzSystem:
    """Assembled A = K − k² M_(1+n) with its interior/boundary partition.

    The reduced interior block is factorized lazily and the factorization is
    reused by every subsequent solve.
    """

    def __init__(self, mesh: Mesh, n: np.ndarray, k: float,
                 K: Optional[sp.csr_matrix] = None, M: Optional[sp.csr_matrix] = None):
        self.mesh = mesh
        self.k = float(k)
        self.n = np.asarray(n, dtype=float)
        self.K = stiffness_matrix(mesh) if K is None else K
        self.M = mass_matrix(mesh) if M is None else M
        self.M_contrast = mass_matrix(mesh, self.n)
        self.M_contrast.eliminate_zeros()
        self.M_medium = self.M + self.M_contrast
        self.A = (self.K - self.k ** 2 * self.M_medium).astype(complex).tocsr()
        self.interior = mesh.interior_nodes
        self.boundary = mesh.boundary_nodes
        self.A_II = self.A[self.interior][:, self.interior].tocsc()
        self.A_IB = self.A[self.interior][:, self.boundary].tocsr()
        self.M_bdy = boundary_mass_matrix(mesh)
        self._lu = None
        self._mb_lu = None

    @property
    def contrast_mass(self) -> sp.csr_matrix:
        """∫ n φ_i φ_j."""
        return self.M_contrast

    def factorization(self):
        if self._lu is None:
            try:
                lu = spla.splu(self.A_II)
            except RuntimeError as exc:  # exactly singular
                raise ResonanceError("singular Dirichlet system", np.inf) from exc
            d = np.abs(lu.U.diagonal())
            cond = d.max() / max(d.min(), np.finfo(float).tiny)
            if cond > 1e12:
                raise ResonanceError("near-singular Dirichlet system", cond)
            self.condition_estimate = cond
            self._lu = lu
        return self._lu

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        x = self.factorization().solve(np.asarray(rhs, dtype=complex))
        if not np.all(np.isfinite(x)):
            raise ResonanceError("non-finite solution", np.inf)
        return x

    def boundary_mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._mb_lu is None:
            self._mb_lu = spla.splu(self.M_bdy.tocsc().astype(complex))
        return self._mb_lu.solve(np.asarray(rhs, dtype=complex))


def assemble(mesh: Mesh, n, k: float) -> HelmholtzSystem:
    """Assemble the P1 Helmholtz system for refractive index n and wavenumber k."""
    nv = _check_nodal(mesh, n, "refractive index")
    if np.iscomplexobj(nv):
        if np.any(np.imag(nv) != 0):
            raise NonPhysicalIndexError("refractive index must be real")
        nv = np.real(nv)
    if np.any(1.0 + nv <= 0):
        raise NonPhysicalIndexError("1 + n must be positive at every node")
    return HelmholtzSystem(mesh, nv.astype(float), k)


def solve_dirichlet(system: HelmholtzSystem, bc, source=None, load=None) -> np.ndarray:
    """Solve Δu + k²(1+n)u = s with u = bc on ∂Ω.

    ``source`` is the nodal right-hand side s. Alternatively ``load`` gives the
    assembled vector −∫sφ_i directly (both may not be given together).
    """
    mesh = system.mesh
    bcv = _check_boundary(mesh, bc, "Dirichlet data").astype(complex)
    load = _load_vector(system, source, load)
    rhs = -system.A_IB @ bcv
    if load is not None:
        rhs = rhs + load[system.interior]
    u = np.empty(mesh.n_nodes, dtype=complex)
    u[system.boundary] = bcv
    u[system.interior] = system.solve_interior(rhs)
    return u


def _load_vector(system, source, load):
    if source is not None and load is not None:
        raise ValueError("give either source or load, not both")
    if source is not None:
        s = _check_nodal(system.mesh, source, "source")
        return -(system.M @ s)
    if load is not None:
        return _check_nodal(system.mesh, load, "load")
    return None


def neumann_trace(system: HelmholtzSystem, u, source=None, load=None) -> np.ndarray:
    """Recover g_h = ∂νu on boundary nodes from ⟨g_h, φ_b⟩ = a(u, φ_b) + ∫sφ_b."""
    uv = _check_nodal(system.mesh, u, "solution")
    resid = (system.A @ uv)[system.boundary]
    load = _load_vector(system, source, load)
    if load is not None:
        resid = resid - load[system.boundary]
    return system.boundary_mass_solve(resid)


def boundary_integral(mesh: Mesh, a, b, side: Optional[str] = None) -> complex:
    """∫_∂Ω a b d𝔰 with P1 boundary quadrature (no conjugation).

    ``side`` restricts the integral to one side of the square.
    """
    av = _check_boundary(mesh, a)
    bv = _check_boundary(mesh, b)
    i = np.arange(mesh.n_boundary)
    j = (i + 1) % mesh.n_boundary
    if side is not None:
        m = mesh.side_mask(side)
        i, j = i[m], j[m]
    h = mesh.h
    val = np.sum(h / 6 * (2 * av[i] * bv[i] + av[i] * bv[j] + av[j] * bv[i] + 2 * av[j] * bv[j]))
    return complex(val)


def boundary_l2_norm(mesh: Mesh, a) -> float:
    av = _check_boundary(mesh, a)
    return float(np.sqrt(max(boundary_integral(mesh, np.conj(av), av).real, 0.0)))


def discrete_residual_norm(system: HelmholtzSystem, values) -> float:
    """L²-type norm of the lumped weak residual (A v)_i / m_i over interior nodes."""
    v = _check_nodal(system.mesh, values)
    lumped = np.asarray(system.M.sum(axis=1)).ravel()
    r = (system.A @ v)[system.interior] / lumped[system.interior]
    return float(np.sqrt(np.sum(np.abs(r) ** 2 * lumped[system.interior])))


def l2_norm(mesh: Mesh, v, M: Optional[sp.csr_matrix] = None) -> float:
    vv = _check_nodal(mesh, v)
    M = mass_matrix(mesh) if M is None else M
    return float(np.sqrt(max(np.real(np.conj(vv) @ (M @ vv)), 0.0)))


# ----------------------------------------------------------------- I/O

def save_mesh(mesh: Mesh, directory) -> list[Path]:
    """Write ``nodes.csv`` and ``elements.csv`` (plus a small JSON header)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "nodes.csv", d / "elements.csv", d / "mesh.json"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(mesh.nodes):
            w.writerow([i, repr(float(x)), repr(float(y))])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "n0", "n1", "n2"])
        for i, t in enumerate(mesh.elements):
            w.writerow([i, *map(int, t)])
    paths[2].write_text(json.dumps({"N": mesh.N, "n_nodes": mesh.n_nodes,
                                    "n_elements": int(mesh.elements.shape[0])}, indent=2))
    return paths


def load_mesh(directory) -> Mesh:
    d = Path(directory)
    meta = json.loads((d / "mesh.json").read_text())
    mesh = build_unit_square_mesh(meta["N"])
    nodes = np.loadtxt(d / "nodes.csv", delimiter=",", skiprows=1)[:, 1:]
    if not np.array_equal(nodes, mesh.nodes):
        raise MeshError("nodes.csv does not describe a structured unit-square mesh")
    return mesh


def save_field(path, values) -> Path:
    """Node-value CSV: ``id,re,im``."""
    v = np.asarray(values)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "re", "im"])
        for i, z in enumerate(v):
            w.writerow([i, repr(float(np.real(z))), repr(float(np.imag(z)))])
    return path


def load_field(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    re, im = data[:, 1], data[:, 2]
    return re.copy() if not np.any(im) else re + 1j * im
