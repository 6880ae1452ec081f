"""
Forward Helmholtz solves with point sources.

The total field of Δu + k²(1+n)u = Σ λ_j δ(x − x_j) is split as

    u = û − Σ λ_j G(x_j; ·),      ΔG + k²G = −δ,   G = (i/4) H0⁽¹⁾(k|x − y|),

so that the FEM only sees the regular part û, which solves

    Δû + k²(1+n)û = k² n Σ λ_j G(x_j; ·),    û = f + Σ λ_j G(x_j; ·) on ∂Ω.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .mesh_fem import (
    HelmholtzSystem,
    Mesh,
    MeshError,
    assemble,
    build_unit_square_mesh,
    neumann_trace,
    solve_dirichlet,
)
from .special import hankel1_01

log = logging.getLogger(__name__)


class SingularityError(ValueError):
    """Fundamental solution evaluated at its singular point."""


class SourceConfigError(ValueError):
    """A point-source set violates the separation / margin / strength assumptions."""


class SingularContrastWarning(UserWarning):
    """A point source sits inside supp(n); the regular-part right-hand side
    then keeps an integrable log singularity and accuracy degrades."""


# ------------------------------------------------------ fundamental solution

def _radial(k: float, d: np.ndarray, order: int):
    r = np.linalg.norm(d, axis=-1)
    if np.any(r <= 1e-13):
        raise SingularityError("fundamental solution evaluated at x = y")
    h0, h1 = hankel1_01(k * r)
    g = 0.25j * h0
    if order == 0:
        return r, g, None, None
    dg = -0.25j * k * h1                        # dG/dr
    if order == 1:
        return r, g, dg, None
    d2g = -0.25j * k * k * (h0 - h1 / (k * r))  # d²G/dr²
    return r, g, dg, d2g


def fundamental_solution(k: float, x, y) -> np.ndarray:
    """2D free-space G(x, y) = (i/4) H0⁽¹⁾(k|x − y|); broadcasts over points."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return _radial(k, d, 0)[1]


def fundamental_solution_grad(k: float, x, y) -> np.ndarray:
    """∇ₓG(x, y), shape (..., 2)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r, _, dg, _ = _radial(k, d, 1)
    return (dg / r)[..., None] * d


def fundamental_solution_hessian(k: float, x, y) -> np.ndarray:
    """∇ₓ∇ₓG(x, y), shape (..., 2, 2)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r, _, dg, d2g = _radial(k, d, 2)
    e = d / r[..., None]
    ee = e[..., :, None] * e[..., None, :]
    eye = np.broadcast_to(np.eye(2), ee.shape)
    return d2g[..., None, None] * ee + (dg / r)[..., None, None] * (eye - ee)


# ------------------------------------------------------------- data types

@dataclass
class PointSourceSet:
    """m point sources Σ λ_j δ(x − x_j)."""

    locations: np.ndarray
    strengths: np.ndarray

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.strengths = np.atleast_1d(np.asarray(self.strengths, dtype=float))
        if self.locations.shape != (self.strengths.size, 2):
            raise SourceConfigError(
                f"locations {self.locations.shape} and strengths {self.strengths.shape} disagree")

    @property
    def m(self) -> int:
        return self.strengths.size

    def min_separation(self) -> float:
        if self.m < 2:
            return np.inf
        d = np.linalg.norm(self.locations[:, None] - self.locations[None], axis=-1)
        return float(d[np.triu_indices(self.m, 1)].min())

    def min_boundary_distance(self) -> float:
        p = self.locations
        return float(np.min([p[:, 0], 1 - p[:, 0], p[:, 1], 1 - p[:, 1]]))

    def validate(self, c_sep: float = 0.1, c_bdy: float = 0.1,
                 strength_bounds: tuple[float, float] = (0.1, 2.0)) -> "PointSourceSet":
        lo, hi = strength_bounds
        if not 0 < lo <= hi < np.inf:
            raise SourceConfigError(f"bad strength bounds {strength_bounds}")
        if self.min_separation() < c_sep:
            raise SourceConfigError(f"sources closer than c_sep={c_sep}")
        if self.min_boundary_distance() < c_bdy:
            raise SourceConfigError(f"source within c_bdy={c_bdy} of the boundary")
        if np.any(self.strengths < lo) or np.any(self.strengths > hi):
            raise SourceConfigError(f"strengths outside [{lo}, {hi}]")
        return self

    def permuted(self, perm: Sequence[int]) -> "PointSourceSet":
        perm = np.asarray(perm)
        return PointSourceSet(self.locations[perm].copy(), self.strengths[perm].copy())

    def to_dict(self) -> dict:
        return {"locations": self.locations.tolist(), "strengths": self.strengths.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PointSourceSet":
        return cls(np.asarray(d["locations"], dtype=float), np.asarray(d["strengths"], dtype=float))


@dataclass
class CauchyData:
    """Boundary Cauchy pair (f, g) on the boundary nodes of ``mesh``."""

    mesh: Mesh
    f: np.ndarray
    g: np.ndarray
    k: float
    tau: float = 0.0
    seed: Optional[object] = None

    def __post_init__(self):
        nb = self.mesh.n_boundary
        self.f = np.asarray(self.f, dtype=complex)
        self.g = np.asarray(self.g, dtype=complex)
        if self.f.shape != (nb,) or self.g.shape != (nb,):
            raise MeshError("Cauchy data must live on the mesh boundary nodes")

    def restrict(self, coarse: Mesh) -> "CauchyData":
        """Nodal injection onto a coarser mesh whose boundary nodes are a subset."""
        return CauchyData(coarse, restrict_boundary(self.f, self.mesh, coarse),
                          restrict_boundary(self.g, self.mesh, coarse), self.k, self.tau, self.seed)

    def save(self, csv_path) -> list[Path]:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["boundary_node", "f_re", "f_im", "g_re", "g_im"])
            for node, fv, gv in zip(self.mesh.boundary_nodes, self.f, self.g):
                w.writerow([int(node), repr(float(fv.real)), repr(float(fv.imag)),
                            repr(float(gv.real)), repr(float(gv.imag))])
        side = csv_path.with_suffix(".json")
        seed = self.seed if self.seed is None or isinstance(self.seed, int) else list(self.seed)
        side.write_text(json.dumps({"k": self.k, "tau": self.tau, "seed": seed,
                                    "mesh_N": self.mesh.N}, indent=2))
        return [csv_path, side]

    @classmethod
    def load(cls, csv_path) -> "CauchyData":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        mesh = build_unit_square_mesh(meta["mesh_N"])
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        if not np.array_equal(data[:, 0].astype(np.int64), mesh.boundary_nodes):
            raise MeshError("boundary node ids do not match the mesh")
        seed = meta["seed"]
        seed = tuple(seed) if isinstance(seed, list) else seed
        return cls(mesh, data[:, 1] + 1j * data[:, 2], data[:, 3] + 1j * data[:, 4],
                   meta["k"], meta["tau"], seed)


def restrict_boundary(values: np.ndarray, fine: Mesh, coarse: Mesh) -> np.ndarray:
    if fine.N % coarse.N:
        raise MeshError(f"coarse N={coarse.N} does not divide fine N={fine.N}")
    step = fine.N // coarse.N
    out = np.asarray(values)[::step]
    if not np.allclose(fine.nodes[fine.boundary_nodes[::step]], coarse.boundary_points):
        raise MeshError("boundary nodes are not nested")  # pragma: no cover
    return out.copy()


class Medium:
    """A real refractive index given as a function of position."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], name: str = "custom",
                 metadata: Optional[dict] = None):
        self.func = func
        self.name = name
        self.metadata = dict(metadata or {})

    def __call__(self, points) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(points)), dtype=float)

    def on(self, mesh: Mesh) -> np.ndarray:
        return self(mesh.nodes)

    def perturbed(self, other: "Medium", eps: float) -> "Medium":
        if eps == 0:
            return self
        return Medium(lambda p: self.func(p) + eps * other.func(p), f"{self.name}+{eps}*{other.name}",
                      {**self.metadata, "perturbation": other.name, "eps": eps})

    @staticmethod
    def homogeneous() -> "Medium":
        return Medium(lambda p: np.zeros(len(p)), "homogeneous")


@dataclass
class Scene:
    """Medium, sources and wavenumber."""

    medium: Medium
    sources: PointSourceSet
    k: float = 8.0

    def index_on(self, mesh: Mesh) -> np.ndarray:
        n = self.medium.on(mesh)
        check_compact_support(mesh, n)
        return n


def check_compact_support(mesh: Mesh, n: np.ndarray):
    """supp(n) ⊂⊂ Ω at mesh level: n vanishes on the boundary nodes, and 1 + n > 0."""
    if np.any(n[mesh.boundary_nodes] != 0):
        raise SourceConfigError("refractive index must vanish on the boundary")
    if np.any(1 + n <= 0):
        raise SourceConfigError("1 + n must be positive")


# ------------------------------------------------------------ forward solves

def plane_wave(k: float, direction, points) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return np.exp(1j * k * (np.atleast_2d(points) @ d))


def plane_wave_trace(mesh: Mesh, k: float, direction=(1.0, 0.0)) -> np.ndarray:
    return plane_wave(k, direction, mesh.boundary_points)


def plane_wave_normal_derivative(mesh: Mesh, k: float, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    nu = mesh.boundary_node_normals()
    return 1j * k * (nu @ d) * plane_wave_trace(mesh, k, d)


def probe_directions(J: int) -> np.ndarray:
    # half circle: for real n the probe −d only returns the conjugate of +d
    ang = np.pi * np.arange(J) / J
    return np.column_stack([np.cos(ang), np.sin(ang)])


def default_probes(mesh: Mesh, k: float, J: int = 6) -> list[np.ndarray]:
    """J plane-wave traces with directions π/J apart."""
    return [plane_wave_trace(mesh, k, d) for d in probe_directions(J)]


def source_fields(mesh: Mesh, k: float, sources: PointSourceSet,
                  nodes_idx: Optional[np.ndarray] = None):
    """Σλ G(x_j; ·) at the nodes ``nodes_idx`` (all nodes by default, zero
    elsewhere) and Σλ ∂νG(x_j; ·) at the boundary nodes."""
    idx = np.arange(mesh.n_nodes) if nodes_idx is None else nodes_idx
    pts = mesh.nodes[idx]
    bpts = mesh.boundary_points
    nu = mesh.boundary_node_normals()
    G = np.zeros(mesh.n_nodes, dtype=complex)
    dG = np.zeros(mesh.n_boundary, dtype=complex)
    for xj, lam in zip(sources.locations, sources.strengths):
        G[idx] += lam * fundamental_solution(k, pts, xj)
        # G is symmetric; ∂ν acts on the observation point on ∂Ω
        dG += lam * np.einsum("bd,bd->b", fundamental_solution_grad(k, bpts, xj), nu)
    return G, dG


class ForwardSolver:
    """Point-source forward model for a fixed mesh, medium and wavenumber.

    Holds one assembled system and its factorization, so repeated solves with
    different sources or boundary data cost one back-substitution each.
    """

    def __init__(self, mesh: Mesh, n: np.ndarray, k: float, system: Optional[HelmholtzSystem] = None):
        self.mesh = mesh
        self.k = float(k)
        self.n = np.asarray(n, dtype=float)
        self.system = assemble(mesh, self.n, k) if system is None else system
        self.contrast = self.system.contrast_mass.tocsr()
        self.contrast.eliminate_zeros()
        # nodes where G enters the discrete problem: ∂Ω and the rows touched by n
        touched = np.flatnonzero(np.diff(self.contrast.indptr))
        self.active = np.union1d(mesh.boundary_nodes, touched)
        self._warned = False

    def _check_sources(self, sources: PointSourceSet):
        if sources.m == 0:
            return
        p = sources.locations
        if np.any(p <= 0) or np.any(p >= 1):
            raise SourceConfigError("point sources must lie strictly inside Ω")
        if not self._warned and np.any(self.mesh.interpolate(self.n, p) != 0):
            warnings.warn("point source inside supp(n): regular-part forcing keeps a log "
                          "singularity", SingularContrastWarning, stacklevel=3)
            self._warned = True

    def solve(self, f, sources: Optional[PointSourceSet] = None):
        """Return (û, g) with g = ∂νû − Σλ∂νG on the boundary nodes."""
        f = np.asarray(f, dtype=complex)
        if sources is None or sources.m == 0:
            u = solve_dirichlet(self.system, f)
            return u, neumann_trace(self.system, u)
        self._check_sources(sources)
        G, dG = source_fields(self.mesh, self.k, sources, self.active)
        load = -self.k ** 2 * (self.contrast @ G)
        u_hat = solve_dirichlet(self.system, f + G[self.mesh.boundary_nodes], load=load)
        g = neumann_trace(self.system, u_hat, load=load) - dG
        return u_hat, g

    def total_field(self, u_hat: np.ndarray, sources: PointSourceSet, points) -> np.ndarray:
        """Reconstruct u = û − ΣλG at points away from the sources."""
        pts = np.atleast_2d(points)
        u = self.mesh.interpolate(u_hat, pts)
        for xj, lam in zip(sources.locations, sources.strengths):
            u = u - lam * fundamental_solution(self.k, pts, xj)
        return u

    def dtn(self, h) -> np.ndarray:
        """Λ_n h: Neumann trace of the source-free solution with Dirichlet data h."""
        v = solve_dirichlet(self.system, np.asarray(h, dtype=complex))
        return neumann_trace(self.system, v)


def solve_with_point_sources(scene: Scene, f, mesh: Mesh):
    """Singularity-subtracted solve; returns (û, clean CauchyData)."""
    solver = ForwardSolver(mesh, scene.index_on(mesh), scene.k)
    u_hat, g = solver.solve(f, scene.sources)
    return u_hat, CauchyData(mesh, np.asarray(f, dtype=complex), g, scene.k, 0.0, None)


def noise_rng(seed) -> np.random.Generator:
    """PCG64 stream from an int or a tuple of ints (e.g. (seed, level, realization))."""
    if isinstance(seed, (tuple, list)):
        ss = np.random.SeedSequence(int(seed[0]), spawn_key=tuple(int(s) for s in seed[1:]))
    else:
        ss = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(ss))


def multiplicative_noise(g: np.ndarray, tau: float, seed) -> np.ndarray:
    """g ↦ g (1 + τ U[−1, 1]) with one real factor per sample."""
    if tau < 0:
        raise ValueError("noise level must be non-negative")
    g = np.asarray(g)
    if tau == 0:
        return g.copy()
    u = noise_rng(seed).uniform(-1.0, 1.0, size=g.shape)
    return g * (1.0 + tau * u)


def add_noise(data: CauchyData, tau: float, seed) -> CauchyData:
    """Pollute the Neumann trace only; f is the known control."""
    return replace(data, g=multiplicative_noise(data.g, tau, seed), tau=float(tau), seed=seed)


def differential_data(solver: ForwardSolver, probes: Sequence[np.ndarray],
                      f=None, sources: Optional[PointSourceSet] = None,
                      via_difference: bool = False) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs (h_j, Λ_n h_j).

    With ``via_difference`` the traces are formed as the difference of two
    point-source solves with Dirichlet data f + h_j and f, as in a physical
    experiment; otherwise directly from the source-free problem.
    """
    out = []
    if via_difference:
        if f is None:
            raise ValueError("difference construction needs the illumination f")
        _, g0 = solver.solve(f, sources)
        for h in probes:
            _, g1 = solver.solve(np.asarray(f) + h, sources)
            out.append((np.asarray(h, dtype=complex), g1 - g0))
    else:
        for h in probes:
            out.append((np.asarray(h, dtype=complex), solver.dtn(h)))
    return out
