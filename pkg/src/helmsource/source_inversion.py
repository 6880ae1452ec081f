"""
Point-source reconstruction from one Cauchy pair in a known medium.

Ψ(x, λ) = ½ ∫_∂Ω |∂νu − g*|² d𝔰 is minimized over locations and strengths.
With ρ = conj(∂νu − g*) and the adjoint w (Δw + k²(1+n)w = 0, w = ρ on ∂Ω)
the continuous derivatives are dΨ/dλ_j = Re w(x_j) and
∇_{x_j}Ψ = λ_j Re ∇w(x_j). ``SourceModel.value_and_grad`` differentiates the
discrete (singularity-subtracted) objective exactly through the same adjoint;
``pointwise_gradient`` interpolates w and ∇w instead, an O(h) approximation
of the same quantity.

The data depend linearly on λ and smoothly on x, so the reconstruction
first searches a cheap surrogate (bicubic interpolation of tabulated
single-source responses) from many random starts, then refines the best
distinct candidates on the full discrete model with a trust-region
Gauss-Newton iteration.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, lsq_linear
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .forward import (
    CauchyData,
    ForwardSolver,
    PointSourceSet,
    SingularityError,
    SourceConfigError,
    _radial,
)
from .mesh_fem import Mesh

log = logging.getLogger(__name__)


@dataclass
class SourceInversionConfig:
    """Settings of the multi-start source inversion.

    Penalties are in the raw units of Ψ: ``sep_weight`` Σ max(0, c_sep − |x_i − x_j|)²
    plus ``bdy_weight`` Σ_j Σ_sides max(0, c_bdy − dist_side(x_j))².
    ``restarts`` random starts are run on the surrogate and the best
    ``finalists`` distinct minima are refined on the full model.
    """

    m: int = 4
    restarts: int = 32
    finalists: int = 3
    scan_resolution: int = 24
    c_sep: float = 0.1
    c_bdy: float = 0.1
    sep_weight: float = 10.0
    bdy_weight: float = 10.0
    strength_bounds: tuple = (0.1, 2.0)
    max_iters: int = 60
    tol: float = 1e-10
    seed: int = 0

    def validate(self) -> "SourceInversionConfig":
        lo, hi = self.strength_bounds
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.c_sep <= 0 or self.c_bdy <= 0:
            raise ValueError("c_sep and c_bdy must be positive")
        if not 0 < lo <= hi:
            raise ValueError("strength bounds need 0 < lower <= upper")
        if self.restarts < 1 or self.finalists < 1 or self.scan_resolution < 2:
            raise ValueError("restarts >= 1, finalists >= 1, scan_resolution >= 2")
        if self.sep_weight < 0 or self.bdy_weight < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.max_iters < 1 or self.tol <= 0:
            raise ValueError("max_iters >= 1 and tol > 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SourceInversionConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown source-inversion keys: {sorted(unknown)}")
        d = dict(d)
        if "strength_bounds" in d:
            d["strength_bounds"] = tuple(d["strength_bounds"])
        return cls(**d).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strength_bounds"] = list(self.strength_bounds)
        return d


# ------------------------------------------------------------------ penalty

_SIDE_GRAD = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def _side_distances(x: np.ndarray) -> np.ndarray:
    return np.stack([x[:, 0], 1 - x[:, 0], x[:, 1], 1 - x[:, 1]], axis=1)


def penalty_residuals(locations: np.ndarray, config: SourceInversionConfig):
    """Residuals p with ½‖p‖² equal to the hinge penalty, and ∂p/∂x (len(p), m, 2)."""
    x = np.atleast_2d(locations)
    m = len(x)
    pairs = list(itertools.combinations(range(m), 2))
    res = np.zeros(len(pairs) + 4 * m)
    jac = np.zeros((len(res), m, 2))
    ws = np.sqrt(2.0 * config.sep_weight)
    for q, (i, j) in enumerate(pairs):
        d = x[i] - x[j]
        r = np.linalg.norm(d)
        if r < config.c_sep:
            res[q] = ws * (config.c_sep - r)
            if r > 0:
                jac[q, i] = -ws * d / r
                jac[q, j] = ws * d / r
    wb = np.sqrt(2.0 * config.bdy_weight)
    gap = config.c_bdy - _side_distances(x)
    q0 = len(pairs)
    for j in range(m):
        for s in range(4):
            if gap[j, s] > 0:
                res[q0 + 4 * j + s] = wb * gap[j, s]
                jac[q0 + 4 * j + s, j] = -wb * _SIDE_GRAD[s]
    return res, jac


def penalty(sources: PointSourceSet, config: SourceInversionConfig):
    """Hinge penalty value and its location gradient (m, 2)."""
    p, dp = penalty_residuals(sources.locations, config)
    return 0.5 * float(p @ p), np.einsum("q,qjc->jc", p, dp)


# ------------------------------------------------------------- the model

class SourceModel:
    """Discrete forward map (x, λ) ↦ g with exact adjoint gradient and Jacobian.

    Shares the assembled system and factorization of ``solver``.
    """

    def __init__(self, solver: ForwardSolver):
        self.solver = solver
        sysm = solver.system
        self.mesh: Mesh = solver.mesh
        self.k = solver.k
        self._nu = self.mesh.boundary_node_normals()
        self._D = solver.contrast
        self._active = solver.active
        self._A_B = sysm.A[sysm.boundary].tocsr()
        self._chol = np.linalg.cholesky(sysm.M_bdy.toarray())   # M_bdy = L Lᵀ
        self._surrogates = {}
        self._f_cache = None

    # field evaluation -----------------------------------------------------

    def _terms(self, sources: PointSourceSet, order: int):
        """Per-source G (m, n_act) and ∂νG (m, nb); with ``order`` 1 also
        ∇_xG on active nodes (m, n_act, 2) and ∇_x ∂νG on ∂Ω (m, nb, 2), the
        gradients taken with respect to the source position."""
        pts = self.mesh.nodes[self._active]
        bpts = self.mesh.boundary_points
        x = sources.locations
        d_act = pts[None] - x[:, None]
        d_bdy = bpts[None] - x[:, None]
        r, G, dG, _ = _radial(self.k, d_act, 1 if order else 0)
        rb, _, dGb, d2Gb = _radial(self.k, d_bdy, 2 if order else 1)
        eb = d_bdy / rb[..., None]
        en = np.einsum("mbd,bd->mb", eb, self._nu)
        N = dGb * en
        if not order:
            return G, N, None, None
        gradG = -(dG / r)[..., None] * d_act            # ∂/∂x_j of G(y − x_j)
        # ∂/∂x_j [ν·∇G(y − x_j)] = −H(y − x_j) ν
        Hn = (d2Gb * en)[..., None] * eb + (dGb / rb)[..., None] * (self._nu[None] - en[..., None] * eb)
        return G, N, gradG, -Hn

    def _neumann(self, bdata, Gact, N):
        """Boundary flux for Dirichlet data ``bdata`` plus regular-part fields.

        ``Gact`` holds Σλ G on the active nodes and ``N`` Σλ ∂νG on ∂Ω, one
        column per right-hand side (1-D inputs give one column).
        """
        sysm = self.solver.system
        one = Gact.ndim == 1
        Gact = Gact.reshape(len(self._active), -1)
        N = N.reshape(self.mesh.n_boundary, -1)
        bdata = np.broadcast_to(np.asarray(bdata, dtype=complex).reshape(self.mesh.n_boundary, -1), N.shape)
        Gn = np.zeros((self.mesh.n_nodes, Gact.shape[1]), dtype=complex)
        Gn[self._active] = Gact
        load = -self.k ** 2 * (self._D @ Gn)
        u = np.empty_like(Gn)
        u[sysm.boundary] = bdata + Gn[sysm.boundary]
        u[sysm.interior] = sysm.solve_interior(load[sysm.interior] - sysm.A_IB @ u[sysm.boundary])
        g = sysm.boundary_mass_solve(self._A_B @ u - load[sysm.boundary]) - N
        return g[:, 0] if one else g

    # forward map ----------------------------------------------------------

    def predict(self, sources: PointSourceSet, f) -> np.ndarray:
        """Neumann data g of the point-source problem with Dirichlet data f."""
        if sources.m == 0:
            return self.solver.dtn(f)
        G, N, _, _ = self._terms(sources, 0)
        lam = sources.strengths
        return self._neumann(f, lam @ G, lam @ N)

    def residual(self, sources: PointSourceSet, f, g_star) -> np.ndarray:
        return self.predict(sources, f) - np.asarray(g_star)

    def misfit(self, sources: PointSourceSet, f, g_star) -> float:
        r = self.residual(sources, f, g_star)
        return 0.5 * float(np.real(np.conj(r) @ (self.solver.system.M_bdy @ r)))

    def jacobian(self, sources: PointSourceSet, f, g_star):
        """Residual r = g − g* and ∂r/∂(x₁, y₁, …, x_m, y_m, λ₁, …, λ_m) (nb, 3m)."""
        G, N, gG, gN = self._terms(sources, 1)
        lam = sources.strengths
        m = sources.m
        nb = self.mesh.n_boundary
        cols_G = np.concatenate([(lam[:, None, None] * gG).transpose(1, 0, 2).reshape(-1, 2 * m), G.T], axis=1)
        cols_N = np.concatenate([(lam[:, None, None] * gN).transpose(1, 0, 2).reshape(nb, 2 * m), N.T], axis=1)
        allG = np.concatenate([(lam @ G)[:, None], cols_G], axis=1)
        allN = np.concatenate([(lam @ N)[:, None], cols_N], axis=1)
        bd = np.zeros((nb, 3 * m + 1), dtype=complex)
        bd[:, 0] = f
        out = self._neumann(bd, allG, allN)
        return out[:, 0] - np.asarray(g_star), out[:, 1:]

    def value_and_grad(self, sources: PointSourceSet, f, g_star):
        """Return (Ψ_data, dΨ/dλ (m,), dΨ/dx (m, 2)) by one adjoint solve."""
        sysm = self.solver.system
        G, N, gG, gN = self._terms(sources, 1)
        lam = sources.strengths
        r = self._neumann(f, lam @ G, lam @ N) - np.asarray(g_star)
        Mr = sysm.M_bdy @ r
        val = 0.5 * float(np.real(np.conj(r) @ Mr))
        rho = np.conj(r)
        w = np.empty(self.mesh.n_nodes, dtype=complex)
        w[sysm.boundary] = rho
        w[sysm.interior] = sysm.solve_interior(-(sysm.A_IB @ rho))
        # dΨ = Re[aᵀ dG − (M ρ)ᵀ dN] with a = k² D w + (A w) on ∂Ω
        a = self.k ** 2 * (self._D @ w)
        a[sysm.boundary] += self._A_B @ w
        a = a[self._active]
        Mrho = np.conj(Mr)
        dlam = np.real(G @ a - N @ Mrho)
        dx = lam[:, None] * np.real(np.einsum("mnc,n->mc", gG, a) - np.einsum("mbc,b->mc", gN, Mrho))
        return val, dlam, dx

    def adjoint_field(self, sources: PointSourceSet, f, g_star) -> np.ndarray:
        sysm = self.solver.system
        rho = np.conj(self.residual(sources, f, g_star))
        w = np.empty(self.mesh.n_nodes, dtype=complex)
        w[sysm.boundary] = rho
        w[sysm.interior] = sysm.solve_interior(-(sysm.A_IB @ rho))
        return w

    def pointwise_gradient(self, sources: PointSourceSet, f, g_star):
        """Re w(x_j) and λ_j Re ∇w(x_j) with w interpolated from the P1 adjoint."""
        w = self.adjoint_field(sources, f, g_star)
        wv = self.mesh.interpolate(w, sources.locations)
        gw = self.mesh.interpolate_gradient(w, sources.locations)
        return np.real(wv), sources.strengths[:, None] * np.real(gw)

    def background(self, f) -> np.ndarray:
        """Λ_n f, cached for the last f."""
        f = np.asarray(f, dtype=complex)
        if self._f_cache is None or not np.array_equal(self._f_cache[0], f):
            self._f_cache = (f.copy(), self.solver.dtn(f))
        return self._f_cache[1]

    def unit_responses(self, points: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Source-only data of unit sources at ``points`` (nb, len(points))."""
        points = np.atleast_2d(points)
        out = np.empty((self.mesh.n_boundary, len(points)), dtype=complex)
        zero = np.zeros(self.mesh.n_boundary, dtype=complex)
        for s in range(0, len(points), chunk):
            p = points[s:s + chunk]
            G, N, _, _ = self._terms(PointSourceSet(p, np.ones(len(p))), 0)
            out[:, s:s + chunk] = self._neumann(zero[:, None], G.T, N.T)
        return out

    def surrogate(self, resolution: int, margin: float) -> "ResponseSurrogate":
        key = (resolution, margin)
        if key not in self._surrogates:
            self._surrogates[key] = ResponseSurrogate(self, resolution, margin)
        return self._surrogates[key]


class ResponseSurrogate:
    """Tensor Catmull-Rom interpolation of unit-source responses over
    [margin, 1 − margin]², tabulated on ``resolution`` cells plus one ghost
    layer per side. The table is offset by a fraction of a mesh cell so no
    sample sits on a mesh node."""

    def __init__(self, model: SourceModel, resolution: int, margin: float):
        self.lo, self.hi = margin, 1.0 - margin
        self.step = (self.hi - self.lo) / resolution
        off = model.mesh.h * np.array([0.3719, 0.2281])
        self.ax = [self.lo + off[c] + self.step * (np.arange(resolution + 3) - 1) for c in range(2)]
        self.offset = off
        pts = np.array([[a, b] for a in self.ax[0] for b in self.ax[1]])
        n = resolution + 3
        self.table = model.unit_responses(pts).T.reshape(n, n, -1)
        self.n = n

    @staticmethod
    def _weights(t):
        w = np.stack([(-t ** 3 + 2 * t ** 2 - t) / 2, (3 * t ** 3 - 5 * t ** 2 + 2) / 2,
                      (-3 * t ** 3 + 4 * t ** 2 + t) / 2, (t ** 3 - t ** 2) / 2], axis=-1)
        dw = np.stack([(-3 * t ** 2 + 4 * t - 1) / 2, (9 * t ** 2 - 10 * t) / 2,
                       (-9 * t ** 2 + 8 * t + 1) / 2, (3 * t ** 2 - 2 * t) / 2], axis=-1)
        return w, dw

    def __call__(self, x: np.ndarray):
        """Responses b (m, nb) and their x/y derivatives (m, nb, 2)."""
        x = np.atleast_2d(x)
        u = (x - self.lo - self.offset) / self.step + 1.0
        i = np.clip(np.floor(u).astype(int), 1, self.n - 3)
        t = u - i
        wx, dwx = self._weights(t[:, 0])
        wy, dwy = self._weights(t[:, 1])
        ii = i[:, 0][:, None] + np.arange(-1, 3)
        jj = i[:, 1][:, None] + np.arange(-1, 3)
        blk = self.table[ii[:, :, None], jj[:, None, :]]          # (m, 4, 4, nb)
        b = np.einsum("ma,mb,mabk->mk", wx, wy, blk)
        bx = np.einsum("ma,mb,mabk->mk", dwx, wy, blk) / self.step
        by = np.einsum("ma,mb,mabk->mk", wx, dwy, blk) / self.step
        return b, np.stack([bx, by], axis=-1)


# ----------------------------------------------------- functional wrappers

def _model_for(n, k, data: CauchyData, solver: Optional[ForwardSolver]):
    if solver is None:
        solver = ForwardSolver(data.mesh, n, k)
    return SourceModel(solver)


def source_objective(sources: PointSourceSet, n, k: float, data: CauchyData,
                     config: Optional[SourceInversionConfig] = None,
                     solver: Optional[ForwardSolver] = None) -> dict:
    """Ψ split into its data and penalty parts (``total`` is their sum)."""
    model = _model_for(n, k, data, solver)
    val = model.misfit(sources, data.f, data.g)
    pen = penalty(sources, config)[0] if config is not None else 0.0
    return {"data": val, "penalty": pen, "total": val + pen}


def source_gradient(sources: PointSourceSet, n, k: float, data: CauchyData,
                    config: Optional[SourceInversionConfig] = None,
                    solver: Optional[ForwardSolver] = None, pointwise: bool = False):
    """(dΨ/dλ_j, ∇_{x_j}Ψ) including penalty gradients when ``config`` is given.

    Raises SingularityError for a source within one element of ∂Ω, where
    the adjoint cannot be evaluated meaningfully.
    """
    if sources.m and sources.min_boundary_distance() < data.mesh.h:
        raise SingularityError("point source within one element of the boundary")
    model = _model_for(n, k, data, solver)
    if pointwise:
        dlam, dx = model.pointwise_gradient(sources, data.f, data.g)
    else:
        _, dlam, dx = model.value_and_grad(sources, data.f, data.g)
    if config is not None:
        dx = dx + penalty(sources, config)[1]
    return dlam, dx

# ------------------------------------------------------------------ matching

@dataclass
class MatchReport:
    permutation: list
    rho_x: float
    rho_lambda: float
    rho_x_proj: Optional[float] = None
    rho_x_frame: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _bottleneck_exact(C: np.ndarray):
    """Branch and bound over permutations; exact minimax assignment."""
    m = C.shape[0]
    order = np.argsort(C.min(axis=1))[::-1]          # hardest rows first
    best = [np.inf, None]
    # a greedy start gives a finite bound
    perm = np.empty(m, dtype=int)
    used = np.zeros(m, dtype=bool)

    def rec(depth, cur):
        if cur >= best[0]:
            return
        if depth == m:
            best[0], best[1] = cur, perm.copy()
            return
        i = order[depth]
        for j in np.argsort(C[i]):
            if used[j]:
                continue
            c = max(cur, C[i, j])
            if c >= best[0]:
                break
            used[j] = True
            perm[i] = j
            rec(depth + 1, c)
            used[j] = False

    rec(0, 0.0)
    return best[1], best[0]


def _bottleneck_threshold(C: np.ndarray):
    """Binary search over the sorted cost values with a perfect-matching test."""
    m = C.shape[0]
    vals = np.unique(C)
    lo, hi = 0, len(vals) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        adj = csr_matrix((C <= vals[mid]).astype(np.int8))
        match = maximum_bipartite_matching(adj, perm_type="column")
        if np.all(match >= 0):
            best = (match.copy(), vals[mid])
            hi = mid - 1
        else:
            lo = mid + 1
    return best[0], float(best[1])


def bottleneck_assignment(C: np.ndarray, exact_limit: int = 8):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("cost matrix must be square")
    if C.shape[0] == 0:
        return np.zeros(0, dtype=int), 0.0
    if C.shape[0] <= exact_limit:
        return _bottleneck_exact(C)
    return _bottleneck_threshold(C)


def match_sources(A: PointSourceSet, B: PointSourceSet, proj=None,
                  exact_limit: int = 8) -> MatchReport:
    """Bottleneck matching of B onto A: π minimizes max_j |a_j − b_π(j)|."""
    if A.m != B.m:
        raise SourceConfigError(f"cannot match {A.m} sources with {B.m}")
    C = np.linalg.norm(A.locations[:, None] - B.locations[None], axis=-1)
    perm, rho = bottleneck_assignment(C, exact_limit)
    perm = np.asarray(perm, dtype=int)
    rho_l = float(np.max(np.abs(A.strengths - B.strengths[perm]))) if A.m else 0.0
    rep = MatchReport([int(p) for p in perm], float(rho), rho_l)
    if proj is not None:
        rep.rho_x_proj = float(np.max(proj.dist(A.locations, B.locations[perm])))
        ua, ub = proj.coordinates(A.locations), proj.coordinates(B.locations[perm])
        rep.rho_x_frame = float(np.max(np.linalg.norm(ua - ub, axis=1)))
    return rep



# ---------------------------------------------------------------- inversion

@dataclass
class SourceInversionReport:
    psi_final: float
    psi_data: float
    penalty: float
    restarts_used: int
    candidates: list = field(default_factory=list)
    winner: int = 0
    iterations: int = 0
    elapsed: float = 0.0
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _pack(s: PointSourceSet) -> np.ndarray:
    return np.concatenate([s.locations.ravel(), s.strengths])


def _unpack(z: np.ndarray, m: int) -> PointSourceSet:
    return PointSourceSet(z[: 2 * m].reshape(m, 2).copy(), z[2 * m:].copy())


class _LeastSquares:
    """Real residual vector [Lᵀr (re, im); penalties] and its Jacobian, cached by x."""

    def __init__(self, config: SourceInversionConfig, chol: np.ndarray, evaluate):
        self.config = config
        self.Lt = chol.T
        self.evaluate = evaluate        # z -> (r, dr/dz)
        self._key = None

    def _eval(self, z):
        if self._key is None or not np.array_equal(self._key, z):
            m = self.config.m
            r, J = self.evaluate(z)
            e = self.Lt @ r
            Je = self.Lt @ J
            p, dp = penalty_residuals(z[: 2 * m].reshape(m, 2), self.config)
            Jp = np.zeros((len(p), 3 * m))
            Jp[:, : 2 * m] = dp.reshape(len(p), 2 * m)
            self._val = np.concatenate([e.real, e.imag, p])
            self._jac = np.vstack([Je.real, Je.imag, Jp])
            self._key = z.copy()
        return self._val, self._jac

    def fun(self, z):
        return self._eval(z)[0]

    def jac(self, z):
        return self._eval(z)[1]


def _solve_ls(problem: _LeastSquares, z0, lo, hi, config: SourceInversionConfig):
    z0 = np.clip(z0, lo + 1e-12, hi - 1e-12)
    return least_squares(problem.fun, z0, jac=problem.jac, bounds=(lo, hi), method="trf",
                         x_scale="jac", ftol=config.tol, xtol=config.tol, gtol=config.tol,
                         max_nfev=config.max_iters)


def _location_box(mesh: Mesh):
    # keep at least one element away from the boundary
    return 1.5 * mesh.h, 1.0 - 1.5 * mesh.h


def random_configuration(rng: np.random.Generator, m: int, lo: float, hi: float,
                         min_sep: float, tries: int = 1000) -> np.ndarray:
    for _ in range(tries):
        x = rng.uniform(lo, hi, size=(m, 2))
        if m < 2 or PointSourceSet(x, np.ones(m)).min_separation() >= min_sep:
            return x
    raise SourceConfigError(f"cannot place {m} sources {min_sep} apart")


def surrogate_candidates(model: SourceModel, data: CauchyData, config: SourceInversionConfig,
                         rng: np.random.Generator) -> list[tuple[float, PointSourceSet]]:
    """Local minima of Ψ on the response surrogate from ``config.restarts``
    random separated starts, sorted by surrogate Ψ with duplicates removed."""
    m = config.m
    sur = model.surrogate(config.scan_resolution, config.c_bdy)
    d = np.asarray(data.g) - model.background(data.f)
    lo_l, hi_l = config.strength_bounds
    lo = np.concatenate([np.full(2 * m, sur.lo), np.full(m, lo_l)])
    hi = np.concatenate([np.full(2 * m, sur.hi), np.full(m, hi_l)])
    Lt = model._chol.T

    def evaluate(z):
        x, lam = z[: 2 * m].reshape(m, 2), z[2 * m:]
        b, db = sur(x)
        r = lam @ b - d
        J = np.empty((len(d), 3 * m), dtype=complex)
        J[:, : 2 * m] = (lam[:, None, None] * db).transpose(1, 0, 2).reshape(len(d), 2 * m)
        J[:, 2 * m:] = b.T
        return r, J

    problem = _LeastSquares(config, model._chol, evaluate)
    found = []
    for _ in range(config.restarts):
        x0 = random_configuration(rng, m, sur.lo, sur.hi, 2 * config.c_sep)
        b, _ = sur(x0)
        A = Lt @ b.T
        fit = lsq_linear(np.vstack([A.real, A.imag]), np.concatenate([(Lt @ d).real, (Lt @ d).imag]),
                         bounds=(lo_l, hi_l))
        res = _solve_ls(problem, np.concatenate([x0.ravel(), fit.x]), lo, hi, config)
        found.append((float(res.cost), _unpack(res.x, m)))
    found.sort(key=lambda t: t[0])
    distinct = []
    for cost, s in found:
        if all(match_sources(s, t).rho_x > 0.5 * config.c_sep for _, t in distinct):
            distinct.append((cost, s))
    return distinct


def refine_sources(model: SourceModel, data: CauchyData, start: PointSourceSet,
                   config: SourceInversionConfig):
    """Trust-region Gauss-Newton on the full discrete model from ``start``."""
    m = start.m
    lo_x, hi_x = _location_box(model.mesh)
    lo = np.concatenate([np.full(2 * m, lo_x), np.full(m, config.strength_bounds[0])])
    hi = np.concatenate([np.full(2 * m, hi_x), np.full(m, config.strength_bounds[1])])

    def evaluate(z):
        return model.jacobian(_unpack(z, m), data.f, data.g)

    problem = _LeastSquares(replace_m(config, m), model._chol, evaluate)
    res = _solve_ls(problem, _pack(start), lo, hi, config)
    return _unpack(res.x, m), res


def replace_m(config: SourceInversionConfig, m: int) -> SourceInversionConfig:
    if config.m == m:
        return config
    d = config.to_dict()
    d["m"] = m
    return SourceInversionConfig.from_dict(d)


def invert_sources(config: SourceInversionConfig, n, data: CauchyData,
                   model: Optional[SourceModel] = None):
    """Multi-start reconstruction; returns (PointSourceSet, SourceInversionReport).

    The winner is the lowest final Ψ; ties go to the better surrogate rank.
    Sources are returned sorted by location so the output does not depend
    on labels.
    """
    config.validate()
    t0 = time.perf_counter()
    if model is None:
        model = SourceModel(ForwardSolver(data.mesh, n, data.k))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(config.seed))))
    cands = surrogate_candidates(model, data, config, rng)
    table, best = [], None
    for rank, (scost, s0) in enumerate(cands[: config.finalists]):
        try:
            s, res = refine_sources(model, data, s0, config)
        except (SingularityError, np.linalg.LinAlgError) as exc:
            log.warning("candidate %d failed: %s", rank, exc)
            table.append({"rank": rank, "surrogate_psi": scost, "psi": None, "nfev": 0,
                          "message": str(exc)})
            continue
        psi = float(res.cost)
        table.append({"rank": rank, "surrogate_psi": scost, "psi": psi, "nfev": int(res.nfev),
                      "message": str(res.message)})
        if best is None or psi < best[0]:
            best = (psi, rank, s, res)
    if best is None:
        raise RuntimeError("all candidates failed during refinement")
    psi, rank, s, res = best
    s = s.permuted(np.lexsort((s.locations[:, 1], s.locations[:, 0])))
    pen = penalty(s, config)[0]
    rep = SourceInversionReport(psi, psi - pen, pen, config.restarts, table, rank, int(res.nfev),
                                time.perf_counter() - t0, str(res.message))
    return s, rep


def save_result(path, sources: PointSourceSet, report: SourceInversionReport,
                match: Optional[MatchReport] = None) -> Path:
    path = Path(path)
    out = {"locations": sources.locations.tolist(), "strengths": sources.strengths.tolist(),
           "psi_final": report.psi_final, "restarts_used": report.restarts_used,
           "report": report.to_dict()}
    if match is not None:
        out["match_report"] = match.to_dict()
    path.write_text(json.dumps(out, indent=2, sort_keys=True))
    return path


def load_result(path) -> tuple[PointSourceSet, dict]:
    d = json.loads(Path(path).read_text())
    return PointSourceSet(np.asarray(d["locations"]), np.asarray(d["strengths"])), d


def write_strength_table(path, rows: Sequence[dict]) -> Path:
    """Rows {label, true, <column>: strengths...} in a table of tuples."""
    path = Path(path)
    cols = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt_cell(r.get(c, "")) for c in cols])
    return path


def _fmt_cell(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return "(" + ",".join(f"{float(x):.2f}" for x in v) + ")"
    return v
