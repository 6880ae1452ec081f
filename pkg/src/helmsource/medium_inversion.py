"""
Refractive-index reconstruction from J differential data sets.

Φ(n) = ½ Σ_j ‖Λ_n h_j − g*_j‖²_{∂Ω} + (β/2) nᵀKn on the P1 mesh, minimized by
projected L-BFGS over the nodes inside the support mask. The gradient is the
exact derivative of this discrete Φ, obtained from one adjoint solve per
probe whose Dirichlet data is the conjugated boundary residual.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .forward import SourceConfigError, check_compact_support
from .mesh_fem import (
    HelmholtzSystem,
    Mesh,
    ResonanceError,
    mass_matrix,
    neumann_trace,
    save_field,
    solve_dirichlet,
    stiffness_matrix,
    trilinear_vector,
)
from .optim import OptimResult, minimize_box

log = logging.getLogger(__name__)


@dataclass
class MediumInversionConfig:
    """Settings for ``invert_medium``.

    ``n0`` is a nodal initial guess (None means n₀ = 0). With
    ``continuation`` the weight β is divided by 10 every
    ``continuation_every`` iterations. ``background_scan`` = (c_min, c_max,
    count) replaces n₀ by the best c·s(x) on that grid, where s is the
    smoothed indicator of the support mask; it lets the descent start past
    Dirichlet resonances that a monotone iteration cannot cross.
    """

    beta: float = 1e-4
    J: int = 6
    max_iters: int = 200
    gtol: float = 1e-9
    n_bounds: tuple = (-0.5, 1.5)
    support_margin: float = 0.05
    lbfgs_memory: int = 10
    c1: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 0.1
    continuation: bool = False
    continuation_every: int = 50
    n0: Optional[list] = None
    background_scan: Optional[tuple] = None
    taper_width: float = 0.05

    def validate(self) -> "MediumInversionConfig":
        lo, hi = self.n_bounds
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if lo <= -1 or lo > hi:
            raise ValueError("n_bounds must satisfy -1 < lower <= upper")
        if self.J < 1 or self.max_iters < 0 or self.lbfgs_memory < 1:
            raise ValueError("J >= 1, max_iters >= 0 and lbfgs_memory >= 1 required")
        if self.support_margin < 0 or self.gtol < 0:
            raise ValueError("support_margin and gtol must be non-negative")
        if self.background_scan is not None:
            c0, c1, count = self.background_scan
            if not (c0 < c1 and int(count) >= 2):
                raise ValueError("background_scan needs c_min < c_max and count >= 2")
        if self.taper_width <= 0:
            raise ValueError("taper_width must be positive")
        if not (0 < self.c1 < 1 and 0 < self.shrink < 1):
            raise ValueError("line search needs 0 < c1 < 1 and 0 < shrink < 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "MediumInversionConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown medium-inversion keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("n_bounds", "background_scan"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_bounds"] = list(self.n_bounds)
        if self.background_scan is not None:
            d["background_scan"] = list(self.background_scan)
        return d


def support_mask(mesh: Mesh, margin: float) -> np.ndarray:
    """Nodes farther than ``margin`` from ∂Ω (never boundary nodes)."""
    d = mesh.distance_to_boundary()
    return (d > margin) & (d > 0)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def support_profile(mesh: Mesh, margin: float, width: float = 0.05) -> np.ndarray:
    """Smooth 0→1 ramp over distances [margin, margin + width] from ∂Ω."""
    d = mesh.distance_to_boundary()
    return np.where(support_mask(mesh, margin), _smoothstep((d - margin) / width), 0.0)


def scan_background(problem: "MediumProblem", profile: np.ndarray, c_min: float, c_max: float,
                    count: int) -> tuple[float, list]:
    """Best c for n = c·profile: grid search, then a grid ten times finer around it.

    Resonant trial points count as +inf. Returns (c, [(c, Φ), ...]).
    """
    table = []

    def phi(c):
        try:
            v = problem.evaluate(c * profile, gradient=False)[0]
        except (ResonanceError, SourceConfigError):
            v = np.inf
        table.append((float(c), float(v)))
        return v

    grid = np.linspace(c_min, c_max, int(count))
    vals = [phi(c) for c in grid]
    step = grid[1] - grid[0]
    c = grid[int(np.argmin(vals))]
    fine = np.linspace(c - step, c + step, 21)
    fine = fine[(fine >= c_min) & (fine <= c_max)]
    fvals = [phi(x) for x in fine]
    best = min(zip(vals + fvals, list(grid) + list(fine)))
    return float(best[1]), sorted(table)


def _canonical_order(probes) -> list[int]:
    # fixed reduction order independent of how the probes were listed
    return sorted(range(len(probes)), key=lambda j: np.asarray(probes[j], dtype=complex).tobytes())


class MediumProblem:
    """Discrete Φ for fixed probes and measurements on one mesh."""

    def __init__(self, mesh: Mesh, k: float, probes: Sequence[np.ndarray],
                 measured: Sequence[np.ndarray], beta: float = 0.0):
        if len(probes) != len(measured):
            raise ValueError("one measurement per probe required")
        if len(probes) == 0:
            raise ValueError("at least one probe required")
        self.mesh = mesh
        self.k = float(k)
        order = _canonical_order(probes)
        self.probes = [np.asarray(probes[j], dtype=complex) for j in order]
        self.measured = [np.asarray(measured[j], dtype=complex) for j in order]
        self.order = order
        self.beta = float(beta)
        self.K = stiffness_matrix(mesh)
        self.M = mass_matrix(mesh)

    def system(self, n) -> HelmholtzSystem:
        n = np.asarray(n, dtype=float)
        check_compact_support(self.mesh, n)
        return HelmholtzSystem(self.mesh, n, self.k, K=self.K, M=self.M)

    def regularizer(self, n) -> float:
        return 0.5 * self.beta * float(n @ (self.K @ n))

    def evaluate(self, n, gradient: bool = True):
        """(Φ, dΦ/dn as a nodal dual vector or None, per-probe residual norms)."""
        n = np.asarray(n, dtype=float)
        sysm = self.system(n)
        Mb = sysm.M_bdy
        B = sysm.boundary
        data, norms = 0.0, []
        grad = np.zeros(self.mesh.n_nodes) if gradient else None
        for h, gs in zip(self.probes, self.measured):
            v = solve_dirichlet(sysm, h)
            r = neumann_trace(sysm, v) - gs
            e = float(np.real(np.vdot(r, Mb @ r)))
            data += 0.5 * e
            norms.append(np.sqrt(max(e, 0.0)))
            if gradient:
                w = np.zeros(self.mesh.n_nodes, dtype=complex)
                w[B] = np.conj(r)
                w[sysm.interior] = sysm.solve_interior(-(sysm.A_IB @ w[B]))
                grad -= self.k ** 2 * np.real(trilinear_vector(self.mesh, w, v))
        phi = data + self.regularizer(n)
        if gradient:
            grad += self.beta * (self.K @ n)
        # report norms in the caller's probe order
        inv = np.empty(len(norms))
        inv[self.order] = norms
        return phi, grad, inv


def medium_objective(n, probes, measured, mesh: Mesh, k: float, beta: float = 0.0) -> float:
    """Φ(n) for lists of probe traces h_j and measured Neumann traces g*_j."""
    return MediumProblem(mesh, k, probes, measured, beta).evaluate(n, gradient=False)[0]


def medium_gradient(n, probes, measured, mesh: Mesh, k: float, beta: float = 0.0,
                    mask: Optional[np.ndarray] = None, riesz: bool = False) -> np.ndarray:
    """dΦ/dn with nodes outside ``mask`` zeroed.

    By default the nodal dual vector is returned, so ⟨grad, δn⟩ is the plain
    dot product. ``riesz=True`` returns the representative in the P1 mass
    inner product on the masked nodes instead.
    """
    g = MediumProblem(mesh, k, probes, measured, beta).evaluate(n)[1]
    if mask is not None:
        g = np.where(mask, g, 0.0)
    if riesz:
        g = riesz_representative(mesh, g, mask)
    return g


def riesz_representative(mesh: Mesh, dual: np.ndarray, mask: Optional[np.ndarray] = None,
                         M=None) -> np.ndarray:
    from scipy.sparse.linalg import spsolve

    M = mass_matrix(mesh) if M is None else M
    free = np.ones(mesh.n_nodes, bool) if mask is None else np.asarray(mask, bool)
    out = np.zeros(mesh.n_nodes)
    idx = np.flatnonzero(free)
    out[idx] = spsolve(M[idx][:, idx].tocsc(), dual[idx])
    return out


@dataclass
class InversionReport:
    phi_history: list
    grad_norms: list
    final_grad_norm: float
    iterations: int
    evaluations: int
    elapsed: float
    converged: bool
    message: str
    probe_residuals: list
    n: np.ndarray = field(repr=False, default=None)
    line_search_failure: Optional[dict] = None
    stages: list = field(default_factory=list)
    background_scan: Optional[list] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("n")
        return d

    def save(self, json_path, n_csv_path=None) -> list[Path]:
        json_path = Path(json_path)
        json_path.write_text(json.dumps(self.to_dict(), indent=2, default=float))
        out = [json_path]
        if n_csv_path is not None:
            out.append(save_field(n_csv_path, self.n))
        return out


def invert_medium(config: MediumInversionConfig, probes, measured, mesh: Mesh, k: float):
    """Projected L-BFGS on Φ; returns (n_rec, InversionReport).

    Only nodes inside the support mask move; the rest stay at 0. Variables
    are scaled by the square root of the lumped mass so that the iteration
    sees a mesh-independent metric.
    """
    config.validate()
    t0 = time.perf_counter()
    mask = support_mask(mesh, config.support_margin)
    free = np.flatnonzero(mask)
    problem = MediumProblem(mesh, k, probes, measured, config.beta)
    scale = np.sqrt(np.asarray(problem.M.sum(axis=1)).ravel()[free])
    n = np.zeros(mesh.n_nodes) if config.n0 is None else np.asarray(config.n0, dtype=float).copy()
    if n.shape != (mesh.n_nodes,):
        raise ValueError("n0 must have one value per node")
    n[~mask] = 0.0
    lo, hi = config.n_bounds
    scan = None
    if config.background_scan is not None:
        prof = support_profile(mesh, config.support_margin, config.taper_width)
        c, scan = scan_background(problem, prof, *config.background_scan)
        n = c * prof
    n[free] = np.clip(n[free], lo, hi)

    def full(z):
        v = np.zeros(mesh.n_nodes)
        v[free] = z / scale
        return v

    def fun_grad(z):
        try:
            phi, g, _ = problem.evaluate(full(z))
        except (ResonanceError, SourceConfigError) as exc:
            log.info("rejected trial point: %s", exc)
            return np.inf, np.zeros_like(z)
        return phi, g[free] / scale

    stages, hist, gns = [], [], []
    iters = nfev = 0
    z = n[free] * scale
    res: Optional[OptimResult] = None
    remaining = config.max_iters
    while True:
        chunk = min(remaining, config.continuation_every) if config.continuation else remaining
        res = minimize_box(fun_grad, z, lo * scale, hi * scale, memory=config.lbfgs_memory,
                           max_iters=chunk, gtol=config.gtol, c1=config.c1, shrink=config.shrink,
                           max_backtracks=config.max_backtracks, initial_step=config.initial_step)
        z = res.x
        iters += res.iterations
        nfev += res.evaluations
        hist.extend(res.history if not hist else res.history[1:])
        gns.extend(res.grad_norms)
        stages.append({"beta": problem.beta, "iterations": res.iterations, "message": res.message})
        remaining -= res.iterations
        if not config.continuation or res.converged or res.line_search_failure or remaining <= 0:
            break
        problem.beta /= 10.0

    n = full(z)
    _, _, norms = problem.evaluate(n, gradient=False)
    rep = InversionReport(hist, gns, gns[-1] if gns else 0.0, iters, nfev,
                          time.perf_counter() - t0, res.converged, res.message,
                          [float(x) for x in norms], n, res.line_search_failure, stages, scan)
    if res.line_search_failure:
        log.warning("medium inversion line search failed: %s", res.line_search_failure)
    return n, rep
