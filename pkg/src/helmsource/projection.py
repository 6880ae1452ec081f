"""
Exponential solutions, the projection 𝒮 and reciprocity-gap test functions
for the homogeneous medium n ≡ 0.

φ(x) = exp(iζ·x) with ζ = η + iξ, η·ξ = 0, ζ·ζ = k² solves Δφ + k²φ = 0.
The frame e₁ = ζ/|ζ|, e₂ ⊥ e₁ gives the affine complex coordinate
𝒮(x) = conj(e₂·x), which satisfies Δ𝒮 = 0 and ∇φ·∇𝒮 = 0.

In two dimensions ∇𝒮·∇𝒮 = k²/|ζ|² does not vanish, so the product
φ Π(𝒮 − 𝒮(z_j)) only solves the Helmholtz equation for at most one zero.
``test_function`` therefore builds, by default, the exact solution
φ·Q(𝒮, ζ·x) where Q is the polynomial solution of ΔQ + 2iζ·∇Q = 0 whose
leading part is 𝒮^m and which vanishes at the prescribed zeros. Q tends to
Π(𝒮 − 𝒮(z_j)) as |ζ| → ∞; ``exact=False`` returns the plain product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .forward import CauchyData
from .mesh_fem import boundary_integral

_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class CgoParameterError(ValueError):
    pass


@dataclass(frozen=True)
class CgoSolution:
    """φ(x) = exp(iζ·x) on the unit square."""

    k: float
    eta: np.ndarray
    xi: np.ndarray

    @property
    def zeta(self) -> np.ndarray:
        return self.eta + 1j * self.xi

    @property
    def zeta_norm(self) -> float:
        return float(np.sqrt(self.eta @ self.eta + self.xi @ self.xi))

    def __call__(self, x) -> np.ndarray:
        return np.exp(1j * (np.atleast_2d(x) @ self.zeta))

    def grad(self, x) -> np.ndarray:
        return 1j * self.zeta[None, :] * self(x)[:, None]

    @property
    def theta(self) -> float:
        """inf |φ| = exp(−max ξ·x), attained at a corner."""
        return float(np.exp(-np.max(_CORNERS @ self.xi)))

    @property
    def vartheta(self) -> float:
        """sup (|φ| + |∇φ|) = (1 + |ζ|) exp(−min ξ·x)."""
        return float((1.0 + self.zeta_norm) * np.exp(-np.min(_CORNERS @ self.xi)))

    @property
    def mu(self) -> float:
        return self.vartheta / self.theta


def make_cgo(k: float, angle: float = 0.0, decay: float = 0.0,
             zeta_norm: Optional[float] = None) -> CgoSolution:
    """Admissible ζ with η along ``angle`` and |ξ| = ``decay``.

    Passing ``zeta_norm`` instead fixes |ζ| and derives |ξ| = √((|ζ|² − k²)/2).
    """
    if k <= 0:
        raise CgoParameterError("k must be positive")
    if zeta_norm is not None:
        if zeta_norm < k:
            raise CgoParameterError(f"|ζ|={zeta_norm} < k={k} is infeasible")
        decay = np.sqrt((zeta_norm ** 2 - k ** 2) / 2.0)
    if decay < 0:
        raise CgoParameterError("decay must be non-negative")
    d = np.array([np.cos(angle), np.sin(angle)])
    perp = np.array([-d[1], d[0]])
    eta = np.sqrt(k ** 2 + decay ** 2) * d
    return CgoSolution(float(k), eta, decay * perp)


@dataclass(frozen=True)
class Projection:
    """Unitary frame (e₁, e₂) with e₁ = ζ/|ζ| and the map 𝒮(x) = conj(e₂·x)."""

    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def from_cgo(cls, phi: CgoSolution) -> "Projection":
        e1 = phi.zeta / phi.zeta_norm
        e2 = np.array([-np.conj(e1[1]), np.conj(e1[0])])
        return cls(e1, e2)

    @property
    def frame(self) -> np.ndarray:
        return np.column_stack([self.e1, self.e2])

    @property
    def grad(self) -> np.ndarray:
        """Constant gradient of 𝒮."""
        return np.conj(self.e2)

    def __call__(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float)) @ np.conj(self.e2)

    def coordinates(self, x) -> np.ndarray:
        """Frame coordinates 𝒰(x) = [e₁ e₂]ᴴ x."""
        return np.atleast_2d(np.asarray(x, dtype=float)) @ np.conj(self.frame)

    def dist(self, x, y) -> np.ndarray:
        return np.abs(self(x) - self(y))

    def diameter(self) -> float:
        """diam_𝒮 of the unit square; 𝒮 is affine, so corners suffice."""
        s = self(_CORNERS)
        return float(np.max(np.abs(s[:, None] - s[None, :])))


def projected_diam(proj: Projection) -> float:
    return proj.diameter()


def separation_sigma(points, proj: Projection) -> float:
    """min_{i≠j} |𝒮(x_i) − 𝒮(x_j)|; ``points`` may be one array or a list of groups."""
    groups = points if isinstance(points, (list, tuple)) else [points]
    best = np.inf
    for grp in groups:
        s = proj(np.atleast_2d(grp))
        if s.size < 2:
            raise ValueError("σ needs at least two points per group")
        d = np.abs(s[:, None] - s[None, :])
        best = min(best, float(d[np.triu_indices(s.size, 1)].min()))
    return best


def projected_hausdorff(A, B, proj: Projection) -> float:
    sa, sb = proj(np.atleast_2d(A)), proj(np.atleast_2d(B))
    if sa.size == 0 or sb.size == 0:
        raise ValueError("Hausdorff distance of an empty set")
    d = np.abs(sa[:, None] - sb[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------- test functions

def _apply_L(C: np.ndarray, gamma: complex, k2: float) -> np.ndarray:
    """Coefficients of γQ_ss + k²Q_ττ + 2ik²Q_τ for Q = Σ C[a,b] s^a τ^b."""
    n = C.shape[0]
    out = np.zeros_like(C)
    a = np.arange(n)
    out[:-2, :] += gamma * (a[2:, None] * (a[2:, None] - 1)) * C[2:, :]
    out[:, :-2] += k2 * (a[None, 2:] * (a[None, 2:] - 1)) * C[:, 2:]
    out[:, :-1] += 2j * k2 * a[None, 1:] * C[:, 1:]
    return out


def _integrate_tau(C: np.ndarray) -> np.ndarray:
    out = np.zeros_like(C)
    b = np.arange(C.shape[1] - 1)
    out[:, 1:] = C[:, :-1] / (b[None, :] + 1)
    return out


def _kernel_basis(degree: int, gamma: complex, k2: float) -> list[np.ndarray]:
    """Q_p = s^p + R_p with L Q_p = 0 and R_p built from τ-carrying monomials."""
    size = degree + 1
    basis = []
    for p in range(size):
        lead = np.zeros((size, size), dtype=complex)
        lead[p, 0] = 1.0
        rhs = -_apply_L(lead, gamma, k2)
        R = np.zeros_like(lead)
        # the τ-integration inverts the first-order part; the rest is nilpotent
        for _ in range(p + 1):
            R = _integrate_tau(rhs - (_apply_L(R, gamma, k2) - 2j * k2 * _dtau(R))) / (2j * k2)
        Q = lead + R
        resid = _apply_L(Q, gamma, k2)
        assert np.max(np.abs(resid)) <= 1e-9 * max(1.0, np.max(np.abs(Q))), "kernel construction"
        basis.append(Q)
    return basis


def _dtau(C: np.ndarray) -> np.ndarray:
    out = np.zeros_like(C)
    b = np.arange(1, C.shape[1])
    out[:, :-1] = C[:, 1:] * b[None, :]
    return out


def _poly_eval(C: np.ndarray, s: np.ndarray, t: np.ndarray):
    """Value and partial derivatives (Q, Q_s, Q_τ) of a 2-variable polynomial."""
    n = C.shape[0]
    sp_ = s[:, None] ** np.arange(n)[None, :]
    tp = t[:, None] ** np.arange(n)[None, :]
    val = np.einsum("pa,ab,pb->p", sp_, C, tp)
    a = np.arange(1, n)
    ds = np.zeros_like(C)
    ds[:-1] = C[1:] * a[:, None]
    dt = _dtau(C)
    return val, np.einsum("pa,ab,pb->p", sp_, ds, tp), np.einsum("pa,ab,pb->p", sp_, dt, tp)


class TestFunction:
    """ψ(x) = φ(x) Q(𝒮(x), ζ·x) with ψ(z_j) = 0 for the retained zeros."""

    __test__ = False  # not a pytest class

    def __init__(self, phi: CgoSolution, proj: Projection, zeros, exclude: Optional[int] = None,
                 exact: bool = True):
        z = np.asarray(zeros, dtype=float).reshape(-1, 2)
        if len(z) and len(np.unique(np.round(z, 14), axis=0)) != len(z):
            raise ValueError("duplicate zeros")
        if exclude is not None:
            z = np.delete(z, exclude, axis=0)
        self.phi, self.proj, self.zeros, self.exact = phi, proj, z, exact
        m = len(z)
        zeta = phi.zeta
        c = proj.grad
        self._c, self._zeta = c, zeta
        gamma = complex(c @ c)
        k2 = phi.k ** 2
        if not exact or m <= 1:
            # Π(s − s_j) expanded in s only
            coeff = np.poly(proj(z)) if m else np.array([1.0])
            C = np.zeros((m + 1, m + 1), dtype=complex)
            C[:, 0] = coeff[::-1]
        else:
            basis = _kernel_basis(m, gamma, k2)
            s_z, t_z = proj(z), z @ zeta
            V = np.column_stack([_poly_eval(Q, s_z, t_z)[0] for Q in basis[:-1]])
            rhs = -_poly_eval(basis[-1], s_z, t_z)[0]
            if np.linalg.cond(V) > 1e13:
                raise ValueError("zeros have (nearly) coincident projections")
            alpha = np.linalg.solve(V, rhs)
            C = basis[-1] + sum(a * Q for a, Q in zip(alpha, basis[:-1]))
        self.coeffs = C

    def _parts(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        q, qs, qt = _poly_eval(self.coeffs, self.proj(x), x @ self._zeta)
        return x, q, qs, qt

    def __call__(self, x) -> np.ndarray:
        x, q, _, _ = self._parts(x)
        return self.phi(x) * q

    def grad(self, x) -> np.ndarray:
        x, q, qs, qt = self._parts(x)
        ph = self.phi(x)
        return ph[:, None] * (1j * self._zeta[None] * q[:, None]
                              + qs[:, None] * self._c[None] + qt[:, None] * self._zeta[None])

    def normal_derivative(self, x, normals) -> np.ndarray:
        return np.einsum("pd,pd->p", self.grad(x), np.atleast_2d(normals))

    def helmholtz_residual(self, x) -> np.ndarray:
        """Analytic Δψ + k²ψ (zero for the exact construction)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        L = _apply_L(self.coeffs, complex(self._c @ self._c), self.phi.k ** 2)
        return self.phi(x) * _poly_eval(L, self.proj(x), x @ self._zeta)[0]


def test_function(phi: CgoSolution, proj: Projection, zeros=(), exclude: Optional[int] = None,
                  exact: bool = True) -> TestFunction:
    return TestFunction(phi, proj, zeros, exclude, exact)


test_function.__test__ = False


def reciprocity_gap(data: CauchyData, psi) -> complex:
    """R(ψ) = ∫_∂Ω (ψ g − f ∂νψ) d𝔰, equal to Σ λ_j ψ(x_j) for exact data."""
    mesh = data.mesh
    pts = mesh.boundary_points
    vals = psi(pts)
    dn = psi.normal_derivative(pts, mesh.boundary_node_normals())
    return boundary_integral(mesh, vals, data.g) - boundary_integral(mesh, data.f, dn)


def rg_report(data: CauchyData, psi: TestFunction, expected: complex) -> dict:
    R = reciprocity_gap(data, psi)
    return {
        "zeta": [[z.real, z.imag] for z in psi.phi.zeta],
        "zeros": psi.zeros.tolist(),
        "R_value": [R.real, R.imag],
        "expected": [complex(expected).real, complex(expected).imag],
        "rel_error": float(abs(R - expected) / max(abs(expected), 1e-300)),
    }


def frame_unitarity_error(proj: Projection) -> float:
    F = proj.frame
    return float(np.linalg.norm(F.conj().T @ F - np.eye(2)))


def dump_report(path, reports: Sequence[dict]):
    with open(path, "w") as fh:
        json.dump(list(reports), fh, indent=2)
