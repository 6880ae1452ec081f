import numpy as np
import pytest
from hypothesis import given, strategies as st

from helmsource.forward import CauchyData, ForwardSolver, PointSourceSet
from helmsource.mesh_fem import assemble, build_unit_square_mesh, discrete_residual_norm
from helmsource.projection import (
    CgoParameterError,
    Projection,
    frame_unitarity_error,
    make_cgo,
    projected_diam,
    projected_hausdorff,
    reciprocity_gap,
    separation_sigma,
    test_function as make_test_function,
)
from oracles import brute_force_hausdorff, slope

K = 8.0


def _cgo(angle=0.3, decay=2.0):
    phi = make_cgo(K, angle, decay)
    return phi, Projection.from_cgo(phi)


def _data(N, sources, k=K):
    mesh = build_unit_square_mesh(N)
    f = np.zeros(mesh.n_boundary, dtype=complex)
    _, g = ForwardSolver(mesh, np.zeros(mesh.n_nodes), k).solve(f, sources)
    return CauchyData(mesh, f, g, k)


def test_oscillatory_case():
    phi = make_cgo(K, 0.0, 0.0)
    x = np.random.default_rng(0).random((20, 2))
    assert np.allclose(np.abs(phi(x)), 1.0)
    assert np.allclose(phi(x), np.exp(1j * K * x[:, 0]))
    assert np.isclose(phi.mu, 1 + K)


def test_decaying_case_solves_dispersion_relation():
    phi = make_cgo(K, 0.0, K)
    assert np.allclose(phi.eta, [np.sqrt(2) * K, 0])
    assert np.allclose(phi.xi, [0, K])
    assert abs(phi.zeta @ phi.zeta - K ** 2) < 1e-12 * K ** 2


def test_infeasible_zeta_rejected():
    with pytest.raises(CgoParameterError):
        make_cgo(K, zeta_norm=K / 2)
    with pytest.raises(CgoParameterError):
        make_cgo(-1.0)


@given(st.floats(0, 2 * np.pi), st.floats(0, 10))
def test_cgo_and_frame_invariants(angle, decay):
    phi, proj = _cgo(angle, decay)
    assert abs(phi.eta @ phi.eta - phi.xi @ phi.xi - K ** 2) <= 1e-12 * max(1, phi.eta @ phi.eta)
    assert abs(phi.eta @ phi.xi) <= 1e-12 * max(1, phi.eta @ phi.eta)
    assert frame_unitarity_error(proj) <= 1e-12
    # ∇φ ∥ ζ, so ∇φ·∇S = 0 reduces to ζ·conj(e2) = 0
    assert abs(phi.zeta @ proj.grad) <= 1e-12 * phi.zeta_norm
    assert phi.theta > 0
    assert phi.vartheta <= phi.mu * phi.theta * (1 + 1e-12)


@given(st.floats(0, 2 * np.pi), st.floats(0, 6))
def test_cgo_bounds_hold_on_samples(angle, decay):
    phi, _ = _cgo(angle, decay)
    x = np.vstack([np.random.default_rng(1).random((400, 2)), [[0, 0], [1, 0], [0, 1], [1, 1]]])
    v = np.abs(phi(x))
    big = v + np.linalg.norm(phi.grad(x), axis=1)
    assert v.min() >= phi.theta * (1 - 1e-12)
    assert big.max() <= phi.vartheta * (1 + 1e-12)


def test_projection_orthogonality_by_differences():
    phi, proj = _cgo(1.1, 3.0)
    x, h = np.array([[0.4, 0.7]]), 1e-6
    dS = np.array([(proj(x + h * e) - proj(x - h * e))[0] / (2 * h) for e in np.eye(2)])
    dphi = np.array([(phi(x + h * e) - phi(x - h * e))[0] / (2 * h) for e in np.eye(2)])
    assert abs(dphi @ dS) < 1e-6 * np.linalg.norm(dphi)
    lap = sum(proj(x + 1e-3 * e) - 2 * proj(x) + proj(x - 1e-3 * e) for e in np.eye(2)) / 1e-6
    assert abs(lap[0]) < 1e-6


def _interp_residual_rate(fn):
    res, hs = [], []
    for N in (16, 32, 64):
        mesh = build_unit_square_mesh(N)
        sysm = assemble(mesh, np.zeros(mesh.n_nodes), K)
        res.append(discrete_residual_norm(sysm, fn(mesh.nodes)))
        hs.append(mesh.h)
    return slope(hs, res)


def test_cgo_interpolant_residual_rate():
    phi, _ = _cgo(0.3, 1.0)
    assert _interp_residual_rate(phi) >= 1.8


def test_test_function_interpolant_residual_rate():
    phi, proj = _cgo(0.3, 1.0)
    psi = make_test_function(phi, proj, [[0.3, 0.3], [0.6, 0.5], [0.4, 0.8]])
    assert _interp_residual_rate(psi) >= 1.8


def test_empty_zero_list_is_cgo():
    phi, proj = _cgo()
    x = np.random.default_rng(2).random((30, 2))
    assert np.allclose(make_test_function(phi, proj)(x), phi(x))


@given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95)), min_size=1, max_size=4,
                unique=True))
def test_zero_exactness(zeros):
    phi, proj = _cgo(0.7, 1.5)
    z = np.array(zeros)
    s = proj(z)
    gaps = np.abs(s[:, None] - s[None]) + np.eye(len(z))
    if gaps.min() < 0.05:
        return
    psi = make_test_function(phi, proj, z)
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 41), np.linspace(0, 1, 41)), -1).reshape(-1, 2)
    sup = np.abs(psi(grid)).max()
    assert np.abs(psi(z)).max() <= 1e-12 * sup
    assert np.abs(psi.helmholtz_residual(grid)).max() <= 1e-9 * sup * K ** 2


def test_single_zero_and_exclusion():
    phi, proj = _cgo()
    z = np.array([[0.4, 0.6], [0.7, 0.2]])
    psi = make_test_function(phi, proj, z[:1])
    x = np.array([[0.1, 0.9]])
    assert abs(psi(z[:1])[0]) < 1e-14
    assert abs(psi(x)[0]) > 0
    skip = make_test_function(phi, proj, z, exclude=0)
    assert abs(skip(z[1:])[0]) < 1e-12 and abs(skip(z[:1])[0]) > 1e-3


def test_duplicate_zeros_rejected():
    phi, proj = _cgo()
    with pytest.raises(ValueError):
        make_test_function(phi, proj, [[0.5, 0.5], [0.5, 0.5]])


def test_sigma_diam_and_hausdorff():
    _, proj = _cgo(0.0, 0.0)
    # with ξ = 0, e1 = (1,0) and S(x) = conj(e2·x) = x₂ up to sign
    p = np.array([[0.2, 0.0], [0.2, 1.0]])
    assert np.isclose(separation_sigma(p, proj), 1.0)
    assert np.isclose(projected_diam(proj), 1.0)
    assert projected_hausdorff(p, p, proj) == 0
    with pytest.raises(ValueError):
        projected_hausdorff(np.zeros((0, 2)), p, proj)


@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_hausdorff_matches_brute_force(seed, m):
    r = np.random.default_rng(seed)
    _, proj = _cgo(r.uniform(0, 6), r.uniform(0, 4))
    A, B = r.random((m, 2)), r.random((m, 2))
    ref = brute_force_hausdorff(proj(A), proj(B))
    assert np.isclose(projected_hausdorff(A, B, proj), ref, rtol=1e-12, atol=1e-15)
    if m >= 2:
        s = proj(A)
        best = min(abs(s[i] - s[j]) for i in range(m) for j in range(i + 1, m))
        assert np.isclose(separation_sigma(A, proj), best)


@given(st.floats(0, 2 * np.pi))
def test_frame_rotation_keeps_zero_properties(angle):
    phi, proj = _cgo(angle, 2.0)
    A = np.array([[0.3, 0.4], [0.6, 0.7], [0.8, 0.2]])
    assert projected_hausdorff(A, A, proj) == 0
    psi = make_test_function(phi, proj, A)
    assert np.abs(psi(A)).max() <= 1e-12 * max(1.0, np.abs(psi(np.array([[0.0, 0.0]]))).max())


def test_gap_of_zero_data_vanishes(mesh16):
    phi, proj = _cgo()
    z = np.zeros(mesh16.n_boundary)
    assert reciprocity_gap(CauchyData(mesh16, z, z, K), make_test_function(phi, proj)) == 0


def test_gap_with_designed_zero():
    src = PointSourceSet([[0.5, 0.5]], [1.0])
    data = _data(128, src)
    phi, proj = _cgo()
    psi = make_test_function(phi, proj, [[0.5, 0.5]])
    plain = make_test_function(phi, proj)
    assert abs(reciprocity_gap(data, psi)) < 0.02 * abs(reciprocity_gap(data, plain))


def test_gap_of_plane_wave():
    src = PointSourceSet([[0.5, 0.5]], [1.0])
    phi = make_cgo(K, 0.0, 0.0)
    psi = make_test_function(phi, Projection.from_cgo(phi))
    errs = []
    for N in (32, 64, 128):
        R = reciprocity_gap(_data(N, src), psi)
        errs.append(abs(R - np.exp(0.5j * K)))
    assert errs[-1] < 0.05
    assert errs[0] > errs[1] > errs[2]


def test_gap_identity_converges():
    src = PointSourceSet([[0.3, 0.3], [0.7, 0.35], [0.45, 0.75], [0.2, 0.65]], [0.89, 0.73, 0.71, 0.52])
    phi, proj = _cgo(0.3, 1.0)
    psi = make_test_function(phi, proj, [[0.5, 0.5]])
    expected = np.sum(src.strengths * psi(src.locations))
    errs, hs = [], []
    for N in (32, 64, 128):
        data = _data(N, src)
        errs.append(abs(reciprocity_gap(data, psi) - expected)
                    / np.sum(np.abs(src.strengths * psi(src.locations))))
        hs.append(data.mesh.h)
    assert errs[-1] <= 0.05
    assert slope(hs, errs) >= 1.0
