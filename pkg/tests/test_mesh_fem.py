import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from helmsource.mesh_fem import (
    MeshError,
    NonPhysicalIndexError,
    assemble,
    boundary_integral,
    boundary_l2_norm,
    build_unit_square_mesh,
    l2_norm,
    load_field,
    load_mesh,
    mass_matrix,
    neumann_trace,
    save_field,
    save_mesh,
    solve_dirichlet,
    stiffness_matrix,
)
from oracles import manufactured, slope


def _manufactured_error(N, k=3.0):
    mesh = build_unit_square_mesh(N)
    sysm = assemble(mesh, np.zeros(mesh.n_nodes), k)
    u_star = manufactured(mesh.nodes)
    s = (k ** 2 - 2 * np.pi ** 2) * u_star
    u = solve_dirichlet(sysm, u_star[mesh.boundary_nodes], source=s)
    return mesh, sysm, u, u_star, s


def test_mesh_counts_and_boundary(mesh16):
    assert mesh16.n_nodes == 17 * 17
    assert len(mesh16.elements) == 2 * 16 * 16
    assert mesh16.n_boundary == 4 * 16
    assert np.isclose(mesh16.areas.sum(), 1.0)
    d = mesh16.distance_to_boundary(mesh16.boundary_points)
    assert np.all(d == 0)


def test_zero_wavenumber_gives_stiffness(mesh16):
    sysm = assemble(mesh16, np.zeros(mesh16.n_nodes), 0.0)
    assert abs(sysm.A - stiffness_matrix(mesh16).astype(complex)).max() == 0


def test_mass_partition_of_unity(mesh16):
    M = mass_matrix(mesh16)
    assert np.isclose(M.sum(), 1.0)
    # constants lie in the kernel of K
    assert np.allclose(stiffness_matrix(mesh16) @ np.ones(mesh16.n_nodes), 0, atol=1e-12)


def test_system_is_complex_symmetric(mesh16, rng):
    n = 0.3 * rng.random(mesh16.n_nodes)
    A = assemble(mesh16, n, 7.0).A
    assert (A - A.T).count_nonzero() == 0


def test_nonphysical_index_rejected(mesh16):
    n = np.zeros(mesh16.n_nodes)
    n[40] = -1.0
    with pytest.raises(NonPhysicalIndexError):
        assemble(mesh16, n, 5.0)


def test_zero_data_gives_zero_solution(mesh16):
    sysm = assemble(mesh16, np.zeros(mesh16.n_nodes), 5.0)
    u = solve_dirichlet(sysm, np.zeros(mesh16.n_boundary))
    assert np.all(u == 0)


def test_boundary_values_imposed_exactly(mesh16, rng):
    sysm = assemble(mesh16, np.zeros(mesh16.n_nodes), 5.0)
    bc = rng.standard_normal(mesh16.n_boundary) + 1j * rng.standard_normal(mesh16.n_boundary)
    u = solve_dirichlet(sysm, bc)
    assert np.array_equal(u[mesh16.boundary_nodes], bc)


def test_manufactured_convergence_rate():
    errs, hs = [], []
    for N in (16, 32, 64):
        mesh, _, u, u_star, _ = _manufactured_error(N)
        errs.append(l2_norm(mesh, u - u_star))
        hs.append(mesh.h)
    assert slope(hs, errs) >= 1.9


def test_neumann_trace_of_manufactured_solution():
    errs, hs = [], []
    for N in (16, 32, 64):
        mesh, sysm, u, _, s = _manufactured_error(N)
        g = neumann_trace(sysm, u, source=s)
        x = mesh.boundary_points[:, 0]
        exact = -np.pi * np.sin(np.pi * x)
        diff = g - exact
        errs.append(np.sqrt(abs(boundary_integral(mesh, diff, np.conj(diff), side="bottom"))))
        hs.append(mesh.h)
    assert slope(hs, errs) >= 1.0


def test_neumann_trace_of_constant_is_zero(mesh16):
    sysm = assemble(mesh16, np.zeros(mesh16.n_nodes), 0.0)
    u = solve_dirichlet(sysm, np.full(mesh16.n_boundary, 2.5))
    assert np.allclose(u, 2.5)
    assert np.max(np.abs(neumann_trace(sysm, u))) < 1e-10


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_solve_and_trace_are_linear(a, b, seed):
    mesh = build_unit_square_mesh(8)
    sysm = assemble(mesh, np.zeros(mesh.n_nodes), 4.0)
    r = np.random.default_rng(seed)
    f1, f2 = r.standard_normal((2, mesh.n_boundary))
    s1, s2 = r.standard_normal((2, mesh.n_nodes))
    u1 = solve_dirichlet(sysm, f1, source=s1)
    u2 = solve_dirichlet(sysm, f2, source=s2)
    u = solve_dirichlet(sysm, a * f1 + b * f2, source=a * s1 + b * s2)
    assert np.allclose(u, a * u1 + b * u2, atol=1e-9)
    g = neumann_trace(sysm, u, source=a * s1 + b * s2)
    g12 = a * neumann_trace(sysm, u1, source=s1) + b * neumann_trace(sysm, u2, source=s2)
    assert np.allclose(g, g12, atol=1e-8)


def test_green_identity_of_discrete_solutions(rng):
    # with variational fluxes the discrete identity holds to round-off on every mesh
    for N in (16, 32):
        mesh = build_unit_square_mesh(N)
        n = np.where(mesh.distance_to_boundary() > 0.2, 0.4, 0.0)
        sysm = assemble(mesh, n, 6.0)
        f1 = rng.standard_normal(mesh.n_boundary) + 1j * rng.standard_normal(mesh.n_boundary)
        f2 = rng.standard_normal(mesh.n_boundary)
        u, psi = solve_dirichlet(sysm, f1), solve_dirichlet(sysm, f2)
        gu, gp = neumann_trace(sysm, u), neumann_trace(sysm, psi)
        lhs = boundary_integral(mesh, gu, f2) - boundary_integral(mesh, f1, gp)
        assert abs(lhs) <= 1e-9 * boundary_l2_norm(mesh, gu) * boundary_l2_norm(mesh, f2)


def test_boundary_integral_examples(mesh16):
    one = np.ones(mesh16.n_boundary)
    assert np.isclose(boundary_integral(mesh16, one, one), 4.0)
    assert boundary_l2_norm(mesh16, np.zeros(mesh16.n_boundary)) == 0
    x = mesh16.boundary_points[:, 0]
    assert np.isclose(boundary_integral(mesh16, x, one, side="bottom"), 0.5)
    assert np.isclose(boundary_integral(mesh16, x, one, side="top"), 0.5)
    assert np.isclose(boundary_integral(mesh16, x, one, side="left"), 0.0)


def test_mesh_mismatch_rejected(mesh16, mesh32):
    with pytest.raises(MeshError):
        boundary_integral(mesh16, np.ones(mesh32.n_boundary), np.ones(mesh32.n_boundary))


def test_mesh_and_field_round_trip(tmp_path, mesh16, rng):
    save_mesh(mesh16, tmp_path / "m")
    back = load_mesh(tmp_path / "m")
    assert np.array_equal(back.nodes, mesh16.nodes)
    assert np.array_equal(back.elements, mesh16.elements)
    v = rng.standard_normal(mesh16.n_nodes) + 1j * rng.standard_normal(mesh16.n_nodes)
    save_field(tmp_path / "v.csv", v)
    assert np.array_equal(load_field(tmp_path / "v.csv"), v)


def test_locate_and_interpolate_linear_exactly(mesh16, rng):
    pts = rng.random((50, 2))
    lin = 2 * mesh16.nodes[:, 0] - 3 * mesh16.nodes[:, 1] + 1
    assert np.allclose(mesh16.interpolate(lin, pts), 2 * pts[:, 0] - 3 * pts[:, 1] + 1)
    assert np.allclose(mesh16.interpolate_gradient(lin, pts), [2, -3])
