"""Acceptance criteria C1 to C9, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
Tolerances are pinned below; expensive sweeps are computed once and shared.
"""

import itertools
import time

import numpy as np
import pytest

from helmsource.forward import ForwardSolver, PointSourceSet, CauchyData
from helmsource.mesh_fem import assemble, build_unit_square_mesh, l2_norm, solve_dirichlet
from helmsource.projection import Projection, make_cgo, reciprocity_gap, test_function as make_psi
from helmsource.source_inversion import match_sources
from helmsource.stability_lab import (
    DEFAULT_SOURCES,
    SweepSpec,
    fd_check,
    landscape_scan,
    medium_perturbation_sweep,
    noise_sweep,
)

try:
    from oracles import brute_force_bottleneck, manufactured, slope
except ImportError:  # script use from the repository root
    from tests.oracles import brute_force_bottleneck, manufactured, slope

# pinned tolerances
C1_TOL, C1_STEP, C1_N, C1_CONFIGS, C1_TIME = 1e-3, 1e-5, 32, 5, 120.0
C2_SLOPE, C2_TIME = 1.9, 60.0
C3_TOL, C3_TIME = 0.05, 120.0
C4_BANDS = {0.01: (0.1, 0.05), 0.05: (0.2, 0.1)}   # τ: (strength, ρ_x)
C4_TIME = 15 * 60.0
C5_TIME, C5_TRUE, C5_BAND = 600.0, (0.443, 0.298), (0.75, 0.95)
C6_FACTOR, C6_TIME = 2.0, 30 * 60.0
C7_EPS, C7_TAU, C7_TIME = (0.0, 0.02, 0.05, 0.1), 0.01, 20 * 60.0
C8_INSTANCES, C8_TIME = 200, 10.0
SCENES = ("med1", "med2")
REALIZATIONS = 10

LINES: list = []


def report(tag: str, ok: bool, detail: str, capsys=None):
    line = f"{tag}: {'PASS' if ok else 'FAIL'} | {detail}"
    LINES.append(line)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return ok


_CACHE: dict = {}


def known_medium_sweep(scene):
    key = ("known", scene)
    if key not in _CACHE:
        t0 = time.perf_counter()
        res = noise_sweep(SweepSpec(scene=scene, invert_with="true", realizations=REALIZATIONS))
        _CACHE[key] = (res, time.perf_counter() - t0)
    return _CACHE[key]


def two_step_sweep(scene):
    key = ("two-step", scene)
    if key not in _CACHE:
        t0 = time.perf_counter()
        res = noise_sweep(SweepSpec(scene=scene, invert_with="reconstructed", realizations=REALIZATIONS))
        _CACHE[key] = (res, time.perf_counter() - t0)
    return _CACHE[key]


def _strength_median(res, tau):
    """Median over cells of the worst matched strength error, and over all sources."""
    ok = [r for r in res.rows if r["tau"] == tau and r["status"] == "ok"]
    worst = np.median([r["rho_lambda"] for r in ok])
    every = np.median([e for r in ok for e in r["lambda_errors"]])
    return float(worst), float(every)


# ------------------------------------------------------------------ criteria

def check_c1(capsys=None):
    t0 = time.perf_counter()
    res = fd_check(N=C1_N, configs=C1_CONFIGS, step=C1_STEP, tol=C1_TOL)
    dt = time.perf_counter() - t0
    em = max(r["rel_error"] for r in res["medium"])
    es = max(r["rel_error"] for r in res["source"])
    ok = res["medium_pass"] and res["source_pass"] and dt < C1_TIME
    return report("C1 gradient gates", ok, f"max rel err medium {em:.1e}, source {es:.1e} "
                  f"(tol {C1_TOL:g}); {dt:.1f}s < {C1_TIME:g}s", capsys)


def check_c2(capsys=None):
    t0 = time.perf_counter()
    hs, errs = [], []
    k = 3.0
    for N in (16, 32, 64):
        mesh = build_unit_square_mesh(N)
        u_star = manufactured(mesh.nodes)
        sysm = assemble(mesh, np.zeros(mesh.n_nodes), k)
        u = solve_dirichlet(sysm, u_star[mesh.boundary_nodes], source=(k ** 2 - 2 * np.pi ** 2) * u_star)
        hs.append(mesh.h)
        errs.append(l2_norm(mesh, u - u_star))
    p = slope(hs, errs)
    dt = time.perf_counter() - t0
    return report("C2 FEM convergence", p >= C2_SLOPE and dt < C2_TIME,
                  f"L2 slope {p:.3f} >= {C2_SLOPE} over N=16/32/64; {dt:.1f}s", capsys)


def check_c3(capsys=None):
    t0 = time.perf_counter()
    k = 8.0
    src = DEFAULT_SOURCES
    tests = []
    for angle, decay in ((0.3, 0.0), (1.2, 2.0)):
        phi = make_cgo(k, angle, decay)
        proj = Projection.from_cgo(phi)
        tests += [make_psi(phi, proj), make_psi(phi, proj, [[0.5, 0.5]]),
                  make_psi(phi, proj, src.locations, exclude=0)]
    errs = {}
    for N in (32, 64, 128):
        mesh = build_unit_square_mesh(N)
        f = np.zeros(mesh.n_boundary, dtype=complex)
        _, g = ForwardSolver(mesh, np.zeros(mesh.n_nodes), k).solve(f, src)
        data = CauchyData(mesh, f, g, k)
        e = []
        for psi in tests:
            vals = src.strengths * psi(src.locations)
            e.append(abs(reciprocity_gap(data, psi) - vals.sum()) / np.sum(np.abs(vals)))
        errs[N] = max(e)
    dt = time.perf_counter() - t0
    improving = errs[32] > errs[64] > errs[128]
    ok = errs[128] <= C3_TOL and improving and dt < C3_TIME
    return report("C3 reciprocity gap", ok,
                  f"max rel err N=32/64/128: {errs[32]:.2e}/{errs[64]:.2e}/{errs[128]:.2e} "
                  f"(<= {C3_TOL:g} at 128, improving={improving}); {len(tests)} test functions; "
                  f"{dt:.1f}s", capsys)


def check_c4(capsys=None):
    parts, ok, total = [], True, 0.0
    for scene in SCENES:
        res, dt = known_medium_sweep(scene)
        total += dt
        for tau, (lam_tol, x_tol) in C4_BANDS.items():
            lam, lam_all = _strength_median(res, tau)
            rx = res.median("rho_x", tau)
            good = lam <= lam_tol and rx <= x_tol
            ok &= good
            parts.append(f"{scene} tau={tau:g}: rho_lambda {lam:.3f} (all {lam_all:.3f}) <= {lam_tol}, "
                         f"rho_x {rx:.4f} <= {x_tol}")
    ok &= total < C4_TIME
    return report("C4 known-medium sources", ok, "; ".join(parts) + f"; {total:.0f}s", capsys)


def check_c5(capsys=None):
    t0 = time.perf_counter()
    r5, r8, r12 = landscape_scan((5.0, 8.0, 12.0), resolution=48)
    dt = time.perf_counter() - t0
    i, j = (int(np.floor(v * 48)) for v in C5_TRUE)
    a = r5.minima
    ok5 = len(a) == 1 and (a[0]["i"], a[0]["j"]) == (i, j)
    ok8 = len(r8.minima) >= 2 and any(C5_BAND[0] <= m["y"] <= C5_BAND[1] for m in r8.minima)
    ok12 = len(r12.minima) > len(r8.minima)
    ys = ", ".join(f"{m['y']:.3f}" for m in r8.minima)
    return report("C5 landscape census", ok5 and ok8 and ok12 and dt < C5_TIME,
                  f"k=5: {len(a)} min at cell {[(m['i'], m['j']) for m in a]} (true {(i, j)}); "
                  f"k=8: {len(r8.minima)} minima, y in [{ys}]; k=12: {len(r12.minima)}; {dt:.0f}s",
                  capsys)


def check_c6(capsys=None):
    parts, ok, total = [], True, 0.0
    for scene in SCENES:
        base, _ = known_medium_sweep(scene)
        res, dt = two_step_sweep(scene)
        total += dt
        n_err = res.rows[0]["n_misfit"]
        for tau in C4_BANDS:
            lam_b, _ = _strength_median(base, tau)
            lam_t, _ = _strength_median(res, tau)
            rx_b, rx_t = base.median("rho_x", tau), res.median("rho_x", tau)
            good = lam_t <= C6_FACTOR * lam_b and rx_t <= C6_FACTOR * rx_b
            ok &= good
            parts.append(f"{scene} tau={tau:g}: rho_x {rx_t:.4f} vs {rx_b:.4f} "
                         f"(x{rx_t / rx_b:.2f}), rho_lambda {lam_t:.3f} vs {lam_b:.3f} "
                         f"(x{lam_t / lam_b:.2f})")
        parts.append(f"{scene} ||n_rec-n||={n_err:.3f}")
    ok &= total < C6_TIME
    return report("C6 two-step pipeline", ok, "; ".join(parts) + f"; {total:.0f}s (medium+sources)",
                  capsys)


def check_c7(capsys=None):
    base, _ = known_medium_sweep("med1")
    t0 = time.perf_counter()
    res = medium_perturbation_sweep(SweepSpec(scene="med1", invert_with="perturbed",
                                              noise_levels=[C7_TAU], epsilons=list(C7_EPS),
                                              realizations=REALIZATIONS))
    dt = time.perf_counter() - t0
    med = [res.median("rho_x", C7_TAU, e) for e in C7_EPS]
    mono = all(b >= a for a, b in zip(med, med[1:]))
    zero = [r for r in res.rows if r["eps"] == 0.0]
    ref = [r for r in base.rows if r["tau"] == C7_TAU]
    same = len(zero) == len(ref) and all(a["rho_x"] == b["rho_x"] and a["rho_lambda"] == b["rho_lambda"]
                                         for a, b in zip(zero, ref))
    dn = [res.median("n_misfit", C7_TAU, e) for e in C7_EPS]
    return report("C7 medium-perturbation trend", mono and same and dt < C7_TIME,
                  "median rho_x at eps " + ", ".join(f"{e:g}: {m:.4f}" for e, m in zip(C7_EPS, med))
                  + f"; ||eps dn|| {', '.join(f'{v:.3f}' for v in dn)}; nondecreasing={mono}; "
                  f"eps=0 equals baseline={same}; {dt:.0f}s", capsys)


def check_c8(capsys=None):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(C8_INSTANCES):
        m = int(rng.integers(1, 7))
        A = PointSourceSet(rng.random((m, 2)), np.ones(m))
        B = PointSourceSet(rng.random((m, 2)), np.ones(m))
        best, _ = brute_force_bottleneck(A.locations, B.locations)
        bad += not np.isclose(match_sources(A, B).rho_x, best, rtol=0, atol=1e-14)
    dt = time.perf_counter() - t0
    return report("C8 bottleneck matching", bad == 0 and dt < C8_TIME,
                  f"{C8_INSTANCES - bad}/{C8_INSTANCES} equal to exhaustive search (m<=6); "
                  f"{dt:.2f}s (incl. brute force) < {C8_TIME:g}s", capsys)


def check_c9(tmp_dir, capsys=None):
    from pathlib import Path

    tmp = Path(tmp_dir)
    small = dict(scene="med2", fine_N=64, coarse_N=32, realizations=2, noise_levels=[0.0, 0.05],
                 source_config={"restarts": 8})
    same = []
    for name, fn, extra in (("noise", noise_sweep, {}),
                            ("perturbed", medium_perturbation_sweep,
                             {"invert_with": "perturbed", "epsilons": [0.0, 0.05]})):
        paths = [fn(SweepSpec(**small, **extra)).to_csv(tmp / f"{name}{i}.csv") for i in range(2)]
        same.append(paths[0].read_bytes() == paths[1].read_bytes())
    return report("C9 determinism", all(same),
                  f"byte-identical CSVs: noise sweep {same[0]}, controlled sweep {same[1]}", capsys)


# --------------------------------------------------------------- pytest glue

def test_c1_gradient_gates(capsys):
    assert check_c1(capsys)


def test_c2_fem_convergence(capsys):
    assert check_c2(capsys)


def test_c3_reciprocity_gap(capsys):
    assert check_c3(capsys)


def test_c4_known_medium_sources(capsys):
    assert check_c4(capsys)


def test_c5_landscape_census(capsys):
    assert check_c5(capsys)


def test_c6_two_step_pipeline(capsys):
    assert check_c6(capsys)


def test_c7_medium_perturbation_trend(capsys):
    assert check_c7(capsys)


def test_c8_bottleneck_matching(capsys):
    assert check_c8(capsys)


def test_c9_determinism(tmp_path, capsys):
    assert check_c9(tmp_path, capsys)


if __name__ == "__main__":
    import sys
    import tempfile

    wanted = {a.upper() for a in sys.argv[1:]}
    with tempfile.TemporaryDirectory() as d:
        checks = {"C1": check_c1, "C2": check_c2, "C3": check_c3, "C4": check_c4, "C5": check_c5,
                  "C6": check_c6, "C7": check_c7, "C8": check_c8, "C9": lambda: check_c9(d)}
        results = [fn() for tag, fn in checks.items() if not wanted or tag in wanted]
    print("\n".join(["", "summary:"] + LINES))
    sys.exit(0 if all(results) else 1)
