"""
Experiment harness: built-in scenes, noise and medium-perturbation sweeps,
single-source objective landscapes and the data-dependent factors of the
stability bounds.

Data are always synthesized on a fine mesh and restricted to the coarse
inversion mesh. The absolute constants of the bounds are unknown, so the lab
checks trends and tolerance bands; ``eval_bounds`` only evaluates the
expressions for user-supplied constants.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .forward import (
    CauchyData,
    ForwardSolver,
    Medium,
    PointSourceSet,
    SingularityError,
    add_noise,
    check_compact_support,
    default_probes,
    multiplicative_noise,
    plane_wave_trace,
    restrict_boundary,
)
from .medium_inversion import MediumInversionConfig, invert_medium
from .mesh_fem import Mesh, ResonanceError, boundary_l2_norm, build_unit_square_mesh, l2_norm
from .projection import Projection, make_cgo, separation_sigma
from .source_inversion import SourceInversionConfig, SourceModel, invert_sources, match_sources

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ scenes

MED1_CENTERS = ((0.25, 0.25), (0.75, 0.75))
MED1_RADIUS = 0.25
MED2_RECT = ((0.5, 0.75), (0.25, 0.75))
MED2_DISK_RADIUS = 0.2
DEFAULT_Y3 = (0.3, 0.3)
DEFAULT_TAPER = 0.05
DEFAULT_SOURCES = PointSourceSet(np.array([[0.30, 0.70], [0.70, 0.65], [0.65, 0.30], [0.35, 0.35]]),
                                 np.array([0.89, 0.73, 0.71, 0.52]))
LANDSCAPE_SOURCE = (0.443, 0.298)


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def _wall_distance(p):
    return np.min(np.stack([p[:, 0], 1 - p[:, 0], p[:, 1], 1 - p[:, 1]]), axis=0)


def med1_formula(p) -> np.ndarray:
    """0.5 + Σ 0.5 cos(π|x − y_k|/2R) on the two disks, without any taper."""
    p = np.atleast_2d(p)
    v = np.full(len(p), 0.5)
    for y in MED1_CENTERS:
        r = np.linalg.norm(p - np.asarray(y), axis=1)
        v += np.where(r < MED1_RADIUS, 0.5 * np.cos(np.pi * r / (2 * MED1_RADIUS)), 0.0)
    return v


def med1_index(p, taper_width: float = DEFAULT_TAPER) -> np.ndarray:
    # the constant background would touch ∂Ω; ramp it to 0 within taper_width
    p = np.atleast_2d(p)
    return med1_formula(p) * smoothstep(_wall_distance(p) / taper_width)


def med2_index(p, y3=DEFAULT_Y3) -> np.ndarray:
    p = np.atleast_2d(p)
    (x0, x1), (y0, y1) = MED2_RECT
    rect = (p[:, 0] > x0) & (p[:, 0] < x1) & (p[:, 1] > y0) & (p[:, 1] < y1)
    disk = np.linalg.norm(p - np.asarray(y3), axis=1) < MED2_DISK_RADIUS
    return 0.4 * rect + 0.2 * disk


def bump(p, center=(0.5, 0.5), radius: float = 0.2) -> np.ndarray:
    """C¹ bump cos²(π r / 2R) supported in the disk of radius R."""
    r = np.linalg.norm(np.atleast_2d(p) - np.asarray(center), axis=1)
    return np.where(r < radius, np.cos(np.pi * r / (2 * radius)) ** 2, 0.0)


def builtin_media(y3=DEFAULT_Y3, taper_width: float = DEFAULT_TAPER) -> dict[str, Medium]:
    y3 = tuple(float(v) for v in y3)
    return {
        "med1": Medium(lambda p: med1_index(p, taper_width), "med1",
                       {"taper": "smoothstep(d/w) on the distance d to the boundary",
                        "taper_width": taper_width}),
        "med2": Medium(lambda p: med2_index(p, y3), "med2", {"y3": list(y3)}),
        "homogeneous": Medium.homogeneous(),
    }


def perturbation_medium(center=(0.5, 0.5), radius: float = 0.2, amplitude: float = 1.0) -> Medium:
    c = tuple(float(v) for v in center)
    return Medium(lambda p: amplitude * bump(p, c, radius), "bump",
                  {"center": list(c), "radius": radius, "amplitude": amplitude})


# per-scene inversion defaults, overridden by SweepSpec.medium_config
MEDIUM_DEFAULTS = {
    "med1": {"background_scan": [0.0, 1.0, 51], "support_margin": 0.0, "beta": 0.1,
             "max_iters": 800},
    "med2": {"max_iters": 200},
    "homogeneous": {"max_iters": 100},
}


# ------------------------------------------------------------------- specs

@dataclass
class SweepSpec:
    """One sweep: scene, noise levels, realizations, seeds and inversion settings.

    ``invert_with`` selects the medium used by the source inversion: the
    truth, a reconstruction from J differential data sets, or the truth plus
    ε·δn for each ε in ``epsilons``.
    """

    scene: str = "med1"
    k: float = 8.0
    noise_levels: list = field(default_factory=lambda: [0.01, 0.05])
    realizations: int = 10
    seed: int = 0
    invert_with: str = "true"
    epsilons: list = field(default_factory=lambda: [0.0])
    perturbation: dict = field(default_factory=lambda: {"center": [0.5, 0.5], "radius": 0.2,
                                                        "amplitude": 1.0})
    fine_N: int = 192
    coarse_N: int = 96
    illumination: str = "zero"
    sources: Optional[dict] = None
    y3: list = field(default_factory=lambda: list(DEFAULT_Y3))
    taper_width: float = DEFAULT_TAPER
    source_config: dict = field(default_factory=dict)
    medium_config: dict = field(default_factory=dict)
    medium_noise: float = 0.01
    probes: int = 6
    cgo_angle: float = 0.0
    cgo_decay: float = 0.0
    constants: Optional[dict] = None
    custom_medium: Optional[list] = None

    SCENES = ("med1", "med2", "homogeneous", "custom")
    MODES = ("true", "reconstructed", "perturbed")

    def validate(self) -> "SweepSpec":
        if self.scene not in self.SCENES:
            raise ValueError(f"scene must be one of {self.SCENES}")
        if self.scene == "custom" and not self.custom_medium:
            raise ValueError("custom scene needs custom_medium (list of bumps)")
        if self.invert_with not in self.MODES:
            raise ValueError(f"invert_with must be one of {self.MODES}")
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")
        if not self.noise_levels or any(t < 0 for t in self.noise_levels):
            raise ValueError("noise levels must be a non-empty list of values >= 0")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be >= 0")
        if self.illumination not in ("zero", "plane"):
            raise ValueError("illumination must be 'zero' or 'plane'")
        if self.coarse_N < 2 or self.fine_N < self.coarse_N or self.fine_N % self.coarse_N:
            raise ValueError("fine_N must be a multiple of coarse_N")
        if self.medium_noise < 0 or self.probes < 1:
            raise ValueError("medium_noise >= 0 and probes >= 1 required")
        SourceInversionConfig.from_dict(self.source_config_dict())
        MediumInversionConfig.from_dict(self.medium_config_dict())
        return self

    def source_config_dict(self) -> dict:
        d = {"m": self.true_sources().m, "max_iters": 100, "seed": self.seed}
        d.update(self.source_config)
        return d

    def medium_config_dict(self) -> dict:
        d = {"J": self.probes}
        d.update(MEDIUM_DEFAULTS.get(self.scene, {}))
        d.update(self.medium_config)
        return d

    def true_sources(self) -> PointSourceSet:
        return DEFAULT_SOURCES if self.sources is None else PointSourceSet.from_dict(self.sources)

    def medium(self) -> Medium:
        if self.scene == "custom":
            bumps = [perturbation_medium(b["center"], b["radius"], b.get("amplitude", 1.0))
                     for b in self.custom_medium]
            return Medium(lambda p: sum(b(p) for b in bumps), "custom",
                          {"bumps": list(self.custom_medium)})
        return builtin_media(self.y3, self.taper_width)[self.scene]

    def projection(self) -> Projection:
        return Projection.from_cgo(make_cgo(self.k, self.cgo_angle, self.cgo_decay))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def level_key(tau: float) -> int:
    # seeds follow the noise value, not its position in the list
    return int(round(float(tau) * 1e6))


def cell_seed(seed: int, tau: float, realization: int) -> tuple:
    return (int(seed), level_key(tau), int(realization))


# ------------------------------------------------------------------ results

COLUMNS = ("scene", "mode", "tau", "eps", "realization", "status", "rho_x", "rho_x_proj",
           "rho_x_tilde", "rho_lambda", "psi_final", "g_misfit", "f_misfit", "n_misfit",
           "sigma", "lambda_errors")


@dataclass
class SweepResult:
    rows: list
    spec: dict
    timing: dict = field(default_factory=dict)
    medium_reports: list = field(default_factory=list)

    def groups(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out.setdefault((r["tau"], r["eps"]), []).append(r)
        return out

    def aggregates(self) -> list[dict]:
        agg = []
        for (tau, eps), rows in sorted(self.groups().items()):
            ok = [r for r in rows if r["status"] == "ok"]
            entry = {"tau": tau, "eps": eps, "cells": len(rows), "failed": len(rows) - len(ok)}
            for key in ("rho_x", "rho_x_proj", "rho_x_tilde", "rho_lambda", "psi_final"):
                v = np.array([r[key] for r in ok], dtype=float)
                if v.size:
                    q1, med, q3 = np.percentile(v, [25, 50, 75])
                    entry[key] = {"median": float(med), "iqr": float(q3 - q1)}
            agg.append(entry)
        return agg

    def median(self, key: str, tau: float, eps: float = 0.0) -> float:
        rows = [r for r in self.groups().get((tau, eps), []) if r["status"] == "ok"]
        return float(np.median([r[key] for r in rows])) if rows else float("nan")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in COLUMNS])
        return path

    def summary(self) -> dict:
        return {"spec": self.spec, "aggregates": self.aggregates(), "timing": self.timing,
                "medium_reports": self.medium_reports,
                "note": "bound constants are unknown; only trends and tolerance bands are checked"}

    def save(self, csv_path, json_path=None) -> list[Path]:
        out = [self.to_csv(csv_path)]
        if json_path is not None:
            p = Path(json_path)
            p.write_text(json.dumps(self.summary(), indent=2, default=float))
            out.append(p)
        return out

    @classmethod
    def read_csv(cls, path) -> list[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    return "" if v is None else str(v)


# ----------------------------------------------------------------- pipeline

class Lab:
    """Meshes, synthetic data and cached models shared by the cells of a sweep."""

    def __init__(self, spec: SweepSpec):
        self.spec = spec.validate()
        self.fine = build_unit_square_mesh(spec.fine_N)
        self.coarse = build_unit_square_mesh(spec.coarse_N)
        self.medium = spec.medium()
        self.sources = spec.true_sources()
        self.proj = spec.projection()
        self._models: dict = {}
        self._clean: Optional[CauchyData] = None

    def illumination(self, mesh: Mesh) -> np.ndarray:
        if self.spec.illumination == "plane":
            return plane_wave_trace(mesh, self.spec.k)
        return np.zeros(mesh.n_boundary, dtype=complex)

    def clean_data(self) -> CauchyData:
        """Noise-free Cauchy data from the fine mesh, restricted to the coarse one."""
        if self._clean is None:
            n = self.medium.on(self.fine)
            check_compact_support(self.fine, n)
            solver = ForwardSolver(self.fine, n, self.spec.k)
            f = self.illumination(self.fine)
            _, g = solver.solve(f, self.sources)
            self._clean = CauchyData(self.fine, f, g, self.spec.k).restrict(self.coarse)
        return self._clean

    def model(self, key, n: np.ndarray) -> SourceModel:
        if key not in self._models:
            self._models[key] = SourceModel(ForwardSolver(self.coarse, n, self.spec.k))
        return self._models[key]

    def differential_data(self, tau: float):
        """J probe traces on the coarse mesh and noisy fine-mesh DtN data."""
        n = self.medium.on(self.fine)
        solver = ForwardSolver(self.fine, n, self.spec.k)
        hf = default_probes(self.fine, self.spec.k, self.spec.probes)
        hc = default_probes(self.coarse, self.spec.k, self.spec.probes)
        measured = [multiplicative_noise(restrict_boundary(solver.dtn(h), self.fine, self.coarse),
                                         tau, (self.spec.seed, level_key(tau), 10 ** 6 + j))
                    for j, h in enumerate(hf)]
        return hc, measured

    def reconstruct_medium(self):
        cfg = MediumInversionConfig.from_dict(self.spec.medium_config_dict())
        probes, measured = self.differential_data(self.spec.medium_noise)
        n_rec, rep = invert_medium(cfg, probes, measured, self.coarse, self.spec.k)
        return n_rec, rep

    def run_cell(self, model: SourceModel, n_used: np.ndarray, tau: float, eps: float,
                 realization: int, mode: str) -> dict:
        spec = self.spec
        row = {"scene": spec.scene, "mode": mode, "tau": float(tau), "eps": float(eps),
               "realization": int(realization), "status": "ok"}
        for c in COLUMNS[6:]:
            row[c] = None
        try:
            data = add_noise(self.clean_data(), tau, cell_seed(spec.seed, tau, realization))
            cfg = SourceInversionConfig.from_dict(spec.source_config_dict())
            rec, rep = invert_sources(cfg, None, data, model)
            match = match_sources(self.sources, rec, self.proj)
            g_rec = model.predict(rec, data.f)
            n_true = self.medium.on(self.coarse)
            row.update(rho_x=match.rho_x, rho_x_proj=match.rho_x_proj, rho_x_tilde=match.rho_x_frame,
                       rho_lambda=match.rho_lambda, psi_final=rep.psi_final,
                       g_misfit=boundary_l2_norm(self.coarse, g_rec - data.g), f_misfit=0.0,
                       n_misfit=l2_norm(self.coarse, n_used - n_true),
                       sigma=separation_sigma([self.sources.locations, rec.locations], self.proj),
                       lambda_errors=list(np.abs(self.sources.strengths -
                                                 rec.strengths[match.permutation])))
        except (ResonanceError, SingularityError, RuntimeError, ValueError,
                np.linalg.LinAlgError) as exc:
            log.warning("cell tau=%s eps=%s r=%s failed: %s", tau, eps, realization, exc)
            row["status"] = f"failed: {type(exc).__name__}: {exc}"
        return row


def noise_sweep(spec: SweepSpec, progress: Optional[Callable[[dict], None]] = None,
                lab: Optional[Lab] = None) -> SweepResult:
    """Invert every (τ, realization) cell with the medium chosen by
    ``spec.invert_with`` (``true`` or ``reconstructed``)."""
    t0 = time.perf_counter()
    lab = Lab(spec) if lab is None else lab
    reports = []
    if spec.invert_with == "reconstructed":
        n_used, mrep = lab.reconstruct_medium()
        reports.append(mrep.to_dict())
        key = "reconstructed"
    elif spec.invert_with == "true":
        n_used, key = lab.medium.on(lab.coarse), "true"
    else:
        raise ValueError("use medium_perturbation_sweep for invert_with='perturbed'")
    t_med = time.perf_counter() - t0
    model = lab.model(key, n_used)
    rows = []
    for tau in spec.noise_levels:
        for rz in range(spec.realizations):
            row = lab.run_cell(model, n_used, tau, 0.0, rz, spec.invert_with)
            rows.append(row)
            if progress:
                progress(row)
    return SweepResult(rows, spec.to_dict(), {"total": time.perf_counter() - t0, "medium": t_med},
                       reports)


def medium_perturbation_sweep(spec: SweepSpec, progress: Optional[Callable[[dict], None]] = None,
                              lab: Optional[Lab] = None) -> SweepResult:
    """Two-step mode (``invert_with='reconstructed'``) or controlled mode
    (``'perturbed'``: invert under n_true + ε·δn for each ε)."""
    if spec.invert_with != "perturbed":
        return noise_sweep(spec, progress, lab)
    t0 = time.perf_counter()
    lab = Lab(spec) if lab is None else lab
    p = spec.perturbation
    dn = perturbation_medium(p.get("center", (0.5, 0.5)), p.get("radius", 0.2),
                             p.get("amplitude", 1.0)).on(lab.coarse)
    n_true = lab.medium.on(lab.coarse)
    rows = []
    for eps in spec.epsilons:
        # ε = 0 shares the cached true-medium model with noise_sweep
        key = "true" if eps == 0 else ("perturbed", float(eps))
        n_used = n_true + eps * dn
        model = lab.model(key, n_used)
        for tau in spec.noise_levels:
            for rz in range(spec.realizations):
                row = lab.run_cell(model, n_used, tau, eps, rz, "perturbed")
                rows.append(row)
                if progress:
                    progress(row)
    return SweepResult(rows, spec.to_dict(), {"total": time.perf_counter() - t0})


# ---------------------------------------------------------------- landscape

@dataclass
class LandscapeResult:
    k: float
    centers: np.ndarray
    psi: np.ndarray              # normalized, NaN marks singular cells
    minima: list
    source: tuple

    def summary(self) -> dict:
        return {"k": self.k, "resolution": len(self.centers), "source": list(self.source),
                "minima": self.minima, "count": len(self.minima),
                "singular_cells": int(np.isnan(self.psi).sum())}

    def true_cell(self) -> tuple[int, int]:
        G = len(self.centers)
        return tuple(min(int(c * G), G - 1) for c in self.source)

    def to_csv(self, path) -> Path:
        """Matrix with rows indexed by the x cell and columns by the y cell."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x\\y"] + [repr(float(c)) for c in self.centers])
            for i, c in enumerate(self.centers):
                w.writerow([repr(float(c))] + ["nan" if np.isnan(v) else repr(float(v))
                                               for v in self.psi[i]])
        return path

    @staticmethod
    def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        centers = np.array([float(v) for v in rows[0][1:]])
        return centers, np.array([[float(v) for v in r[1:]] for r in rows[1:]])

    def to_svg(self, path, cell: int = 8) -> Path:
        G = len(self.centers)
        size = G * cell
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
        for i in range(G):
            for j in range(G):
                v = self.psi[i, j]
                colour = "#ff00ff" if np.isnan(v) else _grey(v)
                parts.append(f'<rect x="{i * cell}" y="{(G - 1 - j) * cell}" width="{cell}" '
                             f'height="{cell}" fill="{colour}"/>')
        for m in self.minima:
            cx, cy = (m["i"] + 0.5) * cell, (G - 0.5 - m["j"]) * cell
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{cell / 2}" fill="none" stroke="red"/>')
        sx, sy = self.source[0] * size, (1 - self.source[1]) * size
        parts.append(f'<text x="{sx}" y="{sy}" fill="blue" font-size="{2 * cell}" '
                     f'text-anchor="middle" dominant-baseline="middle">×</text>')
        parts.append("</svg>")
        path = Path(path)
        path.write_text("\n".join(parts))
        return path


def _grey(v: float) -> str:
    c = int(round(255 * min(max(v, 0.0), 1.0)))
    return f"#{c:02x}{c:02x}{c:02x}"


def strict_local_minima(P: np.ndarray) -> list[tuple[int, int]]:
    """Cells strictly below every finite 8-neighbour; NaN cells never qualify."""
    G0, G1 = P.shape
    Q = np.pad(P, 1, constant_values=np.nan)
    ok = np.isfinite(P)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            nb = Q[1 + di:1 + di + G0, 1 + dj:1 + dj + G1]
            ok &= np.isnan(nb) | (P < nb)
    return [tuple(int(v) for v in ij) for ij in np.argwhere(ok)]


def landscape_scan(k_values: Sequence[float] = (5.0, 8.0, 12.0), resolution: int = 48,
                   medium: Optional[Medium] = None, source=LANDSCAPE_SOURCE, strength: float = 1.0,
                   fine_N: int = 128, coarse_N: int = 64, chunk: int = 256) -> list[LandscapeResult]:
    """Ψ(x)/max Ψ for one source of known strength moved over cell centres.

    Clean data come from the fine mesh; Ψ is evaluated on the coarse one.
    Cells where the source would sit on an active node are marked NaN.
    """
    medium = Medium.homogeneous() if medium is None else medium
    fine, coarse = build_unit_square_mesh(fine_N), build_unit_square_mesh(coarse_N)
    true = PointSourceSet(np.array([source], dtype=float), np.array([strength]))
    c = (np.arange(resolution) + 0.5) / resolution
    X, Y = np.meshgrid(c, c, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    out = []
    for k in k_values:
        fs = ForwardSolver(fine, medium.on(fine), k)
        f = np.zeros(fine.n_boundary, dtype=complex)
        _, g = fs.solve(f, true)
        data = CauchyData(fine, f, g, k).restrict(coarse)
        model = SourceModel(ForwardSolver(coarse, medium.on(coarse), k))
        d = data.g - model.background(data.f)
        Mb = model.solver.system.M_bdy
        psi = np.full(len(pts), np.nan)
        for s in range(0, len(pts), chunk):
            block = np.arange(s, min(s + chunk, len(pts)))
            try:
                cols = [(block, model.unit_responses(pts[block]).T)]
            except SingularityError:
                cols = []
                for i in block:
                    try:
                        cols.append((np.array([i]), model.unit_responses(pts[i:i + 1]).T))
                    except SingularityError:
                        pass
            for idx, b in cols:
                r = strength * b - d[None, :]
                psi[idx] = 0.5 * np.real(np.einsum("pi,pi->p", r.conj(), (Mb @ r.T).T))
        psi = psi.reshape(resolution, resolution)
        psi = psi / np.nanmax(psi)
        mins = [{"i": i, "j": j, "x": float(c[i]), "y": float(c[j])}
                for i, j in strict_local_minima(psi)]
        out.append(LandscapeResult(float(k), c, psi, mins, tuple(float(v) for v in source)))
    return out


# ------------------------------------------------------------------- bounds

class BoundPreconditionError(ValueError):
    """σ = 0, or ρ_x ≥ σ for the strength bound."""


def eval_bounds(constants: dict, measured: dict) -> dict:
    """Data-dependent factors of the location, strength and medium bounds.

    ``constants``: c1, c2, c3, c (default 1). ``measured``: m, sigma, diam,
    lambda_min, and optionally boundary_measure (4), g_misfit, f_misfit,
    lambda_max, rho_x, rho_x_tilde, n_misfit, mu, k. Pure arithmetic.
    """
    c1 = float(constants.get("c1", 1.0))
    c2 = float(constants.get("c2", 1.0))
    c3 = float(constants.get("c3", 1.0))
    c = float(constants.get("c", 1.0))
    m = int(measured["m"])
    sigma = float(measured["sigma"])
    diam = float(measured["diam"])
    lam_lo = float(measured["lambda_min"])
    area = float(measured.get("boundary_measure", 4.0))
    misfit = float(measured.get("g_misfit", 0.0)) + float(measured.get("f_misfit", 0.0))
    if m < 1:
        raise BoundPreconditionError("m must be at least 1")
    if sigma <= 0:
        raise BoundPreconditionError("σ must be positive")
    if lam_lo <= 0:
        raise BoundPreconditionError("the strength lower bound must be positive")
    out = {"loc_bound": c1 * (np.sqrt(area) * diam ** (2 * m - 1) * misfit /
                              (lam_lo * sigma ** (m - 1))) ** (1.0 / m)}
    if "rho_x" in measured:
        if float(measured["rho_x"]) >= sigma:
            raise BoundPreconditionError("strength bound needs ρ_x < σ")
        lam_hi = float(measured.get("lambda_max", lam_lo))
        data_part = c3 * np.sqrt(area) * diam ** (2 * m - 2) * misfit
        out["strength_bound_data"] = data_part
        out["strength_bound"] = c2 * lam_hi * float(measured.get("rho_x_tilde", 0.0)) + data_part
    if "n_misfit" in measured:
        mu = float(measured.get("mu", 1.0))
        k = float(measured.get("k", 8.0))
        out["medium_bound"] = c * (mu * k ** 2 * float(measured["n_misfit"]) /
                                   (lam_lo * sigma ** (m - 1))) ** (1.0 / m)
    return {key: float(v) for key, v in out.items()}


# ----------------------------------------------------------- gradient gates

def _random_medium(rng, mesh: Mesh) -> np.ndarray:
    n = np.zeros(mesh.n_nodes)
    for _ in range(2):
        c = rng.uniform(0.3, 0.7, 2)
        n += rng.uniform(0.1, 0.5) * bump(mesh.nodes, c, rng.uniform(0.15, 0.25))
    return n


def _random_sources(rng, m: int) -> PointSourceSet:
    from .source_inversion import random_configuration

    return PointSourceSet(random_configuration(rng, m, 0.2, 0.8, 0.15), rng.uniform(0.5, 1.5, m))


def fd_check(N: int = 32, configs: int = 5, step: float = 1e-5, k: float = 8.0,
             seed: int = 0, tol: float = 1e-3) -> dict:
    """Central-difference gates for the medium and source gradients.

    Each configuration draws a random admissible point, random data and a
    random direction; the directional derivative of the adjoint gradient is
    compared with (F(p + εd) − F(p − εd)) / 2ε.
    """
    from .medium_inversion import MediumProblem, support_mask

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    mesh = build_unit_square_mesh(N)
    mask = support_mask(mesh, 0.05)
    probes = default_probes(mesh, k, 3)
    out = {"medium": [], "source": [], "N": N, "step": step, "tol": tol}
    for _ in range(configs):
        truth = ForwardSolver(mesh, _random_medium(rng, mesh), k)
        measured = [truth.dtn(h) for h in probes]
        prob = MediumProblem(mesh, k, probes, measured, beta=float(rng.uniform(0, 1e-3)))
        n = _random_medium(rng, mesh) * mask
        _, g, _ = prob.evaluate(n)
        d = rng.standard_normal(mesh.n_nodes) * mask
        fd = (prob.evaluate(n + step * d, False)[0] - prob.evaluate(n - step * d, False)[0]) / (2 * step)
        out["medium"].append({"fd": fd, "adjoint": float(g @ d),
                              "rel_error": abs(fd - g @ d) / max(abs(fd), 1e-300)})
    for _ in range(configs):
        m = int(rng.integers(2, 5))
        n = _random_medium(rng, mesh)
        model = SourceModel(ForwardSolver(mesh, n, k))
        f = plane_wave_trace(mesh, k, rng.standard_normal(2) / np.sqrt(2))
        g_star = model.predict(_random_sources(rng, m), f)
        s = _random_sources(rng, m)
        _, dlam, dx = model.value_and_grad(s, f, g_star)
        dxd = rng.standard_normal((m, 2))
        dld = rng.standard_normal(m)
        fp = model.misfit(PointSourceSet(s.locations + step * dxd, s.strengths + step * dld), f, g_star)
        fm = model.misfit(PointSourceSet(s.locations - step * dxd, s.strengths - step * dld), f, g_star)
        fd = (fp - fm) / (2 * step)
        ad = float(np.sum(dx * dxd) + dlam @ dld)
        out["source"].append({"m": m, "fd": fd, "adjoint": ad,
                              "rel_error": abs(fd - ad) / max(abs(fd), 1e-300)})
    out["medium_pass"] = all(r["rel_error"] <= tol for r in out["medium"])
    out["source_pass"] = all(r["rel_error"] <= tol for r in out["source"])
    return out
