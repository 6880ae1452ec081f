"""
Command-line entry point: ``helmsource <subcommand> --config cfg.json --out DIR``.

Every run writes ``manifest.json`` into the output directory, also when the
run fails. Top-level config keys can be overridden from the environment as
``HELMSOURCE_<KEY>=<json value>``. The flags ``--seed``, ``--workers``,
``--mesh-fine`` and ``--mesh-coarse`` are mirrored by ``HELMSOURCE_SEED``,
``HELMSOURCE_WORKERS``, ``HELMSOURCE_MESH_FINE`` and ``HELMSOURCE_MESH_COARSE``;
precedence is flag, then environment, then config file.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 64 unknown
subcommand, 66 unreadable config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .forward import (
    CauchyData,
    ForwardSolver,
    PointSourceSet,
    SingularityError,
    SourceConfigError,
    add_noise,
    default_probes,
    multiplicative_noise,
    restrict_boundary,
)
from .medium_inversion import MediumInversionConfig, invert_medium
from .mesh_fem import ResonanceError, build_unit_square_mesh, load_field, save_field, save_mesh
from .optim import LineSearchError
from .projection import (
    Projection,
    dump_report,
    make_cgo,
    rg_report,
    test_function,
)
from .source_inversion import (
    SourceInversionConfig,
    SourceModel,
    invert_sources,
    match_sources,
    save_result,
)
from .stability_lab import (
    SweepSpec,
    builtin_media,
    eval_bounds,
    fd_check,
    landscape_scan,
    medium_perturbation_sweep,
    noise_sweep,
)

log = logging.getLogger("helmsource")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_USAGE, EXIT_NOINPUT = 0, 2, 3, 64, 66


class ConfigError(ValueError):
    """Schema violation in a subcommand config."""


@dataclass
class RunManifest:
    subcommand: str
    config_path: Optional[str]
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0
    seeds: dict = field(default_factory=dict)
    status: str = "running"
    exit_code: Optional[int] = None
    message: str = ""
    workers: int = 1

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "manifest.json"
        self.outputs = sorted(set(self.outputs))
        path.write_text(json.dumps(asdict(self), indent=2, default=str))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _keys(cfg: dict, allowed: set, name: str):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")


FLAG_ENV = {"seed": "HELMSOURCE_SEED", "workers": "HELMSOURCE_WORKERS",
            "mesh_fine": "HELMSOURCE_MESH_FINE", "mesh_coarse": "HELMSOURCE_MESH_COARSE"}

# flag -> {subcommand: config key path}
FLAG_TARGETS = {
    "seed": {"synthesize": ("seed",), "noise-sweep": ("seed",), "medium-sweep": ("seed",),
             "fd-check": ("seed",), "invert-sources": ("source_config", "seed")},
    "mesh_fine": {"synthesize": ("fine_N",), "noise-sweep": ("fine_N",), "medium-sweep": ("fine_N",),
                  "landscape": ("fine_N",), "verify-rg": ("N",), "fd-check": ("N",)},
    "mesh_coarse": {"synthesize": ("coarse_N",), "noise-sweep": ("coarse_N",),
                    "medium-sweep": ("coarse_N",), "landscape": ("coarse_N",)},
}


def _env_overrides(cfg: dict) -> dict:
    cfg = dict(cfg)
    for name, raw in os.environ.items():
        if not name.startswith("HELMSOURCE_") or name in FLAG_ENV.values():
            continue
        key = name[len("HELMSOURCE_"):].lower()
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    return cfg


def resolve_flags(flags: dict) -> dict:
    """Fill unset flags from their environment mirrors."""
    out = dict(flags)
    for key, env in FLAG_ENV.items():
        if out.get(key) is None and os.environ.get(env):
            try:
                out[key] = int(os.environ[env])
            except ValueError as exc:
                raise ConfigError(f"{env} must be an integer") from exc
    return out


def apply_flags(command: str, cfg: dict, flags: dict) -> dict:
    cfg = json.loads(json.dumps(cfg))
    for key, targets in FLAG_TARGETS.items():
        value = flags.get(key)
        if value is None:
            continue
        if command not in targets:
            raise ConfigError(f"--{key.replace('_', '-')} does not apply to {command}")
        path = targets[command]
        node = cfg
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = int(value)
    return cfg


def _scene_medium(cfg: dict):
    name = cfg.get("scene", "med1")
    media = builtin_media(cfg.get("y3", (0.3, 0.3)), cfg.get("taper_width", 0.05))
    if name not in media:
        raise ConfigError(f"unknown scene {name!r}; choose from {sorted(media)}")
    return media[name]


def _sources(cfg: dict) -> PointSourceSet:
    from .stability_lab import DEFAULT_SOURCES

    return PointSourceSet.from_dict(cfg["sources"]) if cfg.get("sources") else DEFAULT_SOURCES


# ------------------------------------------------------------ subcommands

SYNTH_KEYS = {"scene", "k", "fine_N", "coarse_N", "tau", "seed", "sources", "y3", "taper_width",
              "probes", "differential", "medium_tau"}


def cmd_synthesize(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, SYNTH_KEYS, "synthesize")
    k = float(cfg.get("k", 8.0))
    fine = build_unit_square_mesh(int(cfg.get("fine_N", 192)))
    coarse = build_unit_square_mesh(int(cfg.get("coarse_N", 96)))
    medium = _scene_medium(cfg)
    sources = _sources(cfg)
    seed = int(cfg.get("seed", 0))
    tau = float(cfg.get("tau", 0.0))
    man.seeds = {"noise": [seed, 0]}
    solver = ForwardSolver(fine, medium.on(fine), k)
    f = np.zeros(fine.n_boundary, dtype=complex)
    _, g = solver.solve(f, sources)
    data = add_noise(CauchyData(fine, f, g, k).restrict(coarse), tau, (seed, 0))
    man.outputs += [str(p) for p in data.save(out / "cauchy.csv")]
    man.outputs += [str(p) for p in save_mesh(coarse, out / "mesh")]
    man.outputs.append(str(save_field(out / "n_true.csv", medium.on(coarse))))
    p = out / "sources_true.json"
    p.write_text(json.dumps(sources.to_dict(), indent=2))
    man.outputs.append(str(p))
    if cfg.get("differential", True):
        J = int(cfg.get("probes", 6))
        mtau = float(cfg.get("medium_tau", tau))
        hf, hc = default_probes(fine, k, J), default_probes(coarse, k, J)
        rows = {"k": k, "coarse_N": coarse.N, "tau": mtau, "probes": [], "measured": []}
        for j, h in enumerate(hf):
            gm = multiplicative_noise(restrict_boundary(solver.dtn(h), fine, coarse), mtau, (seed, 1, j))
            rows["probes"].append([[z.real, z.imag] for z in hc[j]])
            rows["measured"].append([[z.real, z.imag] for z in gm])
        man.seeds["differential"] = [seed, 1]
        p = out / "differential.json"
        p.write_text(json.dumps(rows))
        man.outputs.append(str(p))
    return {"boundary_nodes": int(coarse.n_boundary), "tau": tau}


def _load_differential(path):
    d = json.loads(Path(path).read_text())
    as_c = lambda a: np.array([complex(re, im) for re, im in a])  # noqa: E731
    return d, [as_c(h) for h in d["probes"]], [as_c(g) for g in d["measured"]]


def cmd_invert_medium(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"differential", "medium_config"}, "invert-medium")
    if "differential" not in cfg:
        raise ConfigError("invert-medium needs 'differential' (path to differential.json)")
    meta, probes, measured = _load_differential(cfg["differential"])
    man.inputs.append(str(cfg["differential"]))
    mcfg = MediumInversionConfig.from_dict(cfg.get("medium_config", {}))
    mesh = build_unit_square_mesh(int(meta["coarse_N"]))
    n_rec, rep = invert_medium(mcfg, probes[: mcfg.J], measured[: mcfg.J], mesh, float(meta["k"]))
    man.outputs += [str(p) for p in rep.save(out / "medium_report.json", out / "n_rec.csv")]
    return {"iterations": rep.iterations, "phi": rep.phi_history[-1], "message": rep.message}


def cmd_invert_sources(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"data", "medium", "source_config", "truth"}, "invert-sources")
    if "data" not in cfg:
        raise ConfigError("invert-sources needs 'data' (path to cauchy.csv)")
    data = CauchyData.load(cfg["data"])
    man.inputs.append(str(cfg["data"]))
    med = cfg.get("medium")
    if med is None:
        raise ConfigError("invert-sources needs 'medium' (node CSV path or scene name)")
    if str(med).endswith(".csv"):
        n = np.real(load_field(med))
        man.inputs.append(str(med))
    else:
        n = _scene_medium({"scene": med}).on(data.mesh)
    scfg = SourceInversionConfig.from_dict(cfg.get("source_config", {}))
    man.seeds["starts"] = scfg.seed
    model = SourceModel(ForwardSolver(data.mesh, n, data.k))
    rec, rep = invert_sources(scfg, None, data, model)
    match = None
    if cfg.get("truth"):
        truth = PointSourceSet.from_dict(json.loads(Path(cfg["truth"]).read_text()))
        man.inputs.append(str(cfg["truth"]))
        match = match_sources(truth, rec)
    man.outputs.append(str(save_result(out / "sources.json", rec, rep, match)))
    summary = {"psi": rep.psi_final, "locations": rec.locations.tolist(),
               "strengths": rec.strengths.tolist()}
    if match is not None:
        summary.update(rho_x=match.rho_x, rho_lambda=match.rho_lambda)
    return summary


def cmd_verify_rg(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"k", "N", "sources", "angle", "decay", "zeros"}, "verify-rg")
    k = float(cfg.get("k", 8.0))
    mesh = build_unit_square_mesh(int(cfg.get("N", 128)))
    sources = _sources(cfg)
    solver = ForwardSolver(mesh, np.zeros(mesh.n_nodes), k)
    f = np.zeros(mesh.n_boundary, dtype=complex)
    _, g = solver.solve(f, sources)
    data = CauchyData(mesh, f, g, k)
    phi = make_cgo(k, float(cfg.get("angle", 0.3)), float(cfg.get("decay", 0.0)))
    proj = Projection.from_cgo(phi)
    zeros = np.asarray(cfg.get("zeros", []), dtype=float).reshape(-1, 2)
    psi = test_function(phi, proj, zeros)
    expected = complex(np.sum(sources.strengths * psi(sources.locations)))
    rep = rg_report(data, psi, expected)
    p = out / "rg_report.json"
    dump_report(p, [rep])
    man.outputs.append(str(p))
    return {"rel_error": rep["rel_error"]}


def _sweep_spec(cfg: dict) -> SweepSpec:
    try:
        return SweepSpec.from_dict(cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_noise_sweep(cfg: dict, out: Path, man: RunManifest) -> dict:
    spec = _sweep_spec(cfg)
    man.seeds = {"sweep": spec.seed}
    res = noise_sweep(spec)
    man.outputs += [str(p) for p in res.save(out / "sweep.csv", out / "sweep_summary.json")]
    return {"aggregates": res.aggregates()}


def cmd_medium_sweep(cfg: dict, out: Path, man: RunManifest) -> dict:
    spec = _sweep_spec(cfg)
    man.seeds = {"sweep": spec.seed}
    res = medium_perturbation_sweep(spec)
    man.outputs += [str(p) for p in res.save(out / "sweep.csv", out / "sweep_summary.json")]
    return {"aggregates": res.aggregates()}


def cmd_landscape(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"k_values", "resolution", "fine_N", "coarse_N", "source", "strength", "scene", "svg"},
          "landscape")
    medium = _scene_medium(cfg) if cfg.get("scene") else None
    res = landscape_scan(cfg.get("k_values", [5.0, 8.0, 12.0]), int(cfg.get("resolution", 48)),
                         medium, tuple(cfg.get("source", (0.443, 0.298))),
                         float(cfg.get("strength", 1.0)), int(cfg.get("fine_N", 128)),
                         int(cfg.get("coarse_N", 64)))
    summary = []
    for r in res:
        tag = f"k{r.k:g}"
        man.outputs.append(str(r.to_csv(out / f"landscape_{tag}.csv")))
        if cfg.get("svg", True):
            man.outputs.append(str(r.to_svg(out / f"landscape_{tag}.svg")))
        summary.append(r.summary())
    p = out / "landscape_summary.json"
    p.write_text(json.dumps(summary, indent=2))
    man.outputs.append(str(p))
    return {"minima": {s["k"]: s["count"] for s in summary}}


def cmd_eval_bounds(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"constants", "measured"}, "eval-bounds")
    if "measured" not in cfg:
        raise ConfigError("eval-bounds needs 'measured'")
    res = eval_bounds(cfg.get("constants", {}), cfg["measured"])
    p = out / "bounds.json"
    p.write_text(json.dumps(res, indent=2))
    man.outputs.append(str(p))
    return res


def cmd_fd_check(cfg: dict, out: Path, man: RunManifest) -> dict:
    _keys(cfg, {"N", "configs", "step", "k", "seed", "tol"}, "fd-check")
    man.seeds = {"fd": int(cfg.get("seed", 0))}
    res = fd_check(int(cfg.get("N", 32)), int(cfg.get("configs", 5)), float(cfg.get("step", 1e-5)),
                   float(cfg.get("k", 8.0)), int(cfg.get("seed", 0)), float(cfg.get("tol", 1e-3)))
    p = out / "fd_check.json"
    p.write_text(json.dumps(res, indent=2, default=float))
    man.outputs.append(str(p))
    if not (res["medium_pass"] and res["source_pass"]):
        raise GateFailure(f"gradient gate failed: medium={res['medium_pass']} source={res['source_pass']}")
    return {"medium_pass": res["medium_pass"], "source_pass": res["source_pass"]}


class GateFailure(RuntimeError):
    pass


COMMANDS = {
    "synthesize": cmd_synthesize,
    "invert-medium": cmd_invert_medium,
    "invert-sources": cmd_invert_sources,
    "verify-rg": cmd_verify_rg,
    "noise-sweep": cmd_noise_sweep,
    "medium-sweep": cmd_medium_sweep,
    "landscape": cmd_landscape,
    "eval-bounds": cmd_eval_bounds,
    "fd-check": cmd_fd_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="helmsource", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="subcommand")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="JSON config file (default: empty config)")
        p.add_argument("--out", "-o", default="out", help="output directory")
        p.add_argument("--verbose", "-v", action="store_true")
        p.add_argument("--seed", type=int, help="base seed (noise, restarts or FD directions)")
        p.add_argument("--workers", type=int,
                       help="worker count; recorded only, execution is sequential")
        p.add_argument("--mesh-fine", dest="mesh_fine", type=int, help="synthesis mesh N")
        p.add_argument("--mesh-coarse", dest="mesh_coarse", type=int, help="inversion mesh N")
    return ap


def run(command: str, config_path: Optional[str], out_dir, verbose: bool = False,
        flags: Optional[dict] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    out = Path(out_dir)
    man = RunManifest(command, config_path)
    t0 = time.perf_counter()
    code, message = EXIT_OK, ""
    try:
        if config_path is None:
            cfg = {}
        else:
            try:
                cfg = json.loads(Path(config_path).read_text())
            except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
                code, message = EXIT_NOINPUT, f"cannot read config: {exc}"
                raise
            man.inputs.append(str(config_path))
            if not isinstance(cfg, dict):
                raise ConfigError("config must be a JSON object")
        cfg = _env_overrides(cfg)
        fl = resolve_flags(flags or {})
        man.workers = fl.get("workers") or os.cpu_count() or 1
        cfg = apply_flags(command, cfg, fl)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[command](cfg, out, man)
        message = json.dumps(result, default=float)
        print(message)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        if code == EXIT_OK:
            code, message = EXIT_NOINPUT, str(exc)
    except (ResonanceError, SingularityError, LineSearchError, GateFailure,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        code, message = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    except (ConfigError, SourceConfigError, ValueError, KeyError, TypeError) as exc:
        code, message = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    except RuntimeError as exc:
        code, message = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    man.wall_clock = time.perf_counter() - t0
    man.status = "ok" if code == EXIT_OK else "failed"
    man.exit_code, man.message = code, message
    man.write(out)
    if code != EXIT_OK:
        print(f"helmsource {command}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"helmsource: unknown subcommand {argv[0]!r}", file=sys.stderr)
        return EXIT_USAGE
    args = build_parser().parse_args(argv)
    if args.command is None:
        build_parser().print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in ("seed", "workers", "mesh_fine", "mesh_coarse")}
    return run(args.command, args.config, args.out, args.verbose, flags)


if __name__ == "__main__":
    sys.exit(main())
