"""Configuration-driven experiment runner.

Usage::

    plcond run CONFIG [-o OUTDIR]
    plcond validate CONFIG
    plcond compare BASELINE CANDIDATE [--tol abs=1e-12,rel=1e-9]

A run writes tab-separated tables, ``summary.json``, PNG figures and a
``manifest.json`` holding the fully resolved configuration.  The manifest is
itself a valid config, so ``plcond run OUTDIR/manifest.json`` repeats a run.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import geometry, plotting
from .conductivity import EllipticityError, PiecewiseLinearConductivity, random_admissible
from .fem import assemble, solve_dirichlet
from .geometry import build_partition, triangulate
from .greens import AsymptoticsConfig, verify_asymptotics
from .inversion import (InverseProblem, gauss_newton, noise_robustness, perturbed_start, synthetic_data)
from .maps import assemble_dton, assemble_ntod, fractional_metric
from .stability import blow_up_study, estimate_lipschitz_constant, schedule
from .survey import (HalfSpaceModel, build_survey, dipole_dipole, pole_pole, pseudo_section,
                     schlumberger, square)
from .tables import read_table, write_table

EXPERIMENTS = ("forward", "dton", "asymptotics", "stability", "inversion", "survey", "blowup")
STOCHASTIC = ("stability", "inversion")
OUTPUT_ENV = "PLCOND_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BREACH = 0, 2, 3, 4

PRESETS = {
    "layered_box": geometry.layered_box,
    "two_layer": geometry.two_layer,
    "unit_square": geometry.unit_square,
    "polygon_disk": geometry.polygon_disk,
}


class ConfigError(ValueError):
    pass


class SchemaMismatchError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


def _load_yaml(path: Path):
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _resolve_file(value, base: Path, what: str):
    """Inline mappings pass through; strings are read relative to the config."""
    if value is None or isinstance(value, dict):
        return value
    if isinstance(value, str):
        data = _load_yaml(base / value)
        if not isinstance(data, dict):
            raise ConfigError(f"{what} file {value} does not hold a mapping")
        return data
    raise ConfigError(f"{what} must be a path or a mapping")


@dataclass
class RunConfig:
    experiment: str
    output: str = "out"
    seed: int | None = None
    h: float | None = None
    partition: dict | None = None
    conductivity: dict | None = None
    conductivity2: dict | None = None
    strict: bool = True
    params: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: dict, base: Path = Path(".")) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        if isinstance(data.get("config"), dict):
            data = data["config"]  # a manifest from an earlier run
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kind = data.get("experiment")
        if kind not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
        cfg = cls(
            experiment=kind,
            output=str(data.get("output", "out")),
            seed=data.get("seed"),
            h=data.get("h"),
            partition=_resolve_file(data.get("partition"), base, "partition"),
            conductivity=_resolve_file(data.get("conductivity"), base, "conductivity"),
            conductivity2=_resolve_file(data.get("conductivity2"), base, "conductivity"),
            strict=bool(data.get("strict", True)),
            params=dict(data.get("params") or {}),
        )
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        return cls.from_mapping(_load_yaml(path), path.parent)

    def check(self) -> None:
        if self.seed is not None and (not isinstance(self.seed, int) or self.seed < 0):
            raise ConfigError("seed must be a non-negative integer")
        if self.experiment in STOCHASTIC and self.seed is None:
            raise ConfigError(f"experiment {self.experiment} needs a seed")
        if self.h is not None and not (isinstance(self.h, (int, float)) and self.h > 0):
            raise ConfigError("h must be a positive number")
        needs_partition = {"forward", "dton", "inversion", "blowup"}
        if self.experiment == "stability" and "layers" not in self.params:
            needs_partition = needs_partition | {"stability"}
        if self.experiment in needs_partition:
            if self.partition is None:
                raise ConfigError(f"experiment {self.experiment} needs a partition")
            if self.h is None:
                raise ConfigError(f"experiment {self.experiment} needs a mesh size h")
        if self.experiment in {"forward", "dton", "blowup"} and self.conductivity is None:
            raise ConfigError(f"experiment {self.experiment} needs a conductivity")
        if self.experiment == "blowup" and self.conductivity2 is None:
            raise ConfigError("blowup needs conductivity2")
        if self.experiment == "survey" and "model" not in self.params:
            raise ConfigError("survey needs params.model")
        if self.experiment == "survey" and not self.params.get("arrays"):
            raise ConfigError("survey needs params.arrays")

    def to_dict(self) -> dict:
        return asdict(self)


def build_partition_from(entry: dict, strict: bool):
    entry = dict(entry)
    if "preset" in entry:
        name = entry.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown partition preset {name!r}")
        return PRESETS[name](**entry)
    return build_partition(entry, strict=strict)


def _conductivity(entry: dict | None, partition, seed: int | None) -> PiecewiseLinearConductivity | None:
    if entry is None:
        return None
    if "random" in entry:
        opts = entry["random"] or {}
        return random_admissible(partition, float(opts.get("lambda", 2.0)), int(opts.get("seed", seed or 0)),
                                 resistivity=bool(opts.get("resistivity", False)))
    gamma = PiecewiseLinearConductivity.from_dict(entry)
    if partition is not None:
        gamma.check(partition)
    return gamma


# -- experiments -------------------------------------------------------------


@dataclass
class Result:
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    summary: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)  # callables taking the output dir


def _setup(cfg: RunConfig):
    part = build_partition_from(cfg.partition, cfg.strict)
    mesh = triangulate(part, float(cfg.h))
    gamma = _conductivity(cfg.conductivity, part, cfg.seed)
    return part, mesh, gamma


def _sigma_arclength(mesh) -> np.ndarray:
    nodes = mesh.sigma_nodes
    seg = np.linalg.norm(np.diff(mesh.vertices[nodes], axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1] + (np.linalg.norm(mesh.vertices[nodes[0]] - mesh.vertices[nodes[-1]]) if mesh.sigma_closed else 0.0)
    pos = dict(zip(nodes.tolist(), s / total))
    return np.array([pos[int(v)] for v in mesh.sigma_interior_nodes])


def run_forward(cfg: RunConfig) -> Result:
    part, mesh, gamma = _setup(cfg)
    mode = int(cfg.params.get("mode", 1))
    s = _sigma_arclength(mesh)
    g = np.sin((2 if mesh.sigma_closed else 1) * mode * math.pi * s)
    system = assemble(mesh, gamma)
    u = solve_dirichlet(system, g)
    rows = [[k, x, y, v] for k, ((x, y), v) in enumerate(zip(mesh.vertices, u))]
    flux = system.stiffness[system.sigma_dofs] @ u
    res = Result()
    res.tables["field"] = (["node", "x", "y", "u"], rows)
    res.tables["flux"] = (["node", "x", "y", "g", "flux"],
                          [[int(n), *mesh.vertices[n], gk, fk] for n, gk, fk in zip(system.sigma_dofs, g, flux)])
    res.summary = {"n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles, "h_max": mesh.h_max,
                   "energy": float(u @ (system.stiffness @ u)), "u_min": float(u.min()), "u_max": float(u.max())}
    res.figures.append(lambda out: plotting.field(mesh, u, out / "field.png", title=f"potential, mode {mode}"))
    return res


def _matrix_rows(M: np.ndarray, coords: np.ndarray):
    cols = ["i", "x", "y"] + [f"c{j}" for j in range(M.shape[1])]
    return cols, [[i, *coords[i], *M[i]] for i in range(M.shape[0])]


def run_dton(cfg: RunConfig) -> Result:
    part, mesh, gamma = _setup(cfg)
    dton = assemble_dton(assemble(mesh, gamma), method=cfg.params.get("method", "auto"))
    L = dton.matrix
    res = Result()
    res.tables["dton"] = _matrix_rows(L, dton.coords)
    ev = np.linalg.eigvalsh(0.5 * (L + L.T))
    res.tables["spectrum"] = (["k", "eigenvalue"], [[k, v] for k, v in enumerate(ev)])
    res.summary = {"n_sigma": int(L.shape[0]), "n_nodes": mesh.n_nodes,
                   "asymmetry": float(np.abs(L - L.T).max()), "min_eigenvalue": float(ev[0]),
                   "max_eigenvalue": float(ev[-1])}
    if cfg.params.get("ntod", False):
        R = assemble_ntod(dton)
        res.tables["ntod"] = _matrix_rows(R, dton.coords)
        res.summary["ntod_asymmetry"] = float(np.abs(R - R.T).max())
    res.figures.append(lambda out: plotting.matrix(L, out / "dton.png", title="local DtoN matrix"))
    return res


def run_asymptotics(cfg: RunConfig) -> Result:
    p = dict(cfg.params)
    for key in ("gamma_upper", "gamma_lower", "radii"):
        if key in p:
            p[key] = tuple(float(v) for v in p[key])
    try:
        acfg = AsymptoticsConfig(**p)
    except TypeError as exc:
        raise ConfigError(f"bad asymptotics params: {exc}") from None
    rep = verify_asymptotics(acfg)
    cols, data = rep.table()
    res = Result()
    res.tables["asymptotics"] = (cols, data.tolist())
    res.summary = rep.summary()
    series = {"value": rep.value_residual, "raw": rep.raw_residual, "gradient": rep.grad_residual,
              "mixed": rep.mixed_residual}
    res.figures.append(lambda out: plotting.loglog(rep.distances, series, out / "asymptotics.png",
                                                   xlabel="|x - y|", ylabel="residual"))
    return res


def run_stability(cfg: RunConfig) -> Result:
    p = cfg.params
    lam = float(p.get("lambda", 2.0))
    count = int(p.get("count", 30))
    h = float(cfg.h if cfg.h is not None else p.get("h", 0.05))
    if "layers" in p:
        parts = [(int(K), geometry.layered_box(int(K))) for K in p["layers"]]
    else:
        part = build_partition_from(cfg.partition, cfg.strict)
        parts = [(part.N, part)]
    pair_rows, summary_rows = [], []
    for label, part in parts:
        rep = estimate_lipschitz_constant(part, lam, count, cfg.seed, h=h)
        cols, rows = rep.table()
        pair_rows.extend([[label, *r] for r in rows])
        summary_rows.append([label, rep.N, rep.K, rep.n_nodes, rep.C_emp])
    res = Result()
    res.tables["pairs"] = (["partition", *cols], pair_rows)
    res.tables["constants"] = (["partition", "N", "K", "n_nodes", "C_emp"], summary_rows)
    C = [r[-1] for r in summary_rows]
    res.summary = {"C_emp": C, "monotone": bool(all(b >= a for a, b in zip(C[:-1], C[1:]))),
                   "lambda": lam, "count": count, "h": h}
    Ks = [r[2] for r in summary_rows]
    res.figures.append(lambda out: plotting.semilogy(Ks, {"C_emp": C}, out / "stability.png",
                                                     xlabel="chain length K", ylabel="empirical constant"))
    return res


def run_inversion(cfg: RunConfig) -> Result:
    p = cfg.params
    part = build_partition_from(cfg.partition, cfg.strict)
    mesh = triangulate(part, float(cfg.h))
    lam = float(p.get("lambda", 4.0))
    truth = _conductivity(cfg.conductivity, part, cfg.seed)
    if truth is None:
        truth = random_admissible(part, lam, cfg.seed)
    truth = truth.replace(lambda_bound=lam)
    g0 = perturbed_start(truth, float(p.get("start_scale", 0.05)), cfg.seed)
    data = synthetic_data(part, mesh, truth, finer=bool(p.get("finer", True)))
    metric = fractional_metric(mesh)
    prob = InverseProblem(part, mesh, data, g0, lam, truth=truth, metric=metric)
    gamma, trace = gauss_newton(prob, int(p.get("max_iters", 25)))
    cols, data_rows = trace.table()
    res = Result()
    res.tables["trace"] = (cols, data_rows.tolist())
    last = trace.rows[-1]
    res.summary = {"iterations": trace.n_iter, "coef_error": last["coef_error"],
                   "misfit_fro": last["misfit_fro"], "misfit_star": last["misfit_star"],
                   "finer": bool(p.get("finer", True)), "recovered": gamma.to_dict(), "truth": truth.to_dict()}
    levels = p.get("noise_levels")
    if levels:
        clean = synthetic_data(part, mesh, truth, finer=False)
        nprob = InverseProblem(part, mesh, clean, g0, lam, truth=truth, metric=metric)
        rows, slope = noise_robustness(nprob, [float(v) for v in levels], cfg.seed,
                                       reg_scale=float(p.get("reg_scale", 1e-3)))
        ncols = ["level", "error", "ratio", "iterations", "informative"]
        res.tables["noise"] = (ncols, [[r[c] for c in ncols] for r in rows])
        res.summary["noise_slope"] = slope
    it = data_rows[:, 0]
    series = {"coefficient error": data_rows[:, 5], "misfit (Frobenius)": data_rows[:, 1]}
    res.figures.append(lambda out: plotting.semilogy(it, series, out / "inversion.png",
                                                     xlabel="iteration", ylabel="value"))
    return res


ARRAY_FACTORIES = {
    "schlumberger": (schlumberger, ("center", "half_ab", "half_mn")),
    "dipole-dipole": (dipole_dipole, ("start", "a", "n")),
    "pole-pole": (pole_pole, ("x_a", "x_m", "remote_b", "remote_n")),
    "square": (square, ("start", "a")),
}


def expand_arrays(entries) -> list:
    """List-valued fields expand into every combination, in config order."""
    arrays = []
    for entry in entries:
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind not in ARRAY_FACTORIES:
            raise ConfigError(f"unknown array kind {kind!r}")
        make, names = ARRAY_FACTORIES[kind]
        current = float(entry.pop("current", 1.0))
        missing = [n for n in names if n not in entry]
        if missing or set(entry) - set(names):
            raise ConfigError(f"{kind} array needs exactly {', '.join(names)}")
        values = [entry[n] if isinstance(entry[n], list) else [entry[n]] for n in names]
        for combo in itertools.product(*values):
            arrays.append(make(*combo, current=current))
    return arrays


def run_survey(cfg: RunConfig) -> Result:
    p = cfg.params
    m = p["model"]
    try:
        model = HalfSpaceModel(list(m.get("thicknesses", [])), list(m["resistivities"]),
                               list(m.get("breaks", [])))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad survey model: {exc}") from None
    arrays = expand_arrays(p["arrays"])
    part, mesh, system = build_survey(model, arrays, h_fine=float(p.get("h_fine", 0.1)),
                                      grading=float(p.get("grading", 0.3)),
                                      box_factor=float(p.get("box_factor", 10.0)),
                                      mirror=bool(p.get("mirror", False)))
    cols, data = pseudo_section(system, arrays)
    kinds = sorted({a.kind for a in arrays})
    res = Result()
    res.tables["pseudo_section"] = (cols, data.tolist())
    res.tables["arrays"] = (["kind", "A", "B", "M", "N", "current", "spacing", "midpoint"],
                            [[a.kind, a.a, a.b, a.m, a.n, a.current, a.spacing, a.midpoint] for a in arrays])
    res.summary = {"n_soundings": len(arrays), "kinds": kinds, "n_nodes": mesh.n_nodes,
                   "rho_a_min": float(data[:, 2].min()), "rho_a_max": float(data[:, 2].max())}
    res.figures.append(lambda out: plotting.pseudo_section(data[:, 0], data[:, 1], data[:, 2],
                                                           out / "pseudo_section.png"))
    return res


def run_blowup(cfg: RunConfig) -> Result:
    p = cfg.params
    part = build_partition_from(cfg.partition, cfg.strict)
    g1 = _conductivity(cfg.conductivity, part, cfg.seed)
    g2 = _conductivity(cfg.conductivity2, part, cfg.seed)
    sched = schedule(part.lipschitz_L, part.r0)
    radii = p.get("radii")
    if radii is None:
        radii = [sched.d(1) * f for f in (0.1, 0.03, 0.01, 0.003, 0.001)]
    tab = blow_up_study(part, g1, g2, int(p.get("k", 1)), radii, h=float(cfg.h),
                        grading=float(p.get("grading", 0.2)))
    cols, data = tab.table()
    tail = p.get("tail")
    ev, em = tab.fitted_exponents(None if tail is None else int(tail))
    res = Result()
    res.tables["blowup"] = (cols, data.tolist())
    res.summary = {"value_exponent": ev, "mixed_exponent": em, "d1": sched.d(1), "a": sched.a}
    res.figures.append(lambda out: plotting.loglog(tab.distance, {"|S|": tab.value, "|ddS|": tab.mixed},
                                                   out / "blowup.png", xlabel="distance to interface",
                                                   ylabel="magnitude"))
    return res


RUNNERS = {
    "forward": run_forward, "dton": run_dton, "asymptotics": run_asymptotics, "stability": run_stability,
    "inversion": run_inversion, "survey": run_survey, "blowup": run_blowup,
}


# -- artifacts ---------------------------------------------------------------


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("plcond", "numpy", "scipy", "shapely", "triangle", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(cfg: RunConfig, output: str | Path | None = None, *, figures: bool = True) -> Path:
    out = Path(output or os.environ.get(OUTPUT_ENV) or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = RUNNERS[cfg.experiment](cfg)
    tables = {}
    for name, (cols, rows) in res.tables.items():
        write_table(out / f"{name}.tsv", cols, rows)
        tables[name] = f"{name}.tsv"
    (out / "summary.json").write_text(json.dumps(_jsonable(res.summary), indent=2, sort_keys=True) + "\n")
    figs = [plotting_call(out).name for plotting_call in res.figures] if figures else []
    manifest = {
        "experiment": cfg.experiment,
        "config": _jsonable(cfg.to_dict()),
        "tables": tables,
        "figures": figs,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


# -- comparison --------------------------------------------------------------


def parse_tolerance(text: str | None) -> tuple[float, float]:
    """``"1e-9"`` (absolute) or ``"abs=1e-12,rel=1e-9"``."""
    if not text:
        return 0.0, 0.0
    try:
        if "=" not in text:
            return float(text), 0.0
        vals = {"abs": 0.0, "rel": 0.0}
        for part in text.split(","):
            key, val = part.split("=")
            if key.strip() not in vals:
                raise ValueError(key)
            vals[key.strip()] = float(val)
        return vals["abs"], vals["rel"]
    except ValueError:
        raise ConfigError(f"bad tolerance {text!r}") from None


@dataclass
class TableDiff:
    table: str
    max_abs: float
    max_rel: float
    breach: tuple | None  # (row, column, baseline, candidate)


def _manifest(path: Path) -> dict:
    f = path / "manifest.json"
    if not f.exists():
        raise ConfigError(f"no manifest in {path}")
    return json.loads(f.read_text())


def compare(baseline: str | Path, candidate: str | Path, atol: float = 0.0, rtol: float = 0.0) -> list[TableDiff]:
    a_dir, b_dir = Path(baseline), Path(candidate)
    ma, mb = _manifest(a_dir), _manifest(b_dir)
    if ma["experiment"] != mb["experiment"]:
        raise SchemaMismatchError(f"experiments differ: {ma['experiment']} vs {mb['experiment']}")
    if sorted(ma["tables"]) != sorted(mb["tables"]):
        raise SchemaMismatchError("the runs wrote different tables")
    out = []
    for name in sorted(ma["tables"]):
        ca, ra = read_table(a_dir / ma["tables"][name])
        cb, rb = read_table(b_dir / mb["tables"][name])
        if ca != cb or len(ra) != len(rb):
            raise SchemaMismatchError(f"table {name}: columns or row count differ")
        max_abs = max_rel = 0.0
        breach = None
        for i, (x, y) in enumerate(zip(ra, rb)):
            for j, (u, v) in enumerate(zip(x, y)):
                if isinstance(u, float) and isinstance(v, float):
                    if u == v or (math.isnan(u) and math.isnan(v)):
                        continue
                    d = abs(u - v)
                    rel = d / abs(u) if u != 0 else math.inf
                    max_abs, max_rel = max(max_abs, d), max(max_rel, rel)
                    bad = not d <= atol + rtol * abs(u)
                elif u != v:
                    bad = True
                else:
                    continue
                if bad and breach is None:
                    breach = (i, ca[j], u, v)
        out.append(TableDiff(name, max_abs, max_rel, breach))
    return out


# -- entry point -------------------------------------------------------------


def _fail(category: str, exc: BaseException) -> None:
    msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    print(f"plcond: {category}: {type(exc).__name__}: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plcond", description="Piecewise-linear conductivity experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help=f"output directory (overrides config and ${OUTPUT_ENV})")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    c = sub.add_parser("compare", help="diff the tables of two runs")
    c.add_argument("baseline")
    c.add_argument("candidate")
    c.add_argument("--tol", default=None, help="absolute tolerance or abs=...,rel=...")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            atol, rtol = parse_tolerance(args.tol)
            diffs = compare(args.baseline, args.candidate, atol, rtol)
        else:
            cfg = RunConfig.load(args.config)
            if args.command == "validate":
                if cfg.partition is not None:
                    part = build_partition_from(cfg.partition, cfg.strict)
                    for entry in (cfg.conductivity, cfg.conductivity2):
                        _conductivity(entry, part, cfg.seed)
                print(f"ok: {cfg.experiment}")
                return EXIT_OK
    except (ConfigError, SchemaMismatchError, geometry.PartitionError, EllipticityError, TypeError) as exc:
        _fail("config-error", exc)
        return EXIT_CONFIG
    if args.command == "compare":
        breached = False
        for d in diffs:
            line = f"{d.table}\tmax_abs={d.max_abs:.3e}\tmax_rel={d.max_rel:.3e}"
            if d.breach is not None:
                breached = True
                i, col, u, v = d.breach
                line += f"\tBREACH row={i} column={col} baseline={u} candidate={v}"
            print(line)
        return EXIT_BREACH if breached else EXIT_OK
    try:
        out = run(cfg, args.output, figures=not args.no_figures)
    except (ConfigError, geometry.PartitionError, geometry.MeshError, EllipticityError) as exc:
        _fail("config-error", exc)
        return EXIT_CONFIG
    except Exception as exc:  # any module failure is reported as numeric
        _fail("numeric-error", exc)
        return EXIT_NUMERIC
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
