"""Command-line entry point: ``obshom <subcommand> [--config FILE] [--set key=value ...]``.

Every run writes ``report.json`` (sorted keys) plus tidy CSV tables into the
output directory. Exit codes: 0 success, 1 compute failure, 2 usage or config
error. Errors are printed to stderr as one JSON object carrying the stage name.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import subprocess
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .capacity import energy_identity, farfield_check, shell_flux, solve_potential
from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .corrector import gradient_concentration, norm_scaling, solve_corrector
from .effective import contact_measure, estimate_alpha0, estimate_ell
from .grid import GridSpec, write_field
from .homogenize import HomogenizedProblem, common_cells, convergence_experiment, solve_homogenized
from .media import LatticeBox, build_holes, derive_seed, gamma_window_for, sample_gamma_field
from .obstacle import solve_auxiliary, solve_eps_problem
from .shapes import ShapeSpec

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2

CSV_COLUMNS = {
    "ell": ("alpha", "t", "sample", "ratio"),
    "corrector": ("eps", "norm", "slope"),
    "converge": ("eps", "seed", "l2_error", "energy_gap"),
    "alpha0": ("alpha", "ell_hat", "ci", "verdict"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def payload_bytes(report: dict) -> bytes:
    """Canonical bytes of the report without its timing block."""
    body = {k: v for k, v in report.items() if k != "timings"}
    return json.dumps(to_jsonable(body), sort_keys=True, separators=(",", ":")).encode()


def _git_stamp() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


class _Stages:
    """Runs named stages, records wall time and wraps failures with the stage name."""

    def __init__(self):
        self.timings = {}

    def __call__(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except (ValueError, RuntimeError, ArithmeticError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _eps_cells(cfg: RunConfig, eps_list) -> int:
    return cfg.grid["cells"] if cfg.grid["cells"] is not None else common_cells(eps_list)


def _alpha0_for(cfg: RunConfig, stage: _Stages, results: dict) -> float:
    exp = cfg.experiment
    if exp["alpha0"] is not None:
        return float(exp["alpha0"])
    est = stage("alpha0", estimate_alpha0, cfg.medium, exp["t"], exp["samples"], exp["m"], cfg.seed)
    results["alpha0_estimate"] = est.to_dict()
    return est.alpha0


def _run_capacity(cfg, stage, results, fields):
    exp = cfg.experiment
    shape = ShapeSpec.from_dict(exp["shape"])
    n = exp["n"]
    box = None if n == 2 else exp["box_radius"]
    sol = stage("potential", solve_potential, shape, n, box, exp["h"], exp["boundary"])
    rad = shape.bounding_radius
    shell = 0.5 * (rad + (1.0 if n == 2 else sol.box_radius))
    results.update(
        capacity=sol.capacity,
        energy_identity=energy_identity(sol),
        shell_flux=stage("flux", shell_flux, sol.phi, shell),
        shell_radius=shell,
        residual=sol.residual,
        box_radius=sol.box_radius,
        boundary=sol.boundary,
    )
    if n == 3 and exp["profile_radii"] is not None:
        prof = stage("farfield", farfield_check, sol.phi, sol.capacity, rad, exp["profile_radii"])
        results["farfield"] = prof.to_dict()
    fields["phi"] = sol.phi


def _ell_one(args):
    alpha, medium, t, samples, m, seed = args
    return estimate_ell(alpha, medium, t, samples, m, seed)


def _run_ell(cfg, stage, results, fields, workers=1):
    exp = cfg.experiment
    alphas = exp["alpha"] if isinstance(exp["alpha"], list) else [exp["alpha"]]
    jobs = [(float(a), cfg.medium, exp["t"], exp["samples"], exp["m"], cfg.seed) for a in alphas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ests = stage("ell", lambda: list(pool.map(_ell_one, jobs)))
    else:
        ests = [stage("ell", _ell_one, j) for j in jobs]
    results["estimates"] = [e.to_dict() for e in ests]
    results["rows"] = [r for e in ests for r in e.rows()]


def _run_alpha0(cfg, stage, results, fields):
    exp = cfg.experiment
    est = stage("alpha0", estimate_alpha0, cfg.medium, exp["t"], exp["samples"], exp["m"], cfg.seed,
                exp["theta"], exp["rtol"])
    results.update(est.to_dict())


def _run_corrector(cfg, stage, results, fields):
    exp = cfg.experiment
    alpha0 = _alpha0_for(cfg, stage, results)
    cells = _eps_cells(cfg, exp["eps_list"])
    spec = GridSpec.unit_cube(cfg.medium.dim, cells)
    runs, gaps = [], []
    for eps in exp["eps_list"]:
        g = sample_gamma_field(cfg.medium, derive_seed(cfg.seed, round(1 / eps)), gamma_window_for(spec, eps))
        holes = stage("holes", build_holes, g, eps, spec, cfg.grid["mode"])
        run = stage("corrector", solve_corrector, eps, alpha0, holes, spec, (float(exp["p"]), 2.0))
        conc, target = gradient_concentration(run, _bump)
        runs.append(run)
        gaps.append({"eps": eps, "grad_phi": conc, "alpha0_phi": target, "gap": abs(conc - target)})
        fields[f"w_eps{round(1 / eps)}"] = run.w
    results["alpha0_used"] = alpha0
    results["cells"] = cells
    results["runs"] = [r.summary() for r in runs]
    results["concentration"] = gaps
    fit = norm_scaling(runs, float(exp["p"])) if len(runs) >= 3 else None
    results["scaling"] = None if fit is None else fit.to_dict()
    slope = None if fit is None else fit.slope
    results["rows"] = [{"eps": r.eps, "norm": r.lp[float(exp["p"])], "slope": slope} for r in runs]


def _bump(*xs):
    out = 1.0
    for x in xs:
        out = out * np.sin(np.pi * x) ** 2
    return out


def _run_solve_eps(cfg, stage, results, fields):
    exp = cfg.experiment
    eps = exp["eps"]
    cells = _eps_cells(cfg, [eps])
    spec = GridSpec.unit_cube(cfg.medium.dim, cells)
    g = sample_gamma_field(cfg.medium, cfg.seed, gamma_window_for(spec, eps))
    holes = stage("holes", build_holes, g, eps, spec, cfg.grid["mode"])
    sol = stage("obstacle", solve_eps_problem, exp["f"], holes, spec, exp["solver"])
    results.update(sol.summary(), cells=cells, holes=len(holes.holes), point_holes=len(holes.coupling))
    fields["u_eps"] = sol.field


def _run_solve_aux(cfg, stage, results, fields):
    exp = cfg.experiment
    window = LatticeBox.cube(cfg.medium.dim, int(exp["t"]))
    g = sample_gamma_field(cfg.medium, cfg.seed, window)
    sol = stage("auxiliary", solve_auxiliary, exp["alpha"], window, g, exp["m"])
    results.update(sol.summary(), contact_ratio=contact_measure(sol) / int(exp["t"]) ** window.dim)
    fields["vbar"] = sol.field


def _run_solve_hom(cfg, stage, results, fields):
    exp = cfg.experiment
    cells = cfg.grid["cells"] or 64
    spec = GridSpec.unit_cube(exp["dim"], cells)
    u = stage("homogenized", solve_homogenized, HomogenizedProblem(spec, exp["f"], exp["alpha0"]), exp["method"])
    results.update(cells=cells, min=float(u.values.min()), max=float(u.values.max()))
    fields["ubar"] = u


def _run_converge(cfg, stage, results, fields):
    exp = cfg.experiment
    alpha0 = _alpha0_for(cfg, stage, results)
    seeds = exp["seeds"] if isinstance(exp["seeds"], list) else [derive_seed(cfg.seed, s) for s in range(exp["seeds"])]
    rep = stage("converge", convergence_experiment, cfg.medium, exp["f"], exp["eps_list"], alpha0, seeds,
                cfg.grid["cells"], cfg.grid["mode"])
    results.update(rep.to_dict())


RUNNERS = {
    "capacity": _run_capacity,
    "ell": _run_ell,
    "alpha0": _run_alpha0,
    "corrector": _run_corrector,
    "solve-eps": _run_solve_eps,
    "solve-aux": _run_solve_aux,
    "solve-hom": _run_solve_hom,
    "converge": _run_converge,
}


def dispatch(cfg: RunConfig, workers: int = 1, dump_fields: bool = False, write: bool = True) -> dict:
    """Run ``cfg.command`` and return the report; writes files into ``cfg.out_dir`` when ``write``."""
    stage = _Stages()
    results, fields = {}, {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if cfg.command == "ell":
            _run_ell(cfg, stage, results, fields, workers)
        else:
            RUNNERS[cfg.command](cfg, stage, results, fields)
    report = {
        "command": cfg.command,
        "version": __version__,
        "git": _git_stamp(),
        "config": cfg.to_dict(),
        "defaults_filled": sorted(cfg.defaults_filled),
        "results": to_jsonable(results),
        "warnings": sorted({str(w.message) for w in caught}),
        "timings": {k: round(v, 6) for k, v in sorted(stage.timings.items())},
    }
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(to_jsonable(report), sort_keys=True, indent=2) + "\n")
        emit_plot_data(report, out)
        if dump_fields:
            for name, fld in fields.items():
                write_field(out / f"{name}.txt", fld)
    return report


def emit_plot_data(report: dict, out_dir) -> list[Path]:
    """Write tidy CSVs (one row per observation) for sweep-type reports."""
    cmd = report["command"]
    res = report.get("results", {})
    out_dir = Path(out_dir)
    written = []
    tables = []
    if cmd in ("ell", "corrector"):
        tables.append((cmd, CSV_COLUMNS[cmd], res.get("rows", [])))
    if cmd == "converge":
        tables.append(("converge", CSV_COLUMNS["converge"], res.get("rows", [])))
    if cmd == "alpha0":
        tables.append(("alpha0_trace", CSV_COLUMNS["alpha0"], res.get("trace", [])))
    if "alpha0_estimate" in res:
        tables.append(("alpha0_trace", CSV_COLUMNS["alpha0"], res["alpha0_estimate"].get("trace", [])))
    for name, cols, rows in tables:
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in cols})
        written.append(path)
    return written


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "--set expects key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out-dir", help="output directory (overrides config and $OBSHOM_OUT_DIR)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted override, value parsed as YAML, e.g. experiment.alpha=[1,2]")
    common.add_argument("--workers", type=int, default=1, help="worker processes for independent jobs")
    common.add_argument("--dump-fields", action="store_true", help="write grid fields as plain text")
    common.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser = argparse.ArgumentParser(prog="obshom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"obshom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _error(stage: str, message: str, field: str | None = None) -> None:
    body = {"error": message, "stage": stage}
    if field is not None:
        body["field"] = field
    print(json.dumps(body, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        cfg = parse_config(args.command, args.config, overrides)
    except ConfigError as exc:
        _error("config", str(exc), exc.path)
        return EXIT_USAGE
    if args.print_config:
        print(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))
        return EXIT_OK
    try:
        report = dispatch(cfg, workers=max(1, args.workers), dump_fields=args.dump_fields)
    except StageError as exc:
        _error(exc.stage, str(exc.cause))
        return EXIT_COMPUTE
    print(json.dumps({"out_dir": cfg.out_dir, "results": sorted(report["results"])}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
