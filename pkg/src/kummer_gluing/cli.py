"""Command-line harness: eh-check, spectrum, sweep, solve, accept.

Configuration comes from the bundled ``defaults.toml``, then an optional
``--config`` file, then ``--set section.key=value`` overrides and the
dedicated flags.  Every CSV starts with a ``#`` line naming the quantities and
their units; floats are written with a fixed format so that identical
configurations produce identical bytes.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import assembly, checks, ends, solver
from . import eguchi_hanson as eh
from .cross_section import CrossSectionSpec, laplacian_galerkin_eigenvalues, spectrum
from .errors import ConfigurationError, KummerError
from .fitting import loglog_slope

log = logging.getLogger("kummer_gluing")

OUT_ENV = "KUMMER_GLUING_OUT"
SWEEP_WINDOWS = {"sup_eta": (-2.3, -1.7), "eta_l2k": (-2.3, -1.7),
                 "lambda_minus_1": (-4.4, -3.6), "defect_norm": (-1.2, -0.8)}


def load_defaults():
    with resources.files(__package__).joinpath("defaults.toml").open("rb") as fh:
        return tomllib.load(fh)


def _merge(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _apply_override(cfg, item):
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
    path, text = item.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"{path!r} does not name a config table")
    node[keys[-1]] = _parse_value(text.strip())


@dataclass
class ExperimentConfig:
    """Resolved settings for one subcommand."""

    command: str
    section: dict
    seed: int
    output_dir: Path

    def __post_init__(self):
        for key in ("R", "T"):
            if key in self.section:
                vals = self.section[key]
                if isinstance(vals, (list, tuple)):
                    if not vals:
                        raise ConfigurationError(f"{self.command}: {key} list is empty")
                    if any(not (isinstance(v, (int, float)) and v > 0) for v in vals):
                        raise ConfigurationError(f"{self.command}: {key} values must be positive numbers")
        if not isinstance(self.seed, int):
            raise ConfigurationError("seed must be an integer")

    def path(self, name):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name


def resolve_config(command, config_file=None, overrides=(), flags=None) -> ExperimentConfig:
    cfg = load_defaults()
    if config_file:
        with open(config_file, "rb") as fh:
            _merge(cfg, tomllib.load(fh))
    for item in overrides:
        _apply_override(cfg, item)
    section = copy.deepcopy(cfg.get(command.replace("-", "_"), {}))
    flags = flags or {}
    if flags.get("R") is not None:
        scalar = not isinstance(section.get("R"), list) and len(flags["R"]) == 1
        section["R"] = flags["R"][0] if scalar else flags["R"]
    if flags.get("T") is not None:
        section["T"] = flags["T"]
    out = flags.get("out") or os.environ.get(OUT_ENV) or cfg.get("output_dir", "kummer-out")
    seed = flags["seed"] if flags.get("seed") is not None else cfg.get("seed", 0)
    return ExperimentConfig(command, section, seed, Path(out))


# output helpers --------------------------------------------------------------

def _num(v):
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12e}"


def write_csv(path, header, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_num(row.get(c)) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


# eh-check --------------------------------------------------------------------

def run_eh_check(config: ExperimentConfig) -> int:
    s = config.section
    profile = eh.RadialProfile("eguchi-hanson", float(s.get("fault_scale", 1.0)))
    rho = np.geomspace(s["rho_min"], s["rho_max"], int(s["n_rho"]))
    res = eh.ma_identity_residual(rho, profile)
    tol = s["identity_tol"]
    id_rows = [{"rho": r, "residual": e, "ok": abs(e) <= tol} for r, e in zip(rho, res)]
    write_csv(config.path("eh_identity.csv"),
              "Monge-Ampere identity residual (F')^2 + rho F' F'' - 1 (dimensionless) "
              "against rho = |z|^2 (flat units)",
              ["rho", "residual", "ok"], id_rows)

    coef = eh.fit_tail(profile)
    target = np.zeros_like(coef)
    target[0] = -0.5
    ttol = s["tail_tol"]
    tail_rows = [{"power": j + 1, "fitted": c, "expected": e,
                  "ok": (abs(c - e) <= ttol) if j < 2 else True}
                 for j, (c, e) in enumerate(zip(coef, target))]
    write_csv(config.path("eh_tail.csv"),
              "Least-squares tail coefficients a_j of G = F - rho on [10, 100] (dimensionless); "
              "only a_1 and a_2 are checked",
              ["power", "fitted", "expected", "ok"], tail_rows)

    ann_rows = []
    for R in s["R"]:
        r = np.geomspace(R / 4.0, R, 2001)
        row = {"R": R}
        try:
            eta = eh.eta_radial(r, R, profile)
            p1, p2 = eh.cut_profile_derivs(r, R, profile)
            row.update(sup_eta=np.abs(eta).max(), R2_sup_eta=R**2 * np.abs(eta).max(),
                       min_eigenvalue=min(np.min(v) for v in eh.radial_eigs(p1, p2, r)), ok=True)
        except KummerError as exc:
            row.update(ok=False, error=type(exc).__name__)
        ann_rows.append(row)
    write_csv(config.path("eh_annulus.csv"),
              "Cut-off Eguchi-Hanson potential on the annulus R/4 <= rho <= R: sup|eta| "
              "(relative volume error), R^2 sup|eta|, smallest eigenvalue of the grafted form",
              ["R", "sup_eta", "R2_sup_eta", "min_eigenvalue", "ok", "error"], ann_rows)

    failing = [f"identity rho={r['rho']:.6g} residual={r['residual']:.3e}" for r in id_rows if not r["ok"]]
    failing += [f"tail a{r['power']}={r['fitted']:.12g} expected {r['expected']:g}" for r in tail_rows if not r["ok"]]
    failing += [f"annulus R={r['R']} {r.get('error', '')}" for r in ann_rows if not r["ok"]]
    if failing:
        print(f"eh-check: {len(failing)} failing rows", file=sys.stderr)
        for line in failing[:20]:
            print("  " + line, file=sys.stderr)
        if len(failing) > 20:
            print(f"  ... {len(failing) - 20} more", file=sys.stderr)
        return 1
    print("eh-check: all tolerances met")
    return 0


# spectrum --------------------------------------------------------------------

def run_spectrum(config: ExperimentConfig) -> int:
    """Eigenvalues of the chosen cross-section, with an independent Galerkin check on spheres."""
    s = config.section
    spec = CrossSectionSpec(s["kind"], float(s["radius"]), int(s["max_degree"]))
    sys_ = spectrum(spec)
    k = sys_.degree.astype(float)
    exact = (k**2 if spec.kind == "circle" else k * (k + 2)) / spec.radius**2
    order = np.argsort(sys_.eigenvalues, kind="stable")
    if spec.kind == "circle":
        check = exact[order]
    else:
        check = laplacian_galerkin_eigenvalues(spec.max_degree, spec.radius,
                                               even_only=spec.kind.endswith("involution"))
        if check.size != order.size:
            print(f"spectrum: Galerkin count {check.size} != {order.size} modes", file=sys.stderr)
            return 1
    rows = [{"index": int(i), "degree": int(sys_.degree[i]), "charge": int(sys_.charge[i]),
             "eigenvalue": sys_.eigenvalues[i], "exact": exact[i], "galerkin": g,
             "abs_error": max(abs(sys_.eigenvalues[i] - exact[i]), abs(g - exact[i]))}
            for i, g in zip(order, check)]
    write_csv(config.path("spectrum.csv"),
              f"Laplace eigenvalues of the {spec.kind} cross-section of radius {spec.radius:g} "
              "(units of radius^-2): mode label, closed form and Galerkin value",
              ["index", "degree", "charge", "eigenvalue", "exact", "galerkin", "abs_error"], rows)
    gram = float(np.abs(sys_.gram() - np.eye(sys_.n_modes)).max())
    worst = max(r["abs_error"] for r in rows)
    print(f"spectrum: {len(rows)} modes, max eigenvalue error {worst:.3e}, orthonormality error {gram:.3e}")
    return 0 if worst <= 1e-8 * max(1.0, exact.max()) and gram <= 1e-10 else 1


# sweep -----------------------------------------------------------------------

def _r_point(R, n_radial):
    return checks.r_sweep((R,), n_radial)[0]


def _t_point(T, dx):
    row = {"T": float(T)}
    try:
        g = ends.y_glued(T, dx, ends.default_system())
        d = ends.defect_norm(g)
        row.update(defect_norm=d, P_norm=ends.inverse_norm(g) if d < 1 else float("nan"), error="")
    except KummerError as exc:
        row.update(defect_norm=float("nan"), P_norm=float("nan"), error=type(exc).__name__)
    return row


def _map(fn, items, workers, *args):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items, *[[a] * len(items) for a in args]))
    return [fn(x, *args) for x in items]


def _slope_summary(rows, key, xkey):
    good = [r for r in rows if not r["error"] and np.isfinite(r[key]) and r[key] != 0]
    lo, hi = SWEEP_WINDOWS.get(key, (-np.inf, np.inf))
    if len(good) < 2:
        return {"n": len(good), "slope": None, "within": False}
    fit = loglog_slope([r[xkey] for r in good], [r[key] for r in good])
    return {"n": len(good), "slope": fit.slope, "ci_low": fit.ci_low, "ci_high": fit.ci_high,
            "stderr": fit.stderr, "window": [lo, hi], "within": fit.within(lo, hi), "against": xkey}


def run_sweep(config: ExperimentConfig) -> int:
    s = config.section
    workers = int(s.get("workers", 1))
    r_rows = _map(_r_point, list(s["R"]), workers, int(s["n_radial"]))
    t_rows = _map(_t_point, list(s["T"]), workers, float(s["dx"]))
    fits = {k: _slope_summary(r_rows, k, "R") for k in ("sup_eta", "eta_l2k", "lambda_minus_1")}
    fits.update({k: _slope_summary(t_rows, k, "T") for k in ("defect_norm", "P_norm")})

    rows = [dict(kind="R", **r) for r in r_rows] + [dict(kind="T", **r) for r in t_rows]
    for label, field_ in (("slope", "slope"), ("slope_ci_low", "ci_low"), ("slope_ci_high", "ci_high")):
        rows.append(dict(kind=label, error="", **{k: f.get(field_) for k, f in fits.items()}))
    write_csv(config.path("sweep.csv"),
              "Gluing scaling sweep. R rows: gluing scale R, sup_eta = sup|eta| and eta_l2k = cylindrical "
              "L^2_3 norm of the relative volume error, lambda_minus_1 = volume normalisation offset "
              "(all dimensionless). T rows: neck half-length T (cylinder units), defect_norm = "
              "||box P0 - 1|| and P_norm = ||P|| (operator norms). slope rows: fitted log-log slopes "
              "against R or T with 95% confidence bounds",
              ["kind", "R", "T", "sup_eta", "eta_l2k", "lambda_minus_1", "defect_norm", "P_norm", "error"], rows)
    failures = [{"kind": "R", "value": r["R"], "error": r["error"]} for r in r_rows if r["error"]]
    failures += [{"kind": "T", "value": r["T"], "error": r["error"]} for r in t_rows if r["error"]]
    write_json(config.path("sweep_summary.json"),
               {"schema": "kummer-gluing/sweep-summary/1", "seed": config.seed,
                "R": list(s["R"]), "T": list(s["T"]), "fits": fits, "failures": failures})
    for k, f in fits.items():
        if f["slope"] is None:
            print(f"{k}: too few points for a fit")
        else:
            print(f"{k}: slope {f['slope']:.4f} [{f['ci_low']:.4f}, {f['ci_high']:.4f}]")
    return 0 if not failures and all(f["slope"] is not None for f in fits.values()) else 1


# solve -----------------------------------------------------------------------

def run_solve(config: ExperimentConfig) -> int:
    s = dict(config.section)
    R = s.pop("R")
    if isinstance(R, list):
        if len(R) != 1:
            raise ConfigurationError("solve takes a single R")
        R = R[0]
    fields = solver.SolveConfig.__dataclass_fields__
    unknown = set(s) - set(fields)
    if unknown:
        raise ConfigurationError(f"unknown solve settings: {sorted(unknown)}")
    cfg = solver.SolveConfig(R=float(R), **s)
    report, error = None, None
    try:
        geom = assembly.assemble(R=cfg.R, n_radial=cfg.n_radial)
        _, report = solver.picard_solve(geom, cfg)
    except KummerError as exc:
        error = exc
        report = getattr(exc, "report", None)
    json_path, csv_path = config.path("solve_report.json"), config.path("solve_iterations.csv")
    if report is None:
        write_json(json_path, {"schema": "kummer-gluing/solve-report/1", "R": cfg.R, "converged": False,
                               "error": type(error).__name__, "message": str(error), "history": []})
        write_csv(csv_path, "no iterations: the run failed before the first step",
                  ["iter", "residual", "increment", "tau", "positivity_margin"], [])
    else:
        d = json.loads(report.to_json())
        if error is not None:
            d["error"] = type(error).__name__
        write_json(json_path, d)
        report.write_csv(csv_path)
    if error is not None:
        print(f"solve: {type(error).__name__}: {error}", file=sys.stderr)
        return 2
    ok = (report.converged and abs(report.tau) <= cfg.tau_tol * report.rhs_norm
          and report.positivity_margin > 0)
    print(f"solve: R={cfg.R:g} converged={report.converged} iterations={len(report.history)} "
          f"tau/|rhs|={report.tau / report.rhs_norm:.3e} margin={report.positivity_margin:.4f}")
    return 0 if ok else 1


# accept ----------------------------------------------------------------------

def run_accept(config: ExperimentConfig) -> int:
    results = checks.run_all(seed=config.seed, R=config.section.get("R", 64))
    for r in results:
        print(r.line())
    write_csv(config.path("accept.csv"),
              "Acceptance checks: pass flag and measured values (JSON, dimensionless unless named)",
              ["number", "name", "passed", "measured"],
              [{"number": r.number, "name": r.name, "passed": r.passed,
                "measured": json.dumps(_jsonable(r.measured), sort_keys=True)} for r in results])
    return 0 if all(r.passed and r.within_time for r in results) else 1


COMMANDS = {"eh-check": run_eh_check, "spectrum": run_spectrum, "sweep": run_sweep,
            "solve": run_solve, "accept": run_accept}


def build_parser():
    ap = argparse.ArgumentParser(prog="kummer-gluing", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file merged over the defaults")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--out", help=f"output directory (beats ${OUT_ENV})")
        p.add_argument("--seed", type=int)
        if name in ("eh-check", "sweep", "solve", "accept"):
            p.add_argument("--R", type=float, nargs="*", help="gluing scale(s)")
        if name == "sweep":
            p.add_argument("--T", type=float, nargs="*", help="neck half-lengths")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    flags = {"out": args.out, "seed": args.seed, "R": getattr(args, "R", None), "T": getattr(args, "T", None)}
    try:
        config = resolve_config(args.command, args.config, args.set, flags)
        return COMMANDS[args.command](config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
