"""Command-line interface.

Subcommands: simulate, invert, fit, peaks, table, curve.  Settings come from
an optional INI file (``--config``) and are overridden by flags.  Every run
writes ``manifest.json`` next to its outputs.  Exit status: 0 on success, 2 on
usage or configuration errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .drt import DrtModel, DrtProcess, Kind, canonical_set_name, matched_beta, simulation_set
from .experiments import (
    CURVE_HEADER,
    SELECTION_HEADER,
    ExperimentConfig,
    mean_error_curve,
    monte_carlo,
    selection_rows,
    tabulate,
    write_csv,
)
from .forward import (
    FrequencyGrid,
    ImpedanceSpectrum,
    Scheme,
    add_noise,
    assemble_operator,
    synthesize_spectrum,
)
from .nlsfit import NOISE_LADDER, TABLE_HEADER, fit, fit_table, init_from_peaks
from .param_choice import LambdaGrid, lcurve_corner, ncp_select, oracle_select, sweep
from .peaks import find_z2_peaks, nyquist_curve
from .regsolve import RegularizedProblem, build_regularizer, solve

log = logging.getLogger("relaxo")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "RELAXO_SEED"

ALL_SETS = ("A-RQ", "A-LN", "B-RQ", "B-LN", "C-RQ", "C-LN")
HIGH_NOISE = (0.001, 0.01, 0.05)
LOW_NOISE = (0.001, 0.003, 0.01)

PRESETS = {
    f"{crit}-{res.lower()}-{band}": dict(
        simulations=ALL_SETS,
        regularizers=("I", "L1", "L2"),
        criteria=(crit,),
        noise_levels=noise,
        resolution=res,
        method="nnls-as",
    )
    for crit in ("lc", "ncp")
    for res in ("A3", "A4")
    for band, noise in (("highnoise", HIGH_NOISE), ("lownoise", LOW_NOISE))
}
PRESETS.update(
    {
        f"ls-{res.lower()}-highnoise": dict(
            simulations=ALL_SETS,
            regularizers=("I", "L1", "L2"),
            criteria=("lc",),
            noise_levels=HIGH_NOISE,
            resolution=res,
            method="ls",
        )
        for res in ("A3", "A4")
    }
)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    output_dir: str
    version: str = __version__
    config_text: str | None = None
    resolved: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    elapsed_seconds: float = 0.0

    def add(self, path: Path):
        self.artifacts[path.name] = "complete"

    def write(self, out_dir: Path):
        with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=str)
            f.write("\n")


# -- configuration ---------------------------------------------------------


def _read_config(path):
    if path is None:
        return None, None
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    text = raw.decode("utf-8")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    return parser, text


def _split(value):
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _floats(value):
    try:
        return tuple(float(v) for v in _split(value))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {value!r}") from exc


def _experiment_settings(args, parser) -> dict:
    """Merge preset, config file section and flags, in increasing priority."""
    settings = {}
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        settings.update(PRESETS[preset])
    if parser is not None and parser.has_section("experiment"):
        sec = parser["experiment"]
        conv = {
            "simulations": _split,
            "regularizers": _split,
            "criteria": _split,
            "noise_levels": _floats,
            "resolution": str,
            "method": str,
            "scheme": str,
            "n_realizations": int,
            "base_seed": int,
            "n_lambda": int,
            "ncp_norm": str,
        }
        for key, value in sec.items():
            if key in conv:
                settings[key] = conv[key](value)
            elif key in ("lambda_min", "lambda_max"):
                settings[key] = float(value)
            else:
                raise UsageError(f"unknown key {key!r} in [experiment]")
    flag_map = {
        "sets": "simulations",
        "L": "regularizers",
        "criterion": "criteria",
        "noise": "noise_levels",
        "matrix": "resolution",
        "method": "method",
        "scheme": "scheme",
        "realizations": "n_realizations",
        "seed": "base_seed",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key in ("simulations", "regularizers", "criteria"):
            value = _split(value)
        elif key == "noise_levels":
            value = _floats(value)
        settings[key] = value
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            settings["base_seed"] = int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    lo = settings.pop("lambda_min", 1e-8)
    hi = settings.pop("lambda_max", 1e2)
    settings["lambda_range"] = (lo, hi)
    return settings


def _experiment_config(settings) -> ExperimentConfig:
    try:
        return ExperimentConfig(**settings)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid experiment settings: {exc}") from exc


def _model_from_config(parser) -> DrtModel | None:
    if parser is None:
        return None
    sections = sorted(s for s in parser.sections() if s.startswith("process"))
    if not sections:
        return None
    procs = []
    for name in sections:
        sec = parser[name]
        try:
            procs.append(
                DrtProcess(
                    Kind(sec.get("kind", "").upper()),
                    float(sec["t0"]),
                    float(sec["shape"]),
                    float(sec.get("scale", "1")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad process section [{name}]: {exc}") from exc
    return DrtModel(procs)


# -- csv helpers -----------------------------------------------------------


def write_spectrum(path, spectrum: ImpedanceSpectrum):
    write_csv(path, ("omega", "z1", "z2"), zip(spectrum.omegas, spectrum.z1, spectrum.z2))


def read_spectrum(path) -> ImpedanceSpectrum:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        om = np.array([float(r["omega"]) for r in rows])
        z1 = np.array([float(r["z1"]) for r in rows])
        z2 = np.array([float(r["z2"]) for r in rows])
        return ImpedanceSpectrum(FrequencyGrid(om), z1, z2)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read spectrum {path}: {exc}") from exc


def _slug(x: float) -> str:
    return format(x, "g").replace(".", "p").replace("-", "m")


# -- commands --------------------------------------------------------------


def cmd_simulate(args, parser, manifest, out: Path):
    model = _model_from_config(parser)
    name = "model"
    if args.set:
        try:
            name = canonical_set_name(args.set)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
        model = simulation_set(name)
    if model is None:
        raise UsageError("simulate needs --set or [process.*] sections in --config")
    seed = args.seed
    if os.environ.get(SEED_ENV) is not None:
        seed = int(os.environ[SEED_ENV])
    noises = _floats(args.noise) if args.noise is not None else (0.0,)
    clean = synthesize_spectrum(model)
    manifest.resolved.update(set=name, noise=list(noises), seed=seed)
    for eta in noises:
        spec = add_noise(clean, eta, seed)
        path = out / f"spectrum_{name}_eta{_slug(eta)}_seed{seed}.csv"
        write_spectrum(path, spec)
        manifest.add(path)
        print(path)


def _sweep_truth(args, problem_op):
    if not args.truth_set:
        return None
    try:
        return problem_op.truth(simulation_set(args.truth_set))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc


def cmd_invert(args, parser, manifest, out: Path):
    spec = read_spectrum(args.spectrum)
    op = assemble_operator(spec.freq_grid, resolution=args.matrix, scheme=Scheme(args.scheme))
    L = build_regularizer(args.L, op.n_nodes)
    problem = RegularizedProblem(op, spec.data, L)
    truth = _sweep_truth(args, op)
    manifest.resolved.update(
        spectrum=str(args.spectrum), matrix=args.matrix, L=args.L, method=args.method,
        criterion=args.criterion, scheme=args.scheme, fixed_lambda=args.fixed_lambda,
    )
    if args.fixed_lambda is not None:
        sol = solve(problem.with_lambda(args.fixed_lambda), args.method)
        chosen = sol
        lam = args.fixed_lambda
    else:
        grid = LambdaGrid.logspace(args.lambda_min, args.lambda_max, args.n_lambda)
        result = sweep(problem, grid, args.method, truth=truth)
        dev = result.ncp_deviations()
        errs = result.errors if result.errors is not None else np.full(len(grid), math.nan)
        path = out / "sweep.csv"
        write_csv(
            path,
            ("lambda", "residual_norm", "seminorm", "ncp_deviation", "s_space_error"),
            zip(result.lambdas, result.residual_norms, result.seminorms, dev, errs),
        )
        manifest.add(path)
        corner = lcurve_corner(result)
        i_ncp = ncp_select(result)
        i_opt = oracle_select(result) if truth is not None else None
        lams = result.lambdas
        path = out / "selection.csv"
        write_csv(
            path,
            ("lambda_lc", "lambda_ncp", "lambda_opt", "lc_no_corner"),
            [[lams[corner.index], lams[i_ncp],
              math.nan if i_opt is None else lams[i_opt], corner.no_corner]],
        )
        manifest.add(path)
        idx = corner.index if args.criterion == "lc" else i_ncp
        chosen, lam = result.solutions[idx], float(lams[idx])
        log.info("selected lambda %.6g by %s", lam, args.criterion)
        if chosen is None:
            raise FloatingPointError("solver failed at the selected lambda")
    path = out / "solution.csv"
    write_csv(path, ("s", "x"), zip(op.time_grid.s_values, chosen.x))
    manifest.add(path)
    manifest.resolved["selected_lambda"] = lam
    print(f"lambda,{format(lam, '.17g')}")


def cmd_peaks(args, parser, manifest, out: Path):
    spec = read_spectrum(args.spectrum)
    peaks = find_z2_peaks(spec, refine=args.refine)
    path = out / "peaks.csv"
    write_csv(path, ("omega", "t_star"), zip(peaks.omegas, peaks.t_star))
    manifest.add(path)
    path = out / "nyquist.csv"
    write_csv(path, ("z1", "z2"), nyquist_curve(spec))
    manifest.add(path)
    manifest.resolved.update(spectrum=str(args.spectrum), refine=args.refine,
                             boundary=list(peaks.boundary))
    for w, t in zip(peaks.omegas, peaks.t_star):
        print(f"{format(w, '.17g')},{format(t, '.17g')}")


def cmd_fit(args, parser, manifest, out: Path):
    family = Kind(args.family.upper())
    if args.table:
        data_kind = Kind((args.data or family.value).upper())
        t0 = args.t0
        sigma = args.sigma
        beta = args.beta if args.beta is not None else round(matched_beta(sigma), 2)
        rq = DrtProcess.rq(t0, beta)
        ln = DrtProcess(Kind.LN, t0, sigma)
        data_model = DrtModel([rq if data_kind is Kind.RQ else ln])
        truth_proc = rq if family is Kind.RQ else ln
        truth = [(truth_proc.t0, truth_proc.shape, truth_proc.scale)]
        seed = int(os.environ.get(SEED_ENV, args.seed))
        rows = fit_table(data_model, family, NOISE_LADDER, args.realizations, seed, truth=truth)
        path = out / f"fit_{data_kind.value}_data_{family.value}_fit.csv"
        write_csv(path, TABLE_HEADER, ([r[k] for k in TABLE_HEADER] for r in rows))
        manifest.add(path)
        manifest.resolved.update(family=family.value, data=data_kind.value, t0=t0,
                                 sigma=sigma, beta=beta, realizations=args.realizations,
                                 seed=seed)
        print(path)
        return
    if not args.spectrum:
        raise UsageError("fit needs a spectrum file or --table")
    spec = read_spectrum(args.spectrum)
    try:
        cfg = init_from_peaks(spec, family)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = fit(spec, cfg)
    path = out / "fit.csv"
    write_csv(
        path,
        ("process", "t0", "shape", "scale", "residual_norm", "converged"),
        ([k + 1, *p, res.residual_norm, res.converged] for k, p in enumerate(res.params)),
    )
    manifest.add(path)
    manifest.resolved.update(spectrum=str(args.spectrum), family=family.value,
                             iterations=res.iterations)
    if not res.converged:
        log.warning("fit stopped without meeting its tolerances")
    print(path)


def cmd_table(args, parser, manifest, out: Path):
    settings = _experiment_settings(args, parser)
    cfg = _experiment_config(settings)
    manifest.resolved.update({k: v for k, v in settings.items()})
    records = []
    stats = monte_carlo(cfg, jobs=args.jobs, records=records)
    text, stats_csv = tabulate(stats, cfg)
    for name, content in (("table.txt", text), ("stats.csv", stats_csv)):
        path = out / name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        manifest.add(path)
    path = out / "selections.csv"
    write_csv(path, SELECTION_HEADER, selection_rows(records))
    manifest.add(path)
    sys.stdout.write(text)


def cmd_curve(args, parser, manifest, out: Path):
    settings = _experiment_settings(args, parser)
    settings.setdefault("n_realizations", 50)
    cfg = _experiment_config(settings)
    manifest.resolved.update({k: v for k, v in settings.items()})
    curve = mean_error_curve(cfg, jobs=args.jobs)
    path = out / "curve.csv"
    write_csv(path, CURVE_HEADER, zip(curve.lambdas, curve.mean_abs_error))
    manifest.add(path)
    path = out / "markers.csv"
    markers = [("lambda_opt", curve.lambda_opt), ("geomean_lambda_ncp", curve.lambda_ncp),
               ("geomean_lambda_lc", curve.lambda_lc)]
    write_csv(path, ("marker", "lambda"), markers)
    manifest.add(path)
    path = out / "selections.csv"
    write_csv(path, SELECTION_HEADER, selection_rows(curve.records))
    manifest.add(path)
    for name, v in markers:
        print(f"{name},{format(v, '.17g')}")


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaxo", description="DRT inversion of impedance spectra")
    p.add_argument("--version", action="version", version=f"relaxo {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="synthesise spectra")
    s.add_argument("--set", help="built-in simulation set, e.g. A-RQ")
    s.add_argument("--noise", help="noise fraction(s), comma separated")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("invert", parents=[common], help="regularised inversion of a spectrum")
    s.add_argument("spectrum")
    s.add_argument("--matrix", choices=("A3", "A4"), default="A4")
    s.add_argument("--L", choices=("I", "L1", "L2"), default="I")
    s.add_argument("--method", choices=("ls", "nnls-as", "nnls-sbb"), default="nnls-as")
    s.add_argument("--criterion", choices=("lc", "ncp"), default="lc")
    s.add_argument("--scheme", choices=[m.value for m in Scheme], default="s-trapezoid")
    s.add_argument("--lambda", dest="fixed_lambda", type=float, help="fixed lambda, no sweep")
    s.add_argument("--lambda-min", type=float, default=1e-8)
    s.add_argument("--lambda-max", type=float, default=1e2)
    s.add_argument("--n-lambda", type=int, default=50)
    s.add_argument("--truth-set", help="simulation set used as truth for s-space errors")

    s = sub.add_parser("fit", parents=[common], help="parametric RQ/LN fit")
    s.add_argument("spectrum", nargs="?")
    s.add_argument("--family", choices=("RQ", "LN", "rq", "ln"), default="RQ")
    s.add_argument("--table", action="store_true", help="noise-ladder fit table")
    s.add_argument("--data", choices=("RQ", "LN", "rq", "ln"), help="data family for --table")
    s.add_argument("--t0", type=float, default=0.1)
    s.add_argument("--sigma", type=float, default=0.83)
    s.add_argument("--beta", type=float, help="RQ shape (default: matched to --sigma)")
    s.add_argument("--realizations", type=int, default=25)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("peaks", parents=[common], help="Z2 peaks and Nyquist curve")
    s.add_argument("spectrum")
    s.add_argument("--refine", action="store_true", help="quadratic sub-grid refinement")

    for name, helptext in (("table", "Monte-Carlo error table"), ("curve", "mean error vs lambda")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--preset", help="named table layout" if name == "table" else argparse.SUPPRESS)
        s.add_argument("--set", "--sets", dest="sets", help="simulation set(s), comma separated")
        s.add_argument("--L", help="regularizer(s): I, L1, L2")
        s.add_argument("--criterion", help="lc, ncp, opt (comma separated)")
        s.add_argument("--noise", help="noise fraction(s), comma separated")
        s.add_argument("--matrix", choices=("A3", "A4"))
        s.add_argument("--method", choices=("ls", "nnls-as", "nnls-sbb"))
        s.add_argument("--scheme", choices=[m.value for m in Scheme])
        s.add_argument("--realizations", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "invert": cmd_invert,
    "fit": cmd_fit,
    "peaks": cmd_peaks,
    "table": cmd_table,
    "curve": cmd_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    start = time.perf_counter()
    try:
        cfg_parser, cfg_text = _read_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, args.config, str(out), config_text=cfg_text)
        COMMANDS[args.command](args, cfg_parser, manifest, out)
    except UsageError as exc:
        print(f"relaxo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"relaxo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"relaxo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.elapsed_seconds = round(time.perf_counter() - start, 3)
    manifest.write(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
