"""Command line interface.

Subcommands cover the full pipeline: synthesise images, fit them by
maximum likelihood or by the direct baselines, map confidence regions,
run batch experiments, and render figures from recorded trials.

Exit codes: 0 success, 2 configuration problem, 3 estimation failure
(including non-convergence without --allow-nonconverged), 4 file I/O
problem.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from .baseline import algebraic_error, def_gradient, def_points, extract_edges
from .experiment import (
    Condition,
    ExperimentSpec,
    PRESETS,
    read_records_csv,
    run_experiment,
    write_experiment_meta,
    write_records_csv,
)
from .fitting import FitOptions, fit
from .forward import (
    ForwardConfig,
    PhotonImage,
    PixelGrid,
    RealImage,
    noise_free_image,
    snr,
    synthesize,
)
from .geometry import DegenerateConicError, GeometricEllipse, SqrtParams, alg_to_geo, geo_to_alg
from .imgio import (
    ImageFormatError,
    read_key_values,
    read_photon_image,
    write_key_values,
    write_pgm,
    write_photon_image,
    write_real_csv,
)
from .report import render_report
from .uncertainty import confidence_region, covariance_report, zbar_grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4


class ConfigError(Exception):
    """Bad or missing configuration input."""


class EstimationError(Exception):
    """The requested estimate could not be produced."""


# --- config parsing helpers ---


def _load_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive: B is an axis, b a half-width
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parser


def _get(cfg: configparser.ConfigParser, section: str, key: str, cast,
         default=None):
    if not cfg.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"missing [{section}] {key}")
    raw = cfg.get(section, key)
    try:
        if cast is int:
            return int(raw)
        if cast is float:
            return float(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _ellipse_from(cfg, section: str) -> GeometricEllipse:
    try:
        return GeometricEllipse(
            A=_get(cfg, section, "A", float),
            B=_get(cfg, section, "B", float),
            H=_get(cfg, section, "H", float),
            K=_get(cfg, section, "K", float),
            tau=_get(cfg, section, "tau", float),
        )
    except ValueError as exc:
        raise ConfigError(f"[{section}] does not describe an ellipse: {exc}") from exc


def _forward_config_from(cfg) -> ForwardConfig:
    for section in ("image", "ellipse", "noise"):
        if not cfg.has_section(section):
            raise ConfigError(f"missing [{section}] section")
    xi = _ellipse_from(cfg, "ellipse")
    try:
        grid = PixelGrid(_get(cfg, "image", "rows", int),
                         _get(cfg, "image", "cols", int))
        return ForwardConfig(
            xi=xi, grid=grid,
            sigma_psf=_get(cfg, "noise", "sigma_psf", float),
            c_background=_get(cfg, "noise", "c_background", float, 0.0),
            C=_get(cfg, "image", "C", int),
            b=_get(cfg, "image", "b", int),
            seed=_get(cfg, "noise", "seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _condition_from(cfg, section: str, label: str) -> Condition:
    xi = _ellipse_from(cfg, section)
    try:
        return Condition(
            label=label, xi=xi,
            grid=PixelGrid(_get(cfg, section, "rows", int),
                           _get(cfg, section, "cols", int)),
            sigma_psf=_get(cfg, section, "sigma_psf", float),
            c_background=_get(cfg, section, "c_background", float, 0.0),
            C=_get(cfg, section, "C", int),
            b=_get(cfg, section, "b", int),
        )
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _experiment_spec_from(cfg) -> ExperimentSpec:
    if not cfg.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    preset = _get(cfg, "experiment", "preset", str, "custom")
    trials = _get(cfg, "experiment", "trials", int, 100)
    master_seed = _get(cfg, "experiment", "master_seed", int, 2024)
    if preset != "custom":
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from "
                f"{', '.join(sorted(PRESETS))} or custom")
        return PRESETS[preset](trials=trials, master_seed=master_seed)
    sections = [s for s in cfg.sections() if s.startswith("condition.")]
    if not sections:
        raise ConfigError("custom experiment needs [condition.<label>] sections")
    conditions = tuple(_condition_from(cfg, s, s.split(".", 1)[1])
                       for s in sections)
    try:
        return ExperimentSpec("custom", conditions, trials, master_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fit_options_from(args) -> FitOptions:
    try:
        return FitOptions(max_iterations=args.max_iterations,
                          multi_start=args.multi_start)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# --- shared fit plumbing ---


def _read_image(args) -> PhotonImage:
    image, _ = read_photon_image(args.image, C=args.scale_C, b=args.half_width_b)
    return image


def _seed_from_meta(path) -> tuple[GeometricEllipse, float, float]:
    meta = read_key_values(path)
    try:
        xi = GeometricEllipse(float(meta["A"]), float(meta["B"]),
                              float(meta["H"]), float(meta["K"]),
                              float(meta["tau"]))
        return xi, float(meta["sigma_psf"]), float(meta.get("c_background", "0"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path} lacks usable ellipse metadata: {exc}") from exc


def _initial_state(args, image: PhotonImage) -> tuple[GeometricEllipse, float]:
    """Starting ellipse and blur for the likelihood fit."""
    if args.seed_source == "user":
        if args.init is None:
            raise ConfigError("--seed-source user requires --init A,B,H,K,tau")
        parts = [p for p in args.init.replace(",", " ").split() if p]
        if len(parts) != 5:
            raise ConfigError(f"--init needs 5 numbers, got {len(parts)}")
        try:
            xi = GeometricEllipse(*(float(p) for p in parts))
        except ValueError as exc:
            raise ConfigError(f"--init: {exc}") from exc
        return xi, args.sigma_init
    if args.seed_source == "truth":
        meta_path = args.meta or f"{args.image}.meta"
        xi, sigma_psf, _ = _seed_from_meta(meta_path)
        return xi, sigma_psf
    # default: seed from the direct point baseline, circle fallback
    try:
        theta = def_points(extract_edges(image.to_real(), args.threshold))
        return alg_to_geo(theta), args.sigma_init
    except Exception as exc:
        print(f"note: baseline seeding failed ({exc}); starting from a "
              "centred circle", file=sys.stderr)
        return GeometricEllipse(0.25, 0.25, 0.5, 0.5, 0.0), args.sigma_init


def _run_fit(args):
    image = _read_image(args)
    xi0, sigma0 = _initial_state(args, image)
    init = SqrtParams.from_geometric(xi0, sigma0)
    result = fit(image, init, c_background=args.c_background,
                 options=_fit_options_from(args))
    if not result.converged and not args.allow_nonconverged:
        raise EstimationError(
            "fit did not converge (rerun with --allow-nonconverged to keep it)")
    return image, result


def _fit_record(result) -> dict:
    xi = result.xi
    theta = geo_to_alg(xi).as_array()
    record = {
        "A": repr(xi.A), "B": repr(xi.B), "H": repr(xi.H), "K": repr(xi.K),
        "tau": repr(xi.tau), "sigma_psf": repr(result.sigma_psf),
        "nll": repr(result.nll),
        "converged": "true" if result.converged else "false",
        "iterations": result.iterations,
        "grad_norm": repr(result.grad_norm),
    }
    for name, value in zip("abcdef", theta):
        record[f"conic_{name}"] = repr(float(value))
    return record


# --- subcommand handlers ---


def cmd_simulate(args) -> int:
    cfg = _load_ini(args.config)
    config = _forward_config_from(cfg)
    image = synthesize(config)
    rate = noise_free_image(config.xi, config.grid, config.sigma_psf,
                            config.c_background)
    meta = {
        "A": repr(config.xi.A), "B": repr(config.xi.B), "H": repr(config.xi.H),
        "K": repr(config.xi.K), "tau": repr(config.xi.tau),
        "sigma_psf": repr(config.sigma_psf),
        "c_background": repr(config.c_background),
        "C": config.C, "b": config.b, "seed": config.seed,
        "snr": repr(snr(rate, config.C)),
    }
    write_photon_image(args.out, image, binary=not args.ascii)
    write_key_values(f"{args.out}.meta", meta)
    print(f"wrote {args.out} ({config.grid.rows}x{config.grid.cols}, "
          f"C={config.C}, b={config.b}, snr={snr(rate, config.C):.2f})")
    return EXIT_OK


def cmd_fit(args) -> int:
    image, result = _run_fit(args)
    record = {"method": "ml", "seed_source": args.seed_source}
    record.update(_fit_record(result))
    if args.covariance_out:
        report = covariance_report(result)
        np.savetxt(args.covariance_out, report.cov_xi, delimiter=",",
                   header="covariance of A,B,H,K,tau", fmt="%.17g")
        record["covariance_file"] = args.covariance_out
    write_key_values(args.out, record)
    print(f"fit: A={result.xi.A:.5f} B={result.xi.B:.5f} "
          f"H={result.xi.H:.5f} K={result.xi.K:.5f} tau={result.xi.tau:.5f} "
          f"nll={result.nll:.3f} converged={result.converged}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    image = _read_image(args)
    real = image.to_real()
    try:
        if args.method == "points":
            theta = def_points(extract_edges(real, args.threshold))
        else:
            theta = def_gradient(real, args.threshold)
    except Exception as exc:
        raise EstimationError(f"baseline fit failed: {exc}") from exc
    record = {"method": f"def-{args.method}"}
    for name, value in zip("abcdef", theta):
        record[f"conic_{name}"] = repr(float(value))
    try:
        xi = alg_to_geo(theta)
        for name in ("A", "B", "H", "K", "tau"):
            record[name] = repr(getattr(xi, name))
    except DegenerateConicError:
        record["note"] = "conic is not an ellipse"
    write_key_values(args.out, record)
    print(f"baseline ({args.method}): wrote {args.out}")
    return EXIT_OK


def cmd_region(args) -> int:
    image, result = _run_fit(args)
    try:
        report = covariance_report(result)
    except Exception as exc:
        raise EstimationError(f"covariance unavailable: {exc}") from exc
    region = confidence_region(report.theta_hat, report.cov_theta,
                               alpha=args.alpha, resolution=args.resolution)
    meta = {
        "alpha": repr(region.alpha),
        "threshold": repr(region.threshold),
        "resolution": region.resolution,
        "coverage_fraction": repr(region.coverage_fraction()),
    }
    write_pgm(args.out, region.mask.astype(np.uint8), metadata=meta, maxval=1)
    if args.zbar_csv:
        values = zbar_grid(report.theta_hat, report.cov_theta, args.resolution)
        finite = np.where(np.isfinite(values), values, 1e300)
        grid = PixelGrid(args.resolution, args.resolution)
        write_real_csv(args.zbar_csv, RealImage(grid, finite), metadata=meta)
    print(f"region: alpha={args.alpha} threshold={region.threshold:.4f} "
          f"covers {100 * region.coverage_fraction():.2f}% of the unit box")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_ini(args.config)
    spec = _experiment_spec_from(cfg)
    jobs = args.jobs if args.jobs else _get(cfg, "experiment", "jobs", int, 1)
    records = run_experiment(spec, jobs=jobs)
    write_records_csv(args.out, records)
    write_experiment_meta(f"{args.out}.meta", spec)
    converged = sum(r.converged for r in records)
    print(f"wrote {args.out}: {len(records)} records "
          f"({converged} converged) over {len(spec.conditions)} conditions")
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_records_csv(args.records)
    meta = None
    meta_path = args.meta or f"{args.records}.meta"
    if Path(meta_path).exists():
        meta = read_key_values(meta_path)
    paths = render_report(records, args.out_dir, meta=meta)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


# --- parser ---


def _add_image_input(sub):
    sub.add_argument("--image", required=True, help="photon image (PGM)")
    sub.add_argument("--C", dest="scale_C", type=int, default=None,
                     help="photon budget override when the PGM lacks it")
    sub.add_argument("--b", dest="half_width_b", type=int, default=None,
                     help="quantiser half-width override")
    sub.add_argument("--threshold", type=float, default=0.3,
                     help="edge threshold fraction for baseline seeding")


def _add_fit_options(sub):
    sub.add_argument("--seed-source", choices=("def-points", "truth", "user"),
                     default="def-points", help="where the fit starts from")
    sub.add_argument("--init", default=None,
                     help="A,B,H,K,tau starting ellipse for --seed-source user")
    sub.add_argument("--sigma-init", type=float, default=0.05,
                     help="starting blur width when not taken from metadata")
    sub.add_argument("--meta", default=None,
                     help="metadata file for --seed-source truth "
                          "(default: <image>.meta)")
    sub.add_argument("--c-background", type=float, default=0.0,
                     help="relative background level of the image model")
    sub.add_argument("--max-iterations", type=int, default=200)
    sub.add_argument("--multi-start", type=int, default=1,
                     help="number of jittered restarts; best result wins")
    sub.add_argument("--allow-nonconverged", action="store_true",
                     help="report a non-converged fit instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elliphot",
        description="Ellipse estimation from photon-limited images.")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="synthesise a photon image")
    sim.add_argument("--config", required=True, help="INI file (see README)")
    sim.add_argument("--out", required=True, help="output PGM path")
    sim.add_argument("--ascii", action="store_true",
                     help="write plain-text PGM instead of binary")
    sim.set_defaults(handler=cmd_simulate)

    fit_cmd = commands.add_parser("fit", help="maximum-likelihood ellipse fit")
    _add_image_input(fit_cmd)
    _add_fit_options(fit_cmd)
    fit_cmd.add_argument("--out", required=True, help="key=value result file")
    fit_cmd.add_argument("--covariance-out", default=None,
                         help="also write the 5x5 parameter covariance (CSV)")
    fit_cmd.set_defaults(handler=cmd_fit)

    base = commands.add_parser("baseline", help="direct (non-iterative) fit")
    _add_image_input(base)
    base.add_argument("--method", choices=("points", "gradient"),
                      default="points")
    base.add_argument("--out", required=True, help="key=value result file")
    base.set_defaults(handler=cmd_baseline)

    region = commands.add_parser(
        "region", help="confidence-region raster for the fitted ellipse")
    _add_image_input(region)
    _add_fit_options(region)
    region.add_argument("--out", required=True, help="output mask PGM")
    region.add_argument("--alpha", type=float, default=0.05)
    region.add_argument("--resolution", type=int, default=512)
    region.add_argument("--zbar-csv", default=None,
                        help="also write the statistic raster as CSV")
    region.set_defaults(handler=cmd_region)

    exp = commands.add_parser("experiment", help="batch trials to CSV")
    exp.add_argument("--config", required=True, help="INI file (see README)")
    exp.add_argument("--out", required=True, help="output CSV path")
    exp.add_argument("--jobs", type=int, default=0,
                     help="worker processes (default: config value or 1)")
    exp.set_defaults(handler=cmd_experiment)

    rep = commands.add_parser("report", help="figures from an experiment CSV")
    rep.add_argument("--records", required=True, help="experiment CSV")
    rep.add_argument("--meta", default=None,
                     help="experiment sidecar (default: <records>.meta)")
    rep.add_argument("--out-dir", required=True, help="directory for figures")
    rep.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, ImageFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
