"""Batch trials over synthetic images: sweeps, seeding, CSV records.

One trial synthesises an image, runs both direct baselines and the
maximum-likelihood fit (seeded from the point baseline), and records
every method's estimate against the truth.  Seeds derive from
``(master_seed, condition_index, trial_index)`` so a sweep is
reproducible row for row regardless of worker count or scheduling.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baseline import algebraic_error, def_gradient, def_points, extract_edges
from .fitting import FitOptions, fit
from .forward import ForwardConfig, PixelGrid, noise_free_image, snr, synthesize
from .geometry import GeometricEllipse, SqrtParams, alg_to_geo, geo_to_alg, unit_normalize

ML = "ml"
DEF_POINTS = "def-points"
DEF_GRADIENT = "def-gradient"
METHODS = (DEF_GRADIENT, DEF_POINTS, ML)  # lexicographic, the CSV row order

# seed used for the likelihood fit when the point baseline fails
FALLBACK_SEED = GeometricEllipse(0.25, 0.25, 0.5, 0.5, 0.0)

CSV_COLUMNS = ("condition", "trial", "method", "A", "B", "H", "K", "tau",
               "algebraic_error", "nll", "converged", "runtime_ms")


@dataclass(frozen=True)
class Condition:
    """One sweep point: everything about the imaging setup except the seed."""

    label: str
    xi: GeometricEllipse
    grid: PixelGrid
    sigma_psf: float
    c_background: float
    C: int
    b: int

    def forward_config(self, seed: int) -> ForwardConfig:
        return ForwardConfig(xi=self.xi, grid=self.grid, sigma_psf=self.sigma_psf,
                             c_background=self.c_background, C=self.C, b=self.b,
                             seed=seed)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    conditions: tuple[Condition, ...]
    trials: int
    master_seed: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"need at least one trial, got {self.trials}")
        if not self.conditions:
            raise ValueError("experiment has no conditions")
        labels = [c.label for c in self.conditions]
        if len(set(labels)) != len(labels):
            raise ValueError(f"condition labels repeat: {labels}")


@dataclass(frozen=True)
class TrialRecord:
    condition: str
    trial: int
    method: str
    A: float
    B: float
    H: float
    K: float
    tau: float
    algebraic_error: float
    nll: float
    converged: bool
    runtime_ms: float


def trial_seed(master_seed: int, condition_index: int, trial_index: int) -> int:
    """Independent 64-bit seed for one (condition, trial) cell."""
    seq = np.random.SeedSequence((master_seed, condition_index, trial_index))
    return int(seq.generate_state(1, np.uint64)[0])


# --- sweep presets ---

_REFERENCE_XI = GeometricEllipse(0.25, 0.05, 0.5, 0.5, 0.785)
_BLUNT_XI = GeometricEllipse(0.35, 0.15, 0.5, 0.5, 0.0)
_GRID32 = PixelGrid(32, 32)


def snr_sweep(trials: int = 100, master_seed: int = 2024) -> ExperimentSpec:
    """Photon budget sweep at the reference ellipse, mild quantisation."""
    conds = tuple(
        Condition(f"snr_C{C:03d}", _REFERENCE_XI, _GRID32, 0.05, 0.0, C, 1)
        for C in (16, 32, 64, 128, 256))
    return ExperimentSpec("snr", conds, trials, master_seed)


def quantisation_sweep(trials: int = 100, master_seed: int = 2024) -> ExperimentSpec:
    """Quantiser half-width sweep down to binary images (two grey levels)."""
    conds = tuple(
        Condition(f"quant_b{b:02d}", _BLUNT_XI, _GRID32, 0.15, 0.0, 128, b)
        for b in (2, 4, 8, 16, 32))
    return ExperimentSpec("quantisation", conds, trials, master_seed)


def eccentricity_sweep(trials: int = 100, master_seed: int = 2024) -> ExperimentSpec:
    """Shape sweep at constant area-scale A*B, from blunt to needle-like."""
    conds = []
    for ecc in (0.78, 0.87, 0.93, 0.97, 0.99):
        ratio = math.sqrt(1.0 - ecc * ecc)  # B / A
        A = math.sqrt(0.0175 / ratio)
        conds.append(Condition(f"ecc_{round(100 * ecc):02d}",
                               GeometricEllipse(A, A * ratio, 0.5, 0.5, 0.785),
                               _GRID32, 0.05, 0.0, 32, 1))
    return ExperimentSpec("eccentricity", tuple(conds), trials, master_seed)


def grid_sweep(trials: int = 100, master_seed: int = 2024) -> ExperimentSpec:
    """Resolution sweep at a fixed photon budget."""
    conds = tuple(
        Condition(f"grid_{n:03d}", _BLUNT_XI, PixelGrid(n, n), 0.15, 0.0, 32, 1)
        for n in (8, 16, 32, 64, 128))
    return ExperimentSpec("grid", conds, trials, master_seed)


PRESETS = {
    "snr": snr_sweep,
    "quantisation": quantisation_sweep,
    "eccentricity": eccentricity_sweep,
    "grid": grid_sweep,
}


# --- one trial ---


def _failed_record(condition: str, trial: int, method: str, ms: float) -> TrialRecord:
    nan = math.nan
    return TrialRecord(condition, trial, method, nan, nan, nan, nan, nan,
                       nan, nan, False, ms)


def _xi_record(condition: str, trial: int, method: str, xi: GeometricEllipse,
               theta_true: np.ndarray, nll: float, converged: bool,
               ms: float) -> TrialRecord:
    err = algebraic_error(geo_to_alg(xi).as_array(), theta_true)
    return TrialRecord(condition, trial, method, xi.A, xi.B, xi.H, xi.K, xi.tau,
                       err, nll, converged, ms)


def run_trial(condition: Condition, trial_index: int, master_seed: int,
              condition_index: int = 0,
              options: FitOptions | None = None) -> list[TrialRecord]:
    """All three methods on one synthetic image; one record per method."""
    seed = trial_seed(master_seed, condition_index, trial_index)
    image = synthesize(condition.forward_config(seed))
    real = image.to_real()
    theta_true = unit_normalize(geo_to_alg(condition.xi).as_array())
    label, trial = condition.label, trial_index
    records = []

    t0 = time.perf_counter()
    seed_xi = None
    try:
        theta_p = def_points(extract_edges(real))
        seed_xi = alg_to_geo(theta_p)
        ms = 1e3 * (time.perf_counter() - t0)
        records.append(_xi_record(label, trial, DEF_POINTS, seed_xi, theta_true,
                                  math.nan, True, ms))
    except Exception:
        records.append(_failed_record(label, trial, DEF_POINTS,
                                      1e3 * (time.perf_counter() - t0)))

    t0 = time.perf_counter()
    try:
        grad_xi = alg_to_geo(def_gradient(real))
        ms = 1e3 * (time.perf_counter() - t0)
        records.append(_xi_record(label, trial, DEF_GRADIENT, grad_xi, theta_true,
                                  math.nan, True, ms))
    except Exception:
        records.append(_failed_record(label, trial, DEF_GRADIENT,
                                      1e3 * (time.perf_counter() - t0)))

    t0 = time.perf_counter()
    try:
        init = SqrtParams.from_geometric(seed_xi if seed_xi is not None
                                         else FALLBACK_SEED, condition.sigma_psf)
        result = fit(image, init, c_background=condition.c_background,
                     options=options)
        ms = 1e3 * (time.perf_counter() - t0)
        records.append(_xi_record(label, trial, ML, result.xi, theta_true,
                                  result.nll, result.converged, ms))
    except Exception:
        records.append(_failed_record(label, trial, ML,
                                      1e3 * (time.perf_counter() - t0)))

    records.sort(key=lambda r: r.method)
    return records


def _trial_task(args) -> list[TrialRecord]:
    spec, condition_index, trial_index, options = args
    return run_trial(spec.conditions[condition_index], trial_index,
                     spec.master_seed, condition_index, options)


def run_experiment(spec: ExperimentSpec, jobs: int = 1,
                   options: FitOptions | None = None) -> list[TrialRecord]:
    """Every (condition, trial) cell, optionally across worker processes.

    The output is identical for any ``jobs`` value except for the
    ``runtime_ms`` fields.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be positive, got {jobs}")
    tasks = [(spec, ci, ti, options)
             for ci in range(len(spec.conditions))
             for ti in range(spec.trials)]
    rows: list[TrialRecord] = []
    if jobs == 1:
        for task in tasks:
            rows.extend(_trial_task(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(_trial_task, tasks, chunksize=4):
                rows.extend(result)
    rows.sort(key=lambda r: (r.condition, r.trial, r.method))
    return rows


# --- persistence ---


def write_records_csv(path, records: list[TrialRecord]) -> None:
    """Records to CSV; floats via repr so reading them back is exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.condition, r.trial, r.method,
                repr(r.A), repr(r.B), repr(r.H), repr(r.K), repr(r.tau),
                repr(r.algebraic_error), repr(r.nll),
                "true" if r.converged else "false",
                repr(r.runtime_ms),
            ])


def read_records_csv(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}: {header}")
        out = []
        for row in reader:
            out.append(TrialRecord(
                row[0], int(row[1]), row[2],
                *(float(v) for v in row[3:10]),
                row[10] == "true", float(row[11])))
        return out


def write_experiment_meta(path, spec: ExperimentSpec) -> None:
    """Sidecar with the truth and achieved peak SNR per condition."""
    from .imgio import write_key_values

    record: dict[str, object] = {
        "experiment": spec.name,
        "trials": spec.trials,
        "master_seed": spec.master_seed,
    }
    for cond in spec.conditions:
        prefix = f"condition.{cond.label}"
        prf = noise_free_image(cond.xi, cond.grid, cond.sigma_psf,
                               cond.c_background)
        record[f"{prefix}.A"] = repr(cond.xi.A)
        record[f"{prefix}.B"] = repr(cond.xi.B)
        record[f"{prefix}.H"] = repr(cond.xi.H)
        record[f"{prefix}.K"] = repr(cond.xi.K)
        record[f"{prefix}.tau"] = repr(cond.xi.tau)
        record[f"{prefix}.rows"] = cond.grid.rows
        record[f"{prefix}.cols"] = cond.grid.cols
        record[f"{prefix}.sigma_psf"] = repr(cond.sigma_psf)
        record[f"{prefix}.c_background"] = repr(cond.c_background)
        record[f"{prefix}.C"] = cond.C
        record[f"{prefix}.b"] = cond.b
        record[f"{prefix}.snr"] = repr(snr(prf, cond.C))
    write_key_values(path, record)
