"""Monte Carlo benchmarks of J-DEAR against the FFT baseline.

Every trial synthesizes one datacube, extracts the detection range bin
and hands the identical snapshot to each selected method. Trials are
independent work items; statistics are accumulated with compensated
summation so the result does not depend on the number of workers.

Trial ``t`` draws its velocities, amplitudes and unit-variance noise from
``SeedSequence(seed, spawn_key=(t,))`` for every cell of a sweep, so SNR
cells differ only in the noise scale (common random numbers).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy
from scipy.optimize import linear_sum_assignment

from chirpjoint.jdear import (
    DegenerateModesError, GroupingError, InitializationError, SolverSettings, ambiguity_span, solve,
)
from chirpjoint.reference import DetectionError, reference_pipeline
from chirpjoint.scenario import RadarScenario
from chirpjoint.synth import (
    Target, TargetSet, noise_variance_for_snr, range_compress, range_fft_gain, range_on_bin,
    select_detection_bin, synthesize_cube,
)

METHODS = ("jdear", "reference")
KMH = 3.6
RESOLVE_TOLERANCE_KMH = 0.15

_SOLVER_FAILURES = (DegenerateModesError, InitializationError, GroupingError, DetectionError,
                    np.linalg.LinAlgError, ValueError)


class SweepSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep and how.

    ``thresholds`` are optional acceptance checks evaluated by
    :func:`check_thresholds`; each is a dict with ``method``, ``metric``
    (a :class:`CellResult` field or ``"crossing_snr_db"``), optional cell
    selectors ``snr_db`` / ``separation_kmh`` and bounds ``min`` / ``max``
    (and ``level_kmh`` for crossings).
    """

    snr_grid_db: tuple = (-10.0, -5.0, 0.0, 4.0, 8.0, 12.0, 20.0)
    velocity_interval_kmh: tuple = (-300.0, 150.0)
    trials_per_cell: int = 100
    fixed_second_target_kmh: Optional[float] = None
    separation_grid_kmh: Optional[tuple] = None
    seed: int = 0
    methods: tuple = METHODS
    snr_reference: str = "bin"
    range_bin: int = 80
    order_criterion: Optional[str] = None
    velocity_bins: int = 9
    workers: int = 1
    thresholds: tuple = ()

    def __post_init__(self):
        for name in ("snr_grid_db", "velocity_interval_kmh", "methods", "thresholds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.separation_grid_kmh is not None:
            object.__setattr__(self, "separation_grid_kmh", tuple(self.separation_grid_kmh))

    @property
    def two_target(self) -> bool:
        return self.fixed_second_target_kmh is not None

    def validate(self, scenario: Optional[RadarScenario] = None) -> None:
        problems = []
        if not self.methods:
            problems.append("methods is empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            problems.append(f"unknown methods {sorted(unknown)}")
        if self.trials_per_cell < 1:
            problems.append(f"trials_per_cell must be >= 1, got {self.trials_per_cell}")
        if not self.snr_grid_db:
            problems.append("snr_grid_db is empty")
        if self.two_target and not self.separation_grid_kmh:
            problems.append("separation_grid_kmh is required with fixed_second_target_kmh")
        lo, hi = self.velocity_interval_kmh
        if not lo < hi:
            problems.append(f"velocity interval ({lo}, {hi}) is empty")
        if self.snr_reference not in ("bin", "sample"):
            problems.append(f"snr_reference must be 'bin' or 'sample', got {self.snr_reference!r}")
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if scenario is not None and scenario.plan.num_sequences >= 2:
            span = ambiguity_span(scenario) * KMH
            if hi - lo > span:
                problems.append(f"velocity interval width {hi - lo:g} km/h exceeds the ambiguity span {span:.6g}")
        if problems:
            raise SweepSpecError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise SweepSpecError(f"unknown sweep spec fields {sorted(extra)}")
        return cls(**data)


def load_sweep_spec(path) -> SweepSpec:
    return SweepSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CellResult:
    method: str
    snr_db: float
    separation_kmh: float = float("nan")
    rmse_kmh: float = float("nan")
    bias_kmh: float = float("nan")
    std_kmh: float = float("nan")
    rmse_spread_kmh: float = float("nan")
    outlier_rate: float = 0.0
    resolved_rate: float = float("nan")
    rmse_target1_kmh: float = float("nan")
    rmse_target2_kmh: float = float("nan")
    mean_iterations: float = float("nan")
    trials: int = 0
    degenerate: bool = False
    wall_time_s: float = 0.0


@dataclass
class SweepResult:
    kind: str
    spec: SweepSpec
    scenario: dict
    cells: list = field(default_factory=list)
    range_fft_gain_db: float = float("nan")

    def cell(self, method: str, snr_db: float, separation_kmh: Optional[float] = None) -> CellResult:
        for c in self.cells:
            if c.method == method and c.snr_db == snr_db and (
                    separation_kmh is None or c.separation_kmh == separation_kmh):
                return c
        raise KeyError((method, snr_db, separation_kmh))

    def series(self, method: str, metric: str = "rmse_kmh", separation_kmh: Optional[float] = None):
        """(snr grid, metric values) for one method, in grid order."""
        snrs = list(self.spec.snr_grid_db)
        return np.array(snrs), np.array([getattr(self.cell(method, s, separation_kmh), metric) for s in snrs])


@dataclass
class _Trial:
    kind: str
    scenario: RadarScenario
    spec: SweepSpec
    snr_db: float
    separation_kmh: float
    index: int


@dataclass
class _Outcome:
    method: str
    truth_kmh: tuple
    estimates_kmh: tuple
    failed: bool
    iterations: float
    checksum: str


def snapshot_checksum(snap) -> str:
    return hashlib.sha256(np.ascontiguousarray(snap.vectors).tobytes()).hexdigest()


def _trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _draw_targets(tr: _Trial, sc: RadarScenario) -> tuple[TargetSet, int]:
    rng = _trial_rng(tr.spec.seed, tr.index)
    lo, hi = tr.spec.velocity_interval_kmh
    noise_seed = int(rng.integers(2 ** 63))
    if tr.kind == "accuracy":
        speeds = [rng.uniform(lo, hi)]
    else:
        fixed = tr.spec.fixed_second_target_kmh
        speeds = [fixed, fixed + tr.separation_kmh]
    targets = []
    for v in speeds:
        v_mps = v / KMH
        targets.append(Target(range_on_bin(sc, tr.spec.range_bin, v_mps), v_mps,
                              float(rng.uniform(-0.5, 0.5)), complex(np.exp(2j * np.pi * rng.random()))))
    return TargetSet(tuple(targets)), noise_seed


def _jdear(snap, settings, order, fallback_order):
    try:
        return solve(snap, settings, order=order)
    except _SOLVER_FAILURES:
        if fallback_order is None:
            raise
        return solve(snap, settings, order=fallback_order)


def _run_trial(tr: _Trial) -> list[_Outcome]:
    spec = tr.spec
    noise = noise_variance_for_snr(tr.snr_db, tr.scenario, spec.snr_reference)
    sc = tr.scenario.with_noise(noise)
    tset, noise_seed = _draw_targets(tr, sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cube = synthesize_cube(sc, tset, noise_seed)
    snap = select_detection_bin(range_compress(cube))
    digest = snapshot_checksum(snap)

    lo, hi = spec.velocity_interval_kmh
    settings = SolverSettings(search_interval_mps=(lo / KMH, hi / KMH),
                              order_criterion=spec.order_criterion or "mdl")
    K = sc.ddm.num_tx
    P = len(tset)
    degenerate = P > 1 and tr.separation_kmh == 0
    order = None if spec.order_criterion else (K if degenerate else P * K)
    truth = tuple(t.velocity_mps * KMH for t in tset)

    out = []
    for method in spec.methods:
        failed, iters, est = False, float("nan"), ()
        try:
            if method == "jdear":
                rep = _jdear(snap, settings, order, K if P > 1 and order != K else None)
                iters = float(rep.iterations)
            else:
                rep = reference_pipeline(snap, sc, P, settings, allow_partial=P > 1)
            est = tuple(float(v) for v in rep.velocities_kmh)
            failed = not est
        except _SOLVER_FAILURES:
            failed = True
        out.append(_Outcome(method, truth, est, failed, iters, snapshot_checksum(snap)))
    if any(o.checksum != digest for o in out):
        raise RuntimeError("a method modified the shared snapshot")
    return out


def _assign(truth: Sequence[float], est: Sequence[float], miss_kmh: float) -> np.ndarray:
    """Per-truth errors under the nearest-truth assignment; unmatched truths cost ``miss_kmh``."""
    truth = np.asarray(truth)
    errors = np.full(truth.size, miss_kmh)
    if len(est):
        cost = np.abs(np.asarray(est)[None, :] - truth[:, None])
        rows, cols = linear_sum_assignment(cost)
        errors[rows] = np.asarray(est)[cols] - truth[rows]
    return errors


def _rms(x) -> float:
    x = list(x)
    return math.sqrt(math.fsum(v * v for v in x) / len(x)) if x else float("nan")


def _aggregate(kind: str, spec: SweepSpec, method: str, snr: float, sep: float, outcomes: list[_Outcome],
               span_kmh: float, wall: float) -> CellResult:
    lo, hi = spec.velocity_interval_kmh
    gross = 0.1 * span_kmh
    cell = CellResult(method, snr, sep, trials=len(outcomes), wall_time_s=wall,
                      degenerate=kind == "resolution" and sep == 0)
    iters = [o.iterations for o in outcomes if not math.isnan(o.iterations)]
    cell.mean_iterations = math.fsum(iters) / len(iters) if iters else float("nan")

    if kind == "accuracy":
        errors, speeds, outliers = [], [], 0
        for o in outcomes:
            if o.failed:
                outliers += 1
                continue
            e = o.estimates_kmh[int(np.argmin(np.abs(np.asarray(o.estimates_kmh) - o.truth_kmh[0])))] - o.truth_kmh[0]
            if abs(e) > gross:
                outliers += 1
                continue
            errors.append(e)
            speeds.append(o.truth_kmh[0])
        cell.outlier_rate = outliers / len(outcomes)
        if errors:
            n = len(errors)
            cell.bias_kmh = math.fsum(errors) / n
            cell.std_kmh = math.sqrt(math.fsum((e - cell.bias_kmh) ** 2 for e in errors) / n)
            cell.rmse_kmh = _rms(errors)
            edges = np.linspace(lo, hi, spec.velocity_bins + 1)
            idx = np.clip(np.searchsorted(edges, speeds, side="right") - 1, 0, spec.velocity_bins - 1)
            per_bin = [_rms(e for e, i in zip(errors, idx) if i == b) for b in range(spec.velocity_bins)]
            per_bin = [r for r in per_bin if not math.isnan(r)]
            mean = math.fsum(per_bin) / len(per_bin)
            cell.rmse_spread_kmh = math.sqrt(math.fsum((r - mean) ** 2 for r in per_bin) / len(per_bin))
        return cell

    miss = 0.5 * (hi - lo)
    per_target: list[list[float]] = [[], []]
    resolved = outliers = 0
    for o in outcomes:
        if o.failed:
            outliers += 1
        errs = _assign(o.truth_kmh, o.estimates_kmh if not o.failed else (), miss)
        for p, e in enumerate(errs):
            per_target[p].append(float(e))
        resolved += bool(len(o.estimates_kmh) >= 2 and np.all(np.abs(errs) < RESOLVE_TOLERANCE_KMH))
    flat = per_target[0] + per_target[1]
    n = len(flat)
    cell.outlier_rate = outliers / len(outcomes)
    cell.resolved_rate = resolved / len(outcomes)
    cell.rmse_target1_kmh = _rms(per_target[0])
    cell.rmse_target2_kmh = _rms(per_target[1])
    cell.rmse_kmh = _rms(flat)
    cell.bias_kmh = math.fsum(flat) / n
    cell.std_kmh = math.sqrt(math.fsum((e - cell.bias_kmh) ** 2 for e in flat) / n)
    return cell


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _run(kind: str, spec: SweepSpec, scenario: RadarScenario) -> SweepResult:
    spec.validate(scenario)
    if kind == "resolution" and not spec.two_target:
        raise SweepSpecError("resolution sweeps need fixed_second_target_kmh and separation_grid_kmh")
    if kind == "accuracy" and spec.two_target:
        raise SweepSpecError("accuracy sweeps take a single target; drop fixed_second_target_kmh")
    seps = spec.separation_grid_kmh if kind == "resolution" else (float("nan"),)
    span_kmh = ambiguity_span(scenario) * KMH
    result = SweepResult(kind, spec, scenario.to_dict(),
                         range_fft_gain_db=10 * math.log10(range_fft_gain(scenario)))
    for sep in seps:
        for snr in spec.snr_grid_db:
            t0 = time.perf_counter()
            trials = [_Trial(kind, scenario, spec, float(snr), float(sep), i) for i in range(spec.trials_per_cell)]
            outcomes = _map(_run_trial, trials, spec.workers)
            wall = time.perf_counter() - t0
            for method in spec.methods:
                mine = [o for trial in outcomes for o in trial if o.method == method]
                result.cells.append(_aggregate(kind, spec, method, float(snr), float(sep), mine, span_kmh, wall))
    return result


def run_accuracy_sweep(spec: SweepSpec, scenario: RadarScenario) -> SweepResult:
    """RMSE, bias and spread versus SNR for one target at a uniformly drawn velocity."""
    return _run("accuracy", spec, scenario)


def run_resolution_sweep(spec: SweepSpec, scenario: RadarScenario) -> SweepResult:
    """Per-target RMSE and resolution rate versus separation and SNR for two equal targets.

    A target with no matching estimate is charged half the interval width.
    Zero separation is flagged ``degenerate`` and solved with one target's
    model order.
    """
    return _run("resolution", spec, scenario)


def crossing_snr(snr_db, rmse_kmh, level_kmh: float = 0.1, interpolate: bool = False) -> float:
    """Lowest SNR from which RMSE stays below ``level_kmh`` for the rest of the grid.

    With ``interpolate`` the crossing is placed between the last failing
    and first passing grid point by linear interpolation of log RMSE.
    Returns ``inf`` when the last grid point still fails.
    """
    snr = np.asarray(snr_db, dtype=float)
    rmse = np.asarray(rmse_kmh, dtype=float)
    order = np.argsort(snr)
    snr, rmse = snr[order], rmse[order]
    passing = np.where(np.isnan(rmse), False, rmse < level_kmh)
    if not passing[-1]:
        return float("inf")
    i = len(passing) - 1
    while i > 0 and passing[i - 1]:
        i -= 1
    if i == 0 or not interpolate:
        return float(snr[i])
    hi_r, lo_r = math.log(rmse[i - 1]), math.log(rmse[i])
    frac = (hi_r - math.log(level_kmh)) / (hi_r - lo_r)
    return float(snr[i - 1] + frac * (snr[i] - snr[i - 1]))


@dataclass
class TrackPoint:
    method: str
    swept_truth_kmh: float
    fixed_truth_kmh: float
    swept_estimate_kmh: float
    fixed_estimate_kmh: float
    num_estimates: int

    @property
    def swept_error_kmh(self) -> float:
        return self.swept_estimate_kmh - self.swept_truth_kmh


def run_track_sweep(scenario: RadarScenario, fixed_kmh: float = 10.0, start_kmh: float = 6.0,
                    stop_kmh: float = 14.0, step_kmh: float = 0.1, snr_db: float = 20.0, range_m: float = 80.0,
                    seed: int = 0, methods: Sequence[str] = METHODS,
                    interval_kmh: tuple = (-300.0, 150.0), snr_reference: str = "bin") -> list[TrackPoint]:
    """Two targets at one range, one fixed and one stepped across it, one snapshot per step.

    Each method's estimates are matched to the two truths by nearest
    assignment; a missing estimate is reported as ``nan``.
    """
    if not methods:
        raise SweepSpecError("methods is empty")
    sc = scenario.with_noise(noise_variance_for_snr(snr_db, scenario, snr_reference))
    settings = SolverSettings(search_interval_mps=(interval_kmh[0] / KMH, interval_kmh[1] / KMH))
    K = sc.ddm.num_tx
    n_steps = int(round((stop_kmh - start_kmh) / step_kmh)) + 1
    points = []
    for i in range(n_steps):
        swept = round(start_kmh + i * step_kmh, 10)
        rng = _trial_rng(seed, i)
        tset = TargetSet(tuple(Target(range_m, v / KMH, 0.0, complex(np.exp(2j * np.pi * rng.random())))
                               for v in (fixed_kmh, swept)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cube = synthesize_cube(sc, tset, int(rng.integers(2 ** 63)))
        snap = select_detection_bin(range_compress(cube))
        for method in methods:
            try:
                if method == "jdear":
                    rep = _jdear(snap, settings, K if swept == fixed_kmh else 2 * K, K)
                else:
                    rep = reference_pipeline(snap, sc, 2, settings, allow_partial=True)
                est = tuple(float(v) for v in rep.velocities_kmh)
            except _SOLVER_FAILURES:
                est = ()
            truth = (swept, fixed_kmh)
            errs = _assign(truth, est, float("nan"))
            points.append(TrackPoint(method, swept, fixed_kmh, swept + errs[0], fixed_kmh + errs[1], len(est)))
    return points


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_manifest(spec: SweepSpec, scenario: RadarScenario, kind: str = "accuracy") -> dict:
    """Everything needed to repeat a sweep exactly."""
    body = {"kind": kind, "spec": spec.to_dict(), "scenario": scenario.to_dict()}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return {**body, "seed": spec.seed, "code_version": code_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version(), "digest": digest}


def rerun_from_manifest(manifest: dict) -> SweepResult:
    spec = SweepSpec.from_dict(manifest["spec"])
    scenario = RadarScenario.from_dict(manifest["scenario"])
    runner = {"accuracy": run_accuracy_sweep, "resolution": run_resolution_sweep}[manifest["kind"]]
    return runner(spec, scenario)


CSV_COLUMNS = ("method", "snr_db", "separation_kmh", "rmse_kmh", "bias_kmh", "std_kmh", "rmse_spread_kmh",
               "outlier_rate", "resolved_rate", "rmse_target1_kmh", "rmse_target2_kmh", "mean_iterations",
               "trials", "degenerate")
TRACK_COLUMNS = ("method", "swept_truth_kmh", "fixed_truth_kmh", "swept_estimate_kmh", "fixed_estimate_kmh",
                 "swept_error_kmh", "num_estimates")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _header_block(meta: dict) -> str:
    return "".join(f"# {line}\n" for line in json.dumps(meta, sort_keys=True, indent=1).splitlines())


def format_results(r: SweepResult) -> str:
    """Long-format CSV text, one row per method and cell, after a ``#`` header block.

    Wall time is left out so that repeated runs produce identical bytes.
    """
    meta = {"kind": r.kind, "spec": r.spec.to_dict(), "scenario": r.scenario, "seed": r.spec.seed,
            "code_version": code_version(), "range_fft_gain_db": r.range_fft_gain_db,
            "snr_reference": r.spec.snr_reference}
    buf = io.StringIO()
    buf.write(_header_block(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in r.cells:
        w.writerow([_fmt(getattr(c, k)) for k in CSV_COLUMNS])
    return buf.getvalue()


def emit_results(r: SweepResult, path) -> None:
    try:
        Path(path).write_text(format_results(r))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def emit_track(points: Sequence[TrackPoint], path, meta: Optional[dict] = None) -> None:
    buf = io.StringIO()
    buf.write(_header_block({"kind": "track", "code_version": code_version(), **(meta or {})}))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACK_COLUMNS)
    for p in points:
        row = {**asdict(p), "swept_error_kmh": p.swept_error_kmh}
        w.writerow([_fmt(row[k]) for k in TRACK_COLUMNS])
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> tuple[dict, list[dict]]:
    """Header metadata and data rows of a CSV written by :func:`emit_results`."""
    lines = Path(path).read_text().splitlines()
    head = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return json.loads("\n".join(head)), list(csv.DictReader(body))


def check_thresholds(r: SweepResult) -> list[str]:
    """Violations of the thresholds embedded in the sweep spec, as readable strings."""
    out = []
    for th in r.spec.thresholds:
        method, metric = th["method"], th["metric"]
        sep = th.get("separation_kmh")
        if metric == "crossing_snr_db":
            snrs, rmse = r.series(method, "rmse_kmh", sep)
            values = [crossing_snr(snrs, rmse, th.get("level_kmh", 0.1), th.get("interpolate", False))]
        else:
            values = [getattr(c, metric) for c in r.cells if c.method == method
                      and ("snr_db" not in th or c.snr_db == th["snr_db"])
                      and (sep is None or c.separation_kmh == sep)]
            if not values:
                out.append(f"{method} {metric}: no cell matches {th}")
                continue
        for v in values:
            if "max" in th and not v <= th["max"]:
                out.append(f"{method} {metric} = {v:.6g} exceeds {th['max']:g} ({th})")
            if "min" in th and not v >= th["min"]:
                out.append(f"{method} {metric} = {v:.6g} is below {th['min']:g} ({th})")
    return out


def with_workers(spec: SweepSpec, workers: int) -> SweepSpec:
    return replace(spec, workers=workers)
