"""End-to-end pipelines: truth simulation, quantum and classical estimation, metrics.

A run draws a truth trajectory and its measurement record, feeds the record
to the conditional SME and to the particle filter, and reports

* the error standard deviations of both estimators against the truth after
  the transient, and
* the KL divergence of the particle histogram from the renormalised
  positive part of the conditional Wigner function at every snapshot after
  the transient.

Configuration files are INI files with the sections ``model``, ``filter``,
``run``, ``grid``, ``sweep`` and ``output``; see ``parse_config``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from ._core import BACKEND
from .classical import FilterLog, run_particle_filter
from .errors import ConfigError, DegenerateEnsembleError, InvalidParamsError, NumericalInvariantError
from .params import TRANSIENT_CYCLES, ModelParams, auto_dim, cycle_steps
from .phase_space import (
    KL_FLOOR_MASS,
    PhaseSpaceGrid,
    ensemble_field,
    kl_divergence,
    positive_part,
    trajectory_error_stats,
    wigner_many,
)
from .quantum import MeasurementRecord, TrajectoryLog, estimate_conditional, simulate_truth

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "TrackingResult",
    "parse_config",
    "config_from_dict",
    "point_seed",
    "stage_seeds",
    "run_tracking",
    "KLSeries",
    "kl_series",
    "run_kl_sweep",
]

_SCHEMA = {
    "model": {"k", "eta", "gamma", "damping", "kbt", "alpha", "omega", "dt", "dim"},
    "filter": {"particles"},
    "run": {"cycles", "transient_cycles", "seed", "snapshot_every"},
    "grid": {"x_min", "x_max", "p_min", "p_max", "n_x", "n_p"},
    "sweep": {"kbt", "gamma", "eta"},
    "output": {"dir", "parallel"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run or a sweep needs.

    With ``auto_dim`` the truncation follows the temperature of each sweep
    point (see :func:`qtrack.params.auto_dim`) and ``model.dim`` is ignored.
    Sweep axes default to the single value in ``model``.
    """

    model: ModelParams = ModelParams()
    auto_dim: bool = True
    particles: int = 1000
    cycles: float = 200.0
    transient_cycles: float = TRANSIENT_CYCLES
    seed: int = 0
    snapshot_every: int = 1000
    grid: PhaseSpaceGrid = PhaseSpaceGrid()
    sweep_kbt: tuple = ()
    sweep_gamma: tuple = ()
    sweep_eta: tuple = ()
    out_dir: str = "runs"
    parallel: int = 1

    def __post_init__(self):
        for axis in ("sweep_kbt", "sweep_gamma", "sweep_eta"):
            object.__setattr__(self, axis, tuple(float(v) for v in getattr(self, axis)))
        bad = self.violations()
        if bad:
            raise ConfigError(bad)

    def axes(self) -> tuple[tuple, tuple, tuple]:
        return (
            self.sweep_kbt or (self.model.kbt,),
            self.sweep_gamma or (self.model.gamma,),
            self.sweep_eta or (self.model.eta,),
        )

    def violations(self) -> list[str]:
        out = []
        if int(self.particles) != self.particles or self.particles < 2:
            out.append(f"filter.particles: N ≥ 2 violated (got {self.particles})")
        if not self.cycles >= 0:
            out.append(f"run.cycles ≥ 0 violated (got {self.cycles})")
        if not self.transient_cycles >= 0:
            out.append(f"run.transient_cycles ≥ 0 violated (got {self.transient_cycles})")
        if int(self.snapshot_every) != self.snapshot_every or self.snapshot_every < 1:
            out.append(f"run.snapshot_every ≥ 1 violated (got {self.snapshot_every})")
        if int(self.seed) != self.seed or self.seed < 0:
            out.append(f"run.seed must be a non-negative integer (got {self.seed})")
        if int(self.parallel) != self.parallel or self.parallel < 1:
            out.append(f"output.parallel ≥ 1 violated (got {self.parallel})")
        for kbt, gamma, eta in itertools.product(*self.axes()):
            try:
                self.point_params(kbt, gamma, eta)
            except InvalidParamsError as exc:
                out.extend(f"sweep point (kbt={kbt}, gamma={gamma}, eta={eta}): {v}" for v in exc.violations)
        return out

    @property
    def steps(self) -> int:
        return int(round(self.cycles * cycle_steps(self.model.dt)))

    def point_params(self, kbt: float, gamma: float, eta: float) -> ModelParams:
        dim = auto_dim(kbt) if self.auto_dim else self.model.dim
        return dataclasses.replace(self.model, kbt=kbt, gamma=gamma, eta=eta, dim=dim)

    def points(self) -> list[ModelParams]:
        return [self.point_params(*pt) for pt in itertools.product(*self.axes())]

    def to_dict(self) -> dict:
        """Result-relevant settings; output location and parallelism are excluded."""
        return {
            "model": self.model.to_dict() | {"dim": "auto" if self.auto_dim else self.model.dim},
            "particles": int(self.particles),
            "cycles": float(self.cycles),
            "transient_cycles": float(self.transient_cycles),
            "seed": int(self.seed),
            "snapshot_every": int(self.snapshot_every),
            "grid": self.grid.to_dict(),
            "sweep": {"kbt": list(self.sweep_kbt), "gamma": list(self.sweep_gamma), "eta": list(self.sweep_eta)},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_value(text: str, kind):
    text = text.strip()
    if kind is int:
        value = float(text)
        if value != int(value):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(value)
    return kind(text)


def config_from_dict(sections: dict) -> ExperimentConfig:
    """Build a config from ``{section: {key: text}}``, collecting every violation."""
    bad = []
    for sec, keys in sections.items():
        if sec not in _SCHEMA:
            bad.append(f"unknown section [{sec}]")
            continue
        for key in keys:
            if key not in _SCHEMA[sec]:
                bad.append(f"unknown key {sec}.{key}")

    def get(sec, key, kind, default):
        text = sections.get(sec, {}).get(key)
        if text is None:
            return default
        try:
            return _parse_value(text, kind)
        except ValueError:
            bad.append(f"{sec}.{key}: cannot parse {text!r} as {kind.__name__}")
            return default

    def get_list(key):
        text = sections.get("sweep", {}).get(key)
        if text is None:
            return ()
        items = [t for t in text.replace(";", ",").split(",") if t.strip()]
        if not items:
            bad.append(f"sweep.{key}: axis is empty")
            return ()
        try:
            return tuple(float(t) for t in items)
        except ValueError:
            bad.append(f"sweep.{key}: cannot parse {text!r} as a list of numbers")
            return ()

    defaults = ModelParams()
    model_kwargs = {}
    for key in ("k", "eta", "gamma", "damping", "kbt", "alpha", "omega", "dt"):
        model_kwargs[key] = get("model", key, float, getattr(defaults, key))
    dim_text = sections.get("model", {}).get("dim", "auto").strip()
    use_auto = dim_text.lower() == "auto"
    if use_auto:
        model_kwargs["dim"] = auto_dim(model_kwargs["kbt"]) if model_kwargs["kbt"] >= 0 else defaults.dim
    else:
        model_kwargs["dim"] = get("model", "dim", int, defaults.dim)
    try:
        model = ModelParams(**model_kwargs)
    except InvalidParamsError as exc:
        bad.extend(f"model: {v}" for v in exc.violations)
        model = None

    grid_defaults = PhaseSpaceGrid()
    grid_kwargs = {}
    for key in ("x_min", "x_max", "p_min", "p_max"):
        grid_kwargs[key] = get("grid", key, float, getattr(grid_defaults, key))
    for key in ("n_x", "n_p"):
        grid_kwargs[key] = get("grid", key, int, getattr(grid_defaults, key))
    try:
        grid = PhaseSpaceGrid(**grid_kwargs)
    except ValueError as exc:
        bad.append(f"grid: {exc}")
        grid = None

    rest = dict(
        particles=get("filter", "particles", int, 1000),
        cycles=get("run", "cycles", float, 200.0),
        transient_cycles=get("run", "transient_cycles", float, TRANSIENT_CYCLES),
        seed=get("run", "seed", int, 0),
        snapshot_every=get("run", "snapshot_every", int, 1000),
        sweep_kbt=get_list("kbt"),
        sweep_gamma=get_list("gamma"),
        sweep_eta=get_list("eta"),
        out_dir=sections.get("output", {}).get("dir", "runs").strip(),
        parallel=get("output", "parallel", int, 1),
    )
    if model is None or grid is None:
        raise ConfigError(bad)
    try:
        cfg = ExperimentConfig(model=model, auto_dim=use_auto, grid=grid, **rest)
    except ConfigError as exc:
        raise ConfigError(bad + exc.violations) from None
    if bad:
        raise ConfigError(bad)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read and validate an INI configuration file.

    Raises :class:`ConfigError` listing every problem found, including
    unknown sections or keys, unparsable values, empty sweep axes and
    parameter invariants violated at any sweep point.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config file: {exc}"]) from None
    sections = {sec: dict(parser.items(sec)) for sec in parser.sections()}
    return config_from_dict(sections)


def point_seed(master: int, params: ModelParams) -> np.random.SeedSequence:
    """Seed for one sweep point, mixed from the master seed and the point's coordinates.

    Depending on the coordinates rather than the position in the sweep keeps
    each point's result independent of sweep order and lets any point be
    re-run alone.
    """
    key = json.dumps([repr(float(params.kbt)), repr(float(params.gamma)), repr(float(params.eta))])
    words = np.frombuffer(hashlib.sha256(key.encode()).digest()[:16], dtype="<u4")
    return np.random.SeedSequence([int(master), *map(int, words)])


def stage_seeds(config: "ExperimentConfig", params: ModelParams, seed=None):
    """Seeds of the truth simulation and of the particle filter for one point."""
    seq = point_seed(config.seed, params) if seed is None else np.random.SeedSequence(seed)
    truth, pf = seq.spawn(2)
    return truth, pf


@dataclass
class RunManifest:
    """Provenance of one run; written once, after all other outputs."""

    config_hash: str
    seed: int
    params: dict
    timings: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    status: str = "ok"
    error: str = ""
    backend: str = BACKEND
    version: str = __version__

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        io.write_json(dataclasses.asdict(self), path)
        return path


@dataclass
class KLSeries:
    """KL divergences at shared snapshots, with grid diagnostics per snapshot."""

    steps: np.ndarray
    kl: np.ndarray
    out_of_bounds_mass: np.ndarray
    wigner_residual: np.ndarray


@dataclass
class TrackingResult:
    params: ModelParams
    record: MeasurementRecord
    truth: TrajectoryLog
    conditional: TrajectoryLog
    classical: FilterLog
    stats: dict
    kl: KLSeries
    manifest: RunManifest


def kl_series(conditional: TrajectoryLog, classical: FilterLog, grid: PhaseSpaceGrid, first_step: int = 0) -> KLSeries:
    """KL(particle histogram || positive Wigner part) at shared snapshots from ``first_step`` on.

    The histogram is renormalised over the grid. The particle weight outside
    the grid and the normalisation residual of each Wigner field are
    returned alongside rather than raised as warnings.
    """
    steps_q = {int(s): i for i, s in enumerate(classical.snapshot_steps)}
    pairs = [
        (int(s), i, steps_q[int(s)])
        for i, s in enumerate(conditional.snapshot_steps)
        if s >= first_step and int(s) in steps_q
    ]
    kls, lost, resid = [], [], []
    batch = 16
    for b0 in range(0, len(pairs), batch):
        chunk = pairs[b0 : b0 + batch]
        fields = wigner_many([conditional.snapshots[i] for _, i, _ in chunk], grid, check=False)
        for (_, _, j), wf in zip(chunk, fields):
            x, p, w = classical.snapshots[j]
            hist = ensemble_field(x, p, w / w.sum(), grid)
            lost.append(hist.meta["out_of_bounds_mass"])
            resid.append(wf.meta["normalization_residual"])
            kls.append(kl_divergence(hist.normalized(), positive_part(wf)))
    return KLSeries(np.array([s for s, _, _ in pairs], dtype=int), np.array(kls), np.array(lost), np.array(resid))


def _stats(truth, conditional, classical, transient, series: KLSeries) -> dict:
    qx, qp = trajectory_error_stats(truth, conditional, transient)
    cx, cp = trajectory_error_stats(truth, classical, transient)
    tx, tp = trajectory_error_stats(conditional, classical, transient)
    kl = series.kl
    return {
        "quantum_sigma_x": qx,
        "quantum_sigma_p": qp,
        "classical_sigma_x": cx,
        "classical_sigma_p": cp,
        "tracking_sigma_x": tx,
        "tracking_sigma_p": tp,
        "kl_mean": float(kl.mean()) if kl.size else float("nan"),
        "kl_std": float(kl.std()) if kl.size else float("nan"),
        "kl_count": int(kl.size),
        "kl_floor_mass": KL_FLOOR_MASS,
        "max_out_of_bounds_mass": float(np.max(series.out_of_bounds_mass)) if kl.size else 0.0,
        "max_wigner_residual": float(np.max(np.abs(series.wigner_residual))) if kl.size else 0.0,
        "final_conditional_purity": float(conditional.purity[-1]),
    }


def run_tracking(
    config: ExperimentConfig,
    params: ModelParams | None = None,
    seed: np.random.SeedSequence | int | None = None,
    out_dir=None,
    compute_kl: bool = True,
    write: bool = True,
) -> TrackingResult:
    """Truth, conditional SME and particle filter on one record, plus metrics.

    ``params`` defaults to the first sweep point and ``seed`` to the seed
    derived for it from the master seed. Outputs go to ``out_dir`` (default
    ``config.out_dir``) unless ``write`` is false. A numerical-invariant
    failure in any stage writes a manifest with status ``failed`` and
    re-raises.
    """
    params = config.points()[0] if params is None else params
    seed_truth, seed_pf = stage_seeds(config, params, seed)
    out = Path(config.out_dir if out_dir is None else out_dir)
    manifest = RunManifest(config_hash=config.digest(), seed=int(config.seed), params=params.to_dict())
    manifest.violations = {"density_matrix": 0, "degenerate_ensemble": 0}
    if write:
        out.mkdir(parents=True, exist_ok=True)
    snap = config.snapshot_every
    transient_steps = int(round(config.transient_cycles * cycle_steps(params.dt)))

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except (NumericalInvariantError, DegenerateEnsembleError) as exc:
            key = "degenerate_ensemble" if isinstance(exc, DegenerateEnsembleError) else "density_matrix"
            manifest.violations[key] += 1
            manifest.status = "failed"
            manifest.error = f"{name}: {exc}"
            if write:
                manifest.write(out)
            raise
        finally:
            manifest.timings[name] = time.perf_counter() - t0

    truth, record = stage(
        "truth", lambda: simulate_truth(params, steps=config.steps, rng_seed=seed_truth, snapshot_every=snap)
    )
    record.seed = int(config.seed)
    conditional = stage("conditional", lambda: estimate_conditional(record, params, snapshot_every=snap))
    classical = stage(
        "particle_filter",
        lambda: run_particle_filter(record, params, config.particles, seed=seed_pf, snapshot_every=snap),
    )
    if compute_kl:
        series = stage("kl", lambda: kl_series(conditional, classical, config.grid, first_step=transient_steps))
    else:
        series = KLSeries(np.zeros(0, dtype=int), np.zeros(0), np.zeros(0), np.zeros(0))
    stats = _stats(truth, conditional, classical, config.transient_cycles, series)

    if write:
        t0 = time.perf_counter()
        files = {
            "record.bin": lambda p: io.write_record_binary(record, p),
            "truth.csv": lambda p: io.write_log_csv(truth, p, "truth"),
            "conditional.csv": lambda p: io.write_log_csv(conditional, p, "conditional"),
            "classical.csv": lambda p: io.write_log_csv(classical, p, "classical"),
            "kl.csv": lambda p: io.write_table_csv(p, {"kind": "kl_series"}, ["step", "kl"],
                                              np.column_stack([series.steps, series.kl])),
            "metrics.json": lambda p: io.write_json(
                {"config_hash": manifest.config_hash, "params": params.to_dict(), **stats}, p
            ),
        }
        if classical.snapshots:
            x, p_, w = classical.snapshots[-1]
            files["ensemble_final.csv"] = lambda p: io.write_ensemble_csv(
                x, p_, w, p, int(classical.snapshot_steps[-1]))
        if conditional.snapshots:
            files["wigner_final.bin"] = lambda p: io.write_field_binary(
                wigner_many([conditional.snapshots[-1]], config.grid, check=False)[0], p)
        for name, writer in files.items():
            writer(out / name)
        manifest.files = sorted(files) + ["manifest.json"]
        manifest.timings["write"] = time.perf_counter() - t0
        manifest.write(out)

    return TrackingResult(params, record, truth, conditional, classical, stats, series, manifest)


def _point_dir(base: Path, params: ModelParams) -> Path:
    return base / f"kbt{params.kbt:g}_gamma{params.gamma:g}_eta{params.eta:g}"


def _run_point(args):
    config, params, out_dir = args
    res = run_tracking(config, params, out_dir=out_dir)
    return {"kbt": params.kbt, "gamma": params.gamma, "eta": params.eta, "dim": params.dim, **res.stats}


_TABLE_COLUMNS = [
    "kbt", "gamma", "eta", "dim", "kl_mean", "kl_std", "kl_count",
    "quantum_sigma_x", "quantum_sigma_p", "classical_sigma_x", "classical_sigma_p",
    "tracking_sigma_x", "tracking_sigma_p",
]


def run_kl_sweep(config: ExperimentConfig, out_dir=None, parallel: int | None = None) -> list[dict]:
    """Run every sweep point and tabulate mean and std of KL and the error statistics.

    Points run in a process pool of ``parallel`` workers. Each point writes
    its own subdirectory; the table goes to ``sweep.csv`` and ``sweep.json``
    next to a sweep-level manifest.
    """
    base = Path(config.out_dir if out_dir is None else out_dir)
    base.mkdir(parents=True, exist_ok=True)
    parallel = config.parallel if parallel is None else parallel
    jobs = [(config, p, _point_dir(base, p)) for p in config.points()]
    t0 = time.perf_counter()
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(job) for job in jobs]
    table = np.array([[float(r[c]) for c in _TABLE_COLUMNS] for r in rows]).reshape(len(rows), len(_TABLE_COLUMNS))
    io.write_table_csv(base / "sweep.csv", {"kind": "kl_sweep", "config_hash": config.digest()}, _TABLE_COLUMNS, table)
    io.write_json({"config_hash": config.digest(), "points": rows}, base / "sweep.json")
    manifest = RunManifest(
        config_hash=config.digest(),
        seed=int(config.seed),
        params=config.model.to_dict(),
        timings={"sweep": time.perf_counter() - t0},
        files=["sweep.csv", "sweep.json"] + [str(j[2].relative_to(base)) for j in jobs] + ["manifest.json"],
    )
    manifest.write(base)
    return rows
