"""Command-line interface.

Subcommands:

* ``simulate``  truth trajectory and measurement record
* ``estimate``  conditional SME along a record file
* ``track``     particle filter along a record file
* ``compare``   error statistics between two logs or KL between two fields
* ``sweep``     tracking runs and KL statistics over the configured sweep grid

Exit codes: 0 success, 2 configuration or input error, 3 numerical-invariant
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from . import io
from .classical import run_particle_filter
from .errors import (
    ConfigError,
    DegenerateEnsembleError,
    NonFiniteIncrementError,
    NumericalInvariantError,
    RecordMismatchError,
)
from .experiments import ExperimentConfig, RunManifest, parse_config, run_kl_sweep, stage_seeds
from .params import TRANSIENT_CYCLES
from .phase_space import kl_divergence, trajectory_error_stats
from .quantum import estimate_conditional, simulate_truth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = args.out
    if getattr(args, "snapshot_every", None) is not None:
        changes["snapshot_every"] = args.snapshot_every
    if getattr(args, "parallel", None) is not None:
        changes["parallel"] = args.parallel
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _read_record(path):
    try:
        return io.read_record(path)
    except FileNotFoundError:
        raise ConfigError([f"record file not found: {path}"]) from None
    except (ValueError, KeyError) as exc:
        raise ConfigError([f"unreadable record file {path}: {exc}"]) from None


def _finish(manifest: RunManifest, out: Path, files: list[str]):
    manifest.files = sorted(files) + ["manifest.json"]
    manifest.write(out)
    print(out / "manifest.json")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    params = cfg.points()[0]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed_truth, _ = stage_seeds(cfg, params)
    manifest = RunManifest(cfg.digest(), int(cfg.seed), params.to_dict())
    t0 = time.perf_counter()
    log, record = simulate_truth(params, steps=cfg.steps, rng_seed=seed_truth, snapshot_every=cfg.snapshot_every)
    record.seed = int(cfg.seed)
    manifest.timings["truth"] = time.perf_counter() - t0
    io.write_record_binary(record, out / "record.bin")
    io.write_record_csv(record, out / "record.csv")
    io.write_log_csv(log, out / "truth.csv", "truth")
    _finish(manifest, out, ["record.bin", "record.csv", "truth.csv"])
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    params = cfg.points()[0]
    record = _read_record(args.record)
    if record.params_hash and record.params_hash != params.digest():
        print(f"warning: record was generated with parameters {record.params_hash}, "
              f"estimating with {params.digest()}", file=sys.stderr)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.digest(), int(cfg.seed), params.to_dict())
    t0 = time.perf_counter()
    log = estimate_conditional(record, params, snapshot_every=cfg.snapshot_every)
    manifest.timings["conditional"] = time.perf_counter() - t0
    io.write_log_csv(log, out / "conditional.csv", "conditional")
    _finish(manifest, out, ["conditional.csv"])
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _load_config(args)
    params = cfg.points()[0]
    record = _read_record(args.record)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, seed_pf = stage_seeds(cfg, params)
    manifest = RunManifest(cfg.digest(), int(cfg.seed), params.to_dict())
    t0 = time.perf_counter()
    log = run_particle_filter(record, params, cfg.particles, seed=seed_pf, snapshot_every=cfg.snapshot_every)
    manifest.timings["particle_filter"] = time.perf_counter() - t0
    files = ["classical.csv"]
    io.write_log_csv(log, out / "classical.csv", "classical")
    if args.ensembles:
        ens_dir = out / "ensembles"
        ens_dir.mkdir(exist_ok=True)
        for step, (x, p, w) in zip(log.snapshot_steps, log.snapshots):
            name = f"ensembles/step{int(step):09d}.csv"
            io.write_ensemble_csv(x, p, w, out / name, int(step))
            files.append(name)
    _finish(manifest, out, files)
    return EXIT_OK


def cmd_compare(args) -> int:
    result = {}
    if args.logs:
        try:
            truth, est = (io.read_log_csv(p) for p in args.logs)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError([f"cannot read logs: {exc}"]) from None
        sx, sp = trajectory_error_stats(truth, est, args.transient)
        result.update({"sigma_x": sx, "sigma_p": sp, "transient_cycles": args.transient})
    if args.fields:
        try:
            f1, f2 = (io.read_field_binary(p) if not str(p).endswith(".csv") else io.read_field_csv(p)
                      for p in args.fields)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError([f"cannot read fields: {exc}"]) from None
        result["kl"] = kl_divergence(f1.normalized(), f2.normalized())
    if not result:
        raise ConfigError(["compare needs --logs and/or --fields"])
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(result, Path(args.out) / "compare.json")
    for key in sorted(result):
        print(f"{key} = {result[key]!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = run_kl_sweep(cfg)
    for r in rows:
        print(f"kbt={r['kbt']:g} gamma={r['gamma']:g} eta={r['eta']:g}  "
              f"kl={r['kl_mean']:.4f}±{r['kl_std']:.4f}  "
              f"sigma_x quantum={r['quantum_sigma_x']:.4f} classical={r['classical_sigma_x']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtrack", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, snapshots=True):
        p.add_argument("--config", type=Path, help="INI configuration file (defaults apply without one)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        if seed:
            p.add_argument("--seed", type=int, help="master seed, a non-negative integer below 2**64")
        if snapshots:
            p.add_argument("--snapshot-every", type=int, dest="snapshot_every", help="steps between snapshots")

    p = sub.add_parser("simulate", help="simulate the truth trajectory and its measurement record")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run the conditional SME along a record")
    common(p, seed=False)
    p.add_argument("--record", required=True, type=Path, help="record file (.csv or binary)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("track", help="run the particle filter along a record")
    common(p)
    p.add_argument("--record", required=True, type=Path, help="record file (.csv or binary)")
    p.add_argument("--ensembles", action="store_true", help="write an ensemble CSV at every snapshot")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("compare", help="error statistics of two logs or KL divergence of two fields")
    p.add_argument("--logs", nargs=2, metavar=("TRUTH", "ESTIMATE"), help="trajectory log CSV files")
    p.add_argument("--fields", nargs=2, metavar=("P1", "P2"), help="field files; computes KL(P1 || P2)")
    p.add_argument("--transient", type=float, default=TRANSIENT_CYCLES, help="cycles discarded from the logs")
    p.add_argument("--out", help="directory for compare.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="tracking runs and KL statistics over the sweep grid")
    common(p)
    p.add_argument("--parallel", type=int, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("config error: --seed must be in [0, 2**64)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, RecordMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInvariantError, DegenerateEnsembleError, NonFiniteIncrementError) as exc:
        print(f"numerical invariant failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
