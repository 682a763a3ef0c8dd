"""Command-line entry point ``chirpjoint``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from chirpjoint import harness
from chirpjoint.cubefile import load_cube, store_cube
from chirpjoint.hankel import HankelParams, estimate_subspace, stack_blocks
from chirpjoint.jdear import SolverSettings, solve
from chirpjoint.reference import reference_pipeline
from chirpjoint.scenario import load_scenario, paper_scenario
from chirpjoint.synth import TargetSet, noise_variance_for_snr, range_compress, select_detection_bin, synthesize_cube

REPORT_COLUMNS = ("target_id", "velocity_kmh", "doppler_hz", "residual", "coherence", "converged")


def _scenario(args):
    return load_scenario(args.scenario) if args.scenario else paper_scenario()


def _load_targets(path) -> TargetSet:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["targets"]
    return TargetSet.from_list(data)


def _snapshot(args):
    sc = _scenario(args)
    cube = load_cube(args.cube, sc)
    if args.bin == "auto":
        return select_detection_bin(range_compress(cube))
    return range_compress(cube, bins=[int(args.bin)])[0]


def cmd_synth(args) -> int:
    sc = _scenario(args)
    if args.snr_db is not None:
        sc = sc.with_noise(noise_variance_for_snr(args.snr_db, sc, args.snr_reference))
    cube = synthesize_cube(sc, _load_targets(args.targets), args.seed)
    store_cube(cube, args.out)
    return 0


def cmd_svd(args) -> int:
    snap = _snapshot(args)
    hp = HankelParams.for_length(snap.vectors.shape[1], args.q)
    sub = estimate_subspace(stack_blocks(snap, hp), args.order, args.criterion)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["index", "singular_value", "in_signal_subspace"])
    for i, s in enumerate(sub.singular_values):
        w.writerow([i, repr(float(s)), int(i < sub.model_order)])
    print(f"# bin={snap.bin_index} model_order={sub.model_order} criterion={sub.order_criterion}",
          file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    snap = _snapshot(args)
    lo, hi = args.interval_kmh
    settings = SolverSettings(search_interval_mps=(lo / 3.6, hi / 3.6), order_criterion=args.criterion,
                              jacobian=args.jacobian)
    if args.method == "jdear":
        rep = solve(snap, settings, order=args.order)
    else:
        rep = reference_pipeline(snap, num_targets=args.num_targets, settings=settings)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for i, t in enumerate(rep.targets):
            w.writerow([i, repr(t.velocity_kmh), repr(t.doppler_hz), repr(t.residual_cost),
                        repr(t.coherence), int(rep.converged)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_bench(args) -> int:
    sc = _scenario(args)
    if args.kind == "track":
        points = harness.run_track_sweep(sc, snr_db=args.snr_db, seed=args.seed)
        harness.emit_track(points, args.out, {"scenario": sc.to_dict(), "snr_db": args.snr_db, "seed": args.seed})
        return 0
    spec = harness.load_sweep_spec(args.spec) if args.spec else harness.SweepSpec()
    if args.workers:
        spec = harness.with_workers(spec, args.workers)
    runner = harness.run_accuracy_sweep if args.kind == "accuracy" else harness.run_resolution_sweep
    result = runner(spec, sc)
    harness.emit_results(result, args.out)
    manifest = harness.run_manifest(spec, sc, args.kind)
    Path(str(args.out) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    violations = harness.check_thresholds(result)
    for v in violations:
        print(f"threshold violated: {v}", file=sys.stderr)
    return 1 if violations else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chirpjoint", description="Joint multi-sequence FMCW velocity estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a datacube")
    s.add_argument("--scenario")
    s.add_argument("--targets", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--snr-db", type=float, help="override the scenario noise variance")
    s.add_argument("--snr-reference", choices=("sample", "bin"), default="bin")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    for name, func in (("svd", cmd_svd), ("estimate", cmd_estimate)):
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="scenario JSON the cube was made with (default: built-in)")
        s.add_argument("--cube", required=True)
        s.add_argument("--bin", default="auto", help="range bin index or 'auto'")
        s.add_argument("--order", type=int)
        s.add_argument("--criterion", choices=("mdl", "aic"), default="mdl")
        s.set_defaults(func=func)
        if name == "svd":
            s.add_argument("--q", type=int, help="Hankel Q (default M // 3)")
        else:
            s.add_argument("--method", choices=("jdear", "reference"), default="jdear")
            s.add_argument("--num-targets", type=int, default=1, help="reference method only")
            s.add_argument("--interval-kmh", type=float, nargs=2, default=(-300.0, 150.0))
            s.add_argument("--jacobian", choices=("numerical", "varpro"), default="numerical")
            s.add_argument("--out")

    s = sub.add_parser("bench", help="Monte Carlo benchmarks")
    s.add_argument("kind", choices=("accuracy", "resolution", "track"))
    s.add_argument("--scenario")
    s.add_argument("--spec", help="sweep spec JSON")
    s.add_argument("--workers", type=int)
    s.add_argument("--snr-db", type=float, default=20.0, help="track sweep only")
    s.add_argument("--seed", type=int, default=0, help="track sweep only")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
