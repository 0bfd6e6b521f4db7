"""Command-line entry point: simulate, fuse, evaluate, run, compare, demo."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..fusion import read_filter_csv
from ..sim.trajectory import read_truth_csv
from .experiment import (ConfigError, ExperimentConfig, _json_dump, compare, filter_variants, fuse,
                         load_inputs, run_experiment, sbr_variants, simulate_from_config, write_manifest)
from .metrics import compute_error_report


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="YAML config file or bundled preset name")
    p.add_argument("--seed", type=int, help="override the config seed (non-negative integer)")
    p.add_argument("--out", required=True, help="output directory")


def _ablation(p):
    p.add_argument("--filter", choices=("ukf", "ekf"), help="override filter.kind")
    p.add_argument("--sbr", choices=("on", "off"), help="override filter.use_sbr")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "filter", None):
        over["filter.kind"] = args.filter
    if getattr(args, "sbr", None):
        over["filter.use_sbr"] = args.sbr == "on"
    return cfg.with_overrides(**over) if over else cfg


def cmd_simulate(args):
    cfg = _load(args)
    out = Path(args.out)
    sim = simulate_from_config(cfg, cfg.scene())
    files = sim.write(out)
    write_manifest(out, cfg, files)
    print(f"wrote {', '.join(p.name for p in files.values())} to {out}")


def cmd_fuse(args):
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(args.inputs, float(cfg["sensors"]["odo_quantization"]))
    est = fuse(cfg, cfg.scene(), inputs)
    path = out / "estimate.csv"
    est.write_csv(path)
    write_manifest(out, cfg, {"estimate": path}, inputs=args.inputs)
    print(f"wrote {path}  {json.dumps(est.stats)}")


def cmd_evaluate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t, x, source, _ = read_filter_csv(args.estimate)
    tt, states = read_truth_csv(args.truth)
    rep = compute_error_report(t, x[:, :3], tt, states[:, :3])
    rep.write_errors_csv(out / "errors.csv")
    rep.write_cdf_csv(out / "cdf.csv")
    _json_dump({"stats": rep.summary()}, out / "report.json")
    if not args.no_figures:
        from . import plotting

        plotting.plot_cdf({Path(args.estimate).stem: rep}, out / "error_cdf.png")
        plotting.plot_error_series(rep, source, out / "error_series.png")
    print(json.dumps(rep.summary(), indent=2))


def cmd_run(args):
    cfg = _load(args)
    res = run_experiment(cfg, args.out)
    print(json.dumps(res.report.summary(), indent=2))


def cmd_compare(args):
    configs = [ExperimentConfig.load(c) for c in args.config]
    if args.seed is not None:
        configs = [c.with_overrides(seed=args.seed) for c in configs]
    if args.vary == "filter":
        configs = [v for c in configs for v in filter_variants(c)]
    elif args.vary == "sbr":
        configs = [v for c in configs for v in sbr_variants(c)]
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configurations (repeat --config or use --vary)")
    table, _ = compare(configs, args.out, jobs=args.jobs)
    print(table.to_text())


def cmd_demo(args):
    out = Path(args.out)
    for preset in ("low_outage", "high_outage"):
        cfg = ExperimentConfig.load(preset)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        for vary, variants in (("filter", filter_variants), ("sbr", sbr_variants)):
            table, _ = compare(variants(cfg), out / preset / f"vary_{vary}", jobs=args.jobs)
            print(f"== {preset}: {vary} ==")
            print(table.to_text())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmwave-fusion", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate truth and noisy IMU/odometer/5G CSVs")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fuse", help="run the filter on a directory of sensor CSVs")
    _common(p)
    _ablation(p)
    p.add_argument("--inputs", required=True, help="directory written by 'simulate'")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="error statistics of an estimate CSV against a truth CSV")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="simulate, fuse and evaluate one configuration")
    _common(p)
    _ablation(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several configurations side by side")
    p.add_argument("--config", action="append", required=True, help="repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--vary", choices=("filter", "sbr"), help="expand each config into UKF/EKF or SBR on/off")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("demo", help="bundled low- and high-outage drives with both ablations")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
