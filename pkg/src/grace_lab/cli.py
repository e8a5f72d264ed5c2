"""Command line entry point: ``grace-lab run | sweep | budget | assess-report``."""

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import engine, reporting
from .assess import IMPLEMENTED_MEASURES
from .config import RunConfig, dump_config, load_config, validate, with_overrides
from .errors import BudgetError, ConfigError, GraceError
from .rehearsal import MemoryBudget, aligned_budget

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("grace_lab")


def parse_range(text: str, kind=float) -> list:
    """``start:stop:step`` (stop inclusive), ``a,b,c`` or a single value."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must look like start:stop:step")
        start, stop, step = (kind(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"range {text!r} is empty")
        count = int(round((stop - start) / step)) + 1
        values = [start + i * step for i in range(count)]
        if kind is float:
            values = [round(v, 12) for v in values]
        return values
    values = [kind(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ValueError("empty value list")
    return values


def pareto_front(points) -> list:
    """Points not dominated in (fewer params, higher accuracy). Input order is kept."""
    points = list(points)
    front = []
    for i, (p, acc) in enumerate(points):
        dominated = any(
            q <= p and b >= acc and (q < p or b > acc)
            for j, (q, b) in enumerate(points) if j != i
        )
        if not dominated:
            front.append((p, acc))
    return front


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    validate(cfg)
    return cfg


def _config_error(exc: ConfigError) -> int:
    print(f"config error: {exc}", file=sys.stderr)
    return EXIT_USAGE


def execute(cfg: RunConfig, out_dir=None) -> engine.RunReport:
    stream = engine.make_stream(cfg)
    report = engine.run(cfg.strategy, stream, cfg)
    out = Path(out_dir or cfg.output.dir)
    reporting.write_run(report, out)
    (out / "config.toml").write_text(dump_config(cfg))
    return report


def cmd_run(args) -> int:
    try:
        tau = None if args.tau is None else float(args.tau)
        rho = None if args.rho is None else float(args.rho)
        cfg = with_overrides(_load(args), args.strategy, args.seed, tau, rho, args.out)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            return _config_error(exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = execute(cfg)
    except ConfigError as exc:
        return _config_error(exc)
    except GraceError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    s = report.summary()
    print(f"{s['strategy']}: last={s['last_acc']:.4f} avg={s['avg_acc']:.4f} "
          f"params={s['final_params']} backbones={s['backbone_counts'][-1]} -> {cfg.output.dir}")
    return EXIT_OK


def _cell_name(tau1, rho, seed) -> str:
    return f"tau{tau1:g}_rho{rho:g}_seed{seed}"


def _sweep_cell(job):
    cfg, out_dir = job
    try:
        report = execute(cfg, out_dir)
    except GraceError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return report.summary(), None


def cmd_sweep(args) -> int:
    try:
        base = _load(args)
        taus = parse_range(args.tau) if args.tau else [base.assess.tau1]
        rhos = parse_range(args.rho) if args.rho else [base.assess.rho]
        seeds = parse_range(args.seed, int) if args.seed else [base.model.seed]
        out = Path(args.out or base.output.dir)
        base = dataclasses.replace(base, strategy=args.strategy or "grace")
        jobs = []
        for tau1 in taus:
            for rho in rhos:
                for seed in seeds:
                    name = _cell_name(tau1, rho, seed)
                    cfg = with_overrides(base, seed=seed, tau1=tau1, rho=rho, out=str(out / name))
                    jobs.append(((tau1, rho, seed), cfg))
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", "jobs")
    except ConfigError as exc:
        return _config_error(exc)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    work = [(cfg, cfg.output.dir) for _, cfg in jobs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, work))
    else:
        results = [_sweep_cell(w) for w in work]

    ok = [(key, s) for (key, _), (s, err) in zip(jobs, results) if s is not None]
    front = set(pareto_front([(s["final_params"], s["avg_acc"]) for _, s in ok]))
    rows = []
    for (key, _), (s, err) in zip(jobs, results):
        tau1, rho, seed = key
        if s is None:
            log.warning("sweep cell %s failed: %s", _cell_name(*key), err)
            rows.append((tau1, rho, seed, f"failed: {err}", None, None, None, None, None, None, None))
            continue
        rows.append((
            tau1, rho, seed, "ok", s["final_params"], s["backbone_counts"][-1], s["avg_acc"], s["last_acc"],
            ";".join(str(b) for b in s["backbone_counts"]),
            ";".join(d or "-" for d in s["decisions"]),
            int((s["final_params"], s["avg_acc"]) in front),
        ))
    out.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out / "sweep.csv", reporting.SWEEP_COLUMNS, rows)

    if args.reference:
        ref_rows = []
        for seed in seeds:
            cfg = with_overrides(base, strategy="pure_expansion", seed=seed,
                                 out=str(out / f"reference_pure_expansion_seed{seed}"))
            s, err = _sweep_cell((cfg, cfg.output.dir))
            if s is not None:
                ref_rows.append((seed, s["final_params"], s["backbone_counts"][-1], s["avg_acc"], s["last_acc"]))
        reporting.write_csv(out / "reference.csv",
                            ["seed", "final_params", "final_backbones", "avg_acc", "last_acc"], ref_rows)

    print(f"sweep: {len(ok)}/{len(jobs)} cells ok, {len(front)} on the Pareto front -> {out / 'sweep.csv'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_budget(args) -> int:
    try:
        budget = MemoryBudget(args.bytes_per_param, args.bytes_per_exemplar, args.cap, args.base_buffer)
        quota = aligned_budget(args.params, budget)
    except (BudgetError, ConfigError) as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(quota)
    return EXIT_OK


def cmd_assess_report(args) -> int:
    try:
        cfg = with_overrides(_load(args), args.strategy, args.seed, None, None, args.out)
        cfg = dataclasses.replace(cfg, assess=dataclasses.replace(cfg.assess, diagnostics=IMPLEMENTED_MEASURES))
    except ConfigError as exc:
        return _config_error(exc)
    try:
        report = engine.run(cfg.strategy, engine.make_stream(cfg), cfg)
    except GraceError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out / "assess.csv", reporting.ASSESS_COLUMNS, reporting.assess_rows(report))
    print(out / "assess.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grace-lab", description="Grow/assess/compress class-incremental lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_type=int, seed_help="model seed override"):
        p.add_argument("--config", help="TOML run configuration (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--strategy", choices=[s.value for s in engine.Strategy])
        p.add_argument("--seed", type=seed_type, help=seed_help)

    p = sub.add_parser("run", help="train one strategy over the task stream")
    common(p)
    p.add_argument("--tau", help="base threshold tau1")
    p.add_argument("--rho", help="threshold decay rho")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over tau1 x rho x seed")
    common(p, str, "replicate seeds: start:stop:step or comma list")
    p.add_argument("--tau", help="tau1 values, start:stop:step or comma list")
    p.add_argument("--rho", help="rho values, start:stop:step or comma list")
    p.add_argument("--jobs", type=int, default=1, help="cells run concurrently")
    p.add_argument("--reference", action="store_true", help="also run pure_expansion once per seed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("budget", help="memory-aligned exemplar quota")
    p.add_argument("--params", type=int, required=True)
    p.add_argument("--cap", type=int, required=True, help="parameter count of the most expensive method")
    p.add_argument("--bytes-per-exemplar", type=int, default=3072)
    p.add_argument("--base-buffer", type=int, default=2000)
    p.add_argument("--bytes-per-param", type=int, default=4)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("assess-report", help="per-task saturation measures as CSV")
    common(p)
    p.set_defaults(func=cmd_assess_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GRACE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
