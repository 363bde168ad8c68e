"""``qtune`` command line: synth, simulate, sweep and tune.

Exit codes: 0 success, 2 config error, 3 synthesis failure, 4 simulation
divergence.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config, with_overrides
from .estuner import EsError, EsParams, prescan_delta, tune, write_history_csv
from .pipeline import build_design, build_scenario, design_report, write_report
from .sim import DIVERGED_COST, LoopRunner, sweep_alpha, write_trace_csv
from .synthesis import SynthesisError

EXIT_OK, EXIT_CONFIG, EXIT_SYNTH, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("qtune")


class DivergenceError(RuntimeError):
    pass


def parse_grid(spec: str) -> np.ndarray:
    """``"start:stop:step"`` with ``stop`` included when it lies on the grid."""
    try:
        start, stop, step = (float(s) for s in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad --alpha-grid {spec!r}; expected start:stop:step") from exc
    if step <= 0 or stop < start:
        raise ConfigError("--alpha-grid needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _config(args) -> Config:
    cfg = load_config(args.config)
    scen, out = {}, {}
    if getattr(args, "preset", None):
        scen["preset"] = args.preset
    if args.seed is not None:
        scen["noise"] = {**cfg.scenario.noise.model_dump(), "seed": args.seed}
    if args.out_dir is not None:
        out["dir"] = args.out_dir
    if args.decimate is not None:
        out["decimate"] = args.decimate
    if scen or out:
        cfg = with_overrides(cfg, **({"scenario": scen} if scen else {}), **({"output": out} if out else {}))
    return cfg


def _out_dir(cfg: Config) -> Path:
    d = Path(cfg.output.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _tag(cfg: Config) -> str:
    return cfg.scenario.preset or "custom"


def _runner(cfg: Config) -> LoopRunner:
    design = build_design(cfg)
    try:
        sc = build_scenario(cfg, design.lp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return LoopRunner(sc, design)


def cmd_synth(args) -> int:
    cfg = _config(args)
    design = build_design(cfg)
    path = write_report(design_report(cfg, design), _out_dir(cfg) / "design_report.json")
    print(f"report={path}")
    print(f"gamma_achieved={design.qfilter.achieved!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    runner = _runner(cfg)
    trace = runner.run(args.alpha)
    path = _out_dir(cfg) / f"trace_{_tag(cfg)}_alpha{args.alpha:g}.csv"
    write_trace_csv(trace, path, decimate=cfg.output.decimate)
    print(f"trace={path}")
    print(f"J={trace.J!r}")
    if trace.diverged:
        raise DivergenceError(f"run diverged at alpha={args.alpha:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    alphas = parse_grid(args.alpha_grid)
    runner = _runner(cfg)
    curve = sweep_alpha(runner.sc, runner.design, alphas, workers=args.workers)
    path = _out_dir(cfg) / f"sweep_{_tag(cfg)}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "J", "diverged"])
        for a, J in curve:
            w.writerow([repr(a), repr(J), int(J >= DIVERGED_COST)])
    ok = [(a, J) for a, J in curve if J < DIVERGED_COST]
    print(f"curve={path}")
    if not ok:
        raise DivergenceError("every run of the sweep diverged")
    a_min, J_min = min(ok, key=lambda t: t[1])
    print(f"alpha_min={a_min!r}")
    print(f"J={J_min!r}")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _config(args)
    runner = _runner(cfg)
    es = cfg.es
    p = EsParams(a=es.a, h=es.h, beta=es.beta, delta=es.delta or 1.0, k_max=es.k_max, alpha0=es.alpha0)
    if es.delta is None:
        delta, probe = prescan_delta(runner.cost, p, spacing=es.probe_spacing, contraction=es.contraction)
        p = EsParams(a=es.a, h=es.h, beta=es.beta, delta=delta, k_max=es.k_max, alpha0=es.alpha0)
        log.info("prescan delta=%.6g from probe %s", delta, probe)
    t0 = time.perf_counter()
    res = tune(runner.cost, p, callback=lambda r: log.info("k=%d alpha=%.6f J=%.6g", r.k, r.alpha, r.J))
    path = write_history_csv(res.history, _out_dir(cfg) / f"history_{_tag(cfg)}.csv")
    log.info("tuning took %.1f s", time.perf_counter() - t0)
    print(f"history={path}")
    print(f"delta={p.delta!r}")
    print(f"alpha_star={res.alpha_star!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qtune", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML config file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv debug")
    common.add_argument("--seed", type=int, help="noise seed override")
    common.add_argument("--out-dir", help="output directory override")
    common.add_argument("--decimate", type=int, help="trace CSV decimation override")
    common.add_argument("--preset", help="scenario preset override (caseA_w1, caseA_w2, caseB_w1, caseB_w2)")

    sub.add_parser("synth", parents=[common], help="design and write the report").set_defaults(func=cmd_synth)
    s = sub.add_parser("simulate", parents=[common], help="one closed-loop run")
    s.add_argument("--alpha", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("sweep", parents=[common], help="cost over an alpha grid")
    s.add_argument("--alpha-grid", default="0:2:0.1", help="start:stop:step")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    sub.add_parser("tune", parents=[common], help="extremum-seeking tuning of alpha").set_defaults(func=cmd_tune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SynthesisError as exc:
        print(f"synthesis failed at stage {exc}", file=sys.stderr)
        return EXIT_SYNTH
    except (DivergenceError, EsError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
