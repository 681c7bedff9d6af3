"""Command-line entry point: ``mccavi run | gen-fixtures | report``.

Exit codes: 0 success, 1 configuration error, 2 engine divergence or an
engine that completed no sweeps, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from ..vi import ConfigurationError
from .config import ENGINES, EXPERIMENTS, ExperimentConfig, load_config, parse_schedule

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mccavi")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not argparse's default exit status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mccavi", description="CAVI, MC-CAVI, BBVI and MCMC benchmark runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write a report bundle")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--engine", choices=ENGINES + ("all",))
    run.add_argument("--seed", type=int)
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--iters", type=int, help="outer iterations for every selected engine")
    mode.add_argument("--budget-secs", type=float, help="wall-clock budget per engine")
    run.add_argument("--schedule", help="MC-CAVI sample-size schedule A,B,C")
    run.add_argument("--out", help="output directory")
    run.add_argument("--config", help="INI config file")
    run.add_argument("--spectrum", help="NMR spectrum file (two columns: ppm intensity)")
    run.add_argument("--catalog", help="NMR metabolite catalog (JSON)")

    gen = sub.add_parser("gen-fixtures", help="write the synthetic datasets and NMR catalog")
    gen.add_argument("--out", default="fixtures")
    gen.add_argument("--seed", type=int, default=1)

    rep = sub.add_parser("report", help="re-render summaries and plots from an existing bundle")
    rep.add_argument("--out", required=True, help="bundle directory written by 'run'")
    return p


def _config_from_args(args) -> ExperimentConfig:
    schedule = parse_schedule(args.schedule) if args.schedule else None
    overrides = dict(experiment=args.experiment, engine=args.engine, seed=args.seed, iters=args.iters,
                     budget_secs=args.budget_secs, schedule=schedule, out=args.out,
                     spectrum=args.spectrum, catalog=args.catalog)
    if args.config:
        return load_config(args.config, **overrides)
    if args.experiment is None:
        raise ConfigurationError("--experiment (or --config) is required")
    kw = {k: v for k, v in overrides.items() if v is not None}
    kw.setdefault("out", os.path.join("runs", args.experiment))
    return ExperimentConfig(**kw)


def cmd_run(args) -> int:
    from .experiments import run_experiment

    config = _config_from_args(args)
    log.info("running %s (%s) seed=%s -> %s", config.experiment, ",".join(config.selected_engines),
             config.seed, config.out)
    bundle = run_experiment(config)
    with open(os.path.join(bundle.out, "table.txt")) as fh:
        sys.stdout.write(fh.read())
    for label, why in bundle.failures.items():
        log.error("%s: %s", label, why)
    return EXIT_DIVERGED if bundle.failed else EXIT_OK


def gen_fixtures(out: str, seed: int = 1) -> list:
    """Writes the Model-1 and Model-2 datasets and the synthetic NMR spectrum and catalog."""
    from ..models import model1, model2
    from ..models.templates import synthetic_fixture, write_catalog, write_spectrum
    from .experiments import NMR_FIXTURE_SEED

    os.makedirs(out, exist_ok=True)
    paths = []
    x = model1.generate(1000, np.random.default_rng(seed))
    paths.append(os.path.join(out, "model1.txt"))
    np.savetxt(paths[-1], x, header=f"Model 1 data: N(10, 100), n=1000, seed {seed}")
    y = model2.generate(100, np.random.default_rng(seed))
    paths.append(os.path.join(out, "model2.txt"))
    np.savetxt(paths[-1], y, header=f"Model 2 data: n=100, seed {seed}")
    spectrum, catalog, truth = synthetic_fixture(NMR_FIXTURE_SEED)
    paths.append(os.path.join(out, "spectrum.txt"))
    write_spectrum(paths[-1], spectrum, comment="synthetic two-metabolite spectrum\n"
                   + "true beta: " + " ".join(repr(float(b)) for b in truth["beta"]))
    paths.append(os.path.join(out, "catalog.json"))
    write_catalog(paths[-1], catalog)
    return paths


def cmd_gen_fixtures(args) -> int:
    for p in gen_fixtures(args.out, args.seed):
        print(p)
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiments import rerender

    bundle = rerender(args.out)
    with open(os.path.join(bundle.out, "table.txt")) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "gen-fixtures": cmd_gen_fixtures, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigurationError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
