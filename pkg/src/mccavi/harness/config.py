"""Experiment configuration: INI files with one section per engine.

Example::

    [run]
    experiment = example2
    engine = all
    seed = 1
    out = runs/example2

    [mc-cavi]
    schedule = 10,150,10
    iters = 300
    burn_in = 150

A ``budget_secs`` (or ``iters``) key under ``[run]`` applies to every engine
and overrides the per-engine iteration counts. Setting both is an error.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from ..mc_cavi import McSchedule
from ..vi import ConfigurationError

EXPERIMENTS = ("example1", "example2", "nmr", "theorem1-sweep", "schedule-sweep")
ENGINES = ("cavi", "mc-cavi", "mcmc", "bbvi")

# which engines "all" expands to
EXPERIMENT_ENGINES = {
    "example1": ("cavi", "mc-cavi"),
    "example2": ("mcmc", "mc-cavi", "bbvi"),
    "nmr": ("mc-cavi", "mcmc"),
    "theorem1-sweep": ("mc-cavi",),
    "schedule-sweep": ("mc-cavi",),
}

TABLE1_SCHEDULES = ((10, 10, 100_000), (1000, 10, 100_000), (100_000, 10, 100_000),
                    (10, 30, 100_000), (10, 50, 100_000))


@dataclass(frozen=True)
class EngineSettings:
    iters: int
    burn_in: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    engine: str = "all"
    seed: int = 1
    out: str = "runs"
    iters: int | None = None
    budget_secs: float | None = None
    schedule: McSchedule | None = None
    engines: dict = field(default_factory=dict)
    n_data: int | None = None
    spectrum: str | None = None
    catalog: str | None = None
    rel_tol: float = 1e-4
    bbvi_samples: int = 10
    eta: float = 0.5
    sweep_sizes: tuple = (10, 100, 1000)
    sweep_seeds: int = 20

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.engine != "all" and self.engine not in ENGINES:
            raise ConfigurationError(f"unknown engine {self.engine!r}")
        if self.engine != "all" and self.engine not in EXPERIMENT_ENGINES[self.experiment]:
            raise ConfigurationError(f"engine {self.engine!r} is not available for {self.experiment}")
        if self.iters is not None and self.budget_secs is not None:
            raise ConfigurationError("set either an iteration count or a time budget, not both")
        if self.iters is not None and self.iters < 0:
            raise ConfigurationError("iteration count must be non-negative")
        if self.budget_secs is not None and not self.budget_secs > 0:
            raise ConfigurationError("time budget must be positive")

    @property
    def selected_engines(self):
        return EXPERIMENT_ENGINES[self.experiment] if self.engine == "all" else (self.engine,)

    def settings(self, engine) -> EngineSettings:
        base = self.engines.get(engine) or default_engine_settings(self.experiment).get(engine, EngineSettings(0))
        if self.iters is not None:
            return EngineSettings(self.iters, min(base.burn_in, self.iters // 2))
        return base

    def mc_schedule(self) -> McSchedule:
        return self.schedule or default_schedule(self.experiment)


def default_schedule(experiment) -> McSchedule:
    return {"example2": McSchedule(10, 150, 10), "nmr": McSchedule(10, 250, 10)}.get(experiment, McSchedule())


def default_engine_settings(experiment) -> dict:
    if experiment == "example1":
        return {"cavi": EngineSettings(10_000), "mc-cavi": EngineSettings(50, 40)}
    if experiment == "example2":
        return {"mcmc": EngineSettings(2500, 1250), "mc-cavi": EngineSettings(300, 150),
                "bbvi": EngineSettings(100, 0)}
    if experiment == "nmr":
        return {"mc-cavi": EngineSettings(500, 250), "mcmc": EngineSettings(2000, 1000)}
    return {"mc-cavi": EngineSettings(50, 40)}


def _opt(section, key, conv):
    if section is None or key not in section or section[key].strip() == "":
        return None
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigurationError(f"[{section.name}] {key}: {exc}") from None


def _int(text):
    return int(float(text))


def parse_schedule(text) -> McSchedule:
    try:
        return McSchedule.parse(text)
    except ValueError as exc:
        raise ConfigurationError(f"bad schedule {text!r} (expected A,B,C): {exc}") from None


def load_config(path, **overrides) -> ExperimentConfig:
    """Reads an INI file; keyword ``overrides`` that are not None win over file values."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return config_from_parser(parser, **overrides)


def config_from_parser(parser: configparser.ConfigParser, **overrides) -> ExperimentConfig:
    known = {"run", "data", "cavi", "mc-cavi", "mcmc", "bbvi", "sweep"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {', '.join(sorted(unknown))}")
    run = parser["run"] if parser.has_section("run") else None
    data = parser["data"] if parser.has_section("data") else None
    kw = {
        "experiment": _opt(run, "experiment", str),
        "engine": _opt(run, "engine", str),
        "seed": _opt(run, "seed", _int),
        "out": _opt(run, "out", str),
        "iters": _opt(run, "iters", _int),
        "budget_secs": _opt(run, "budget_secs", float),
        "n_data": _opt(data, "n", _int),
        "spectrum": _opt(data, "spectrum", str),
        "catalog": _opt(data, "catalog", str),
    }
    engines = {}
    for name in ENGINES:
        sec = parser[name] if parser.has_section(name) else None
        iters = _opt(sec, "iters", _int)
        if iters is not None:
            engines[name] = EngineSettings(iters, _opt(sec, "burn_in", _int) or 0)
    kw["engines"] = engines
    mc = parser["mc-cavi"] if parser.has_section("mc-cavi") else None
    text = _opt(mc, "schedule", str)
    kw["schedule"] = parse_schedule(text) if text else None
    kw["rel_tol"] = _opt(parser["cavi"] if parser.has_section("cavi") else None, "rel_tol", float)
    bb = parser["bbvi"] if parser.has_section("bbvi") else None
    kw["bbvi_samples"] = _opt(bb, "samples", _int)
    kw["eta"] = _opt(bb, "eta", float)
    sw = parser["sweep"] if parser.has_section("sweep") else None
    sizes = _opt(sw, "sizes", lambda t: tuple(_int(v) for v in t.split(",")))
    kw["sweep_sizes"] = sizes
    kw["sweep_seeds"] = _opt(sw, "seeds", _int)
    for k, v in overrides.items():
        if v is not None:
            kw[k] = v
            # a flag picks the run mode even when the file chose the other one
            if k in ("iters", "budget_secs"):
                kw["budget_secs" if k == "iters" else "iters"] = None
    if kw.get("experiment") is None:
        raise ConfigurationError("no experiment given")
    return ExperimentConfig(**{k: v for k, v in kw.items() if v is not None})


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    kw = {k: v for k, v in overrides.items() if v is not None}
    if "iters" in kw:
        kw.setdefault("budget_secs", None)
    if "budget_secs" in kw:
        kw.setdefault("iters", None)
    return replace(config, **kw)
