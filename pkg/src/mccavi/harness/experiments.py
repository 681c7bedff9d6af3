"""End-to-end experiment runners that emit a :class:`ReportBundle` directory.

Layout of a bundle::

    OUT/traces/<engine>.csv     one row per completed sweep
    OUT/summary.csv             engine, parameter, mean, sd over post-burn-in rows
    OUT/table.txt               the same summary, one column per engine
    OUT/plots/*.svg             trace charts and posterior fit plots
    OUT/bands/<engine>.csv      pointwise fit bands behind the fit plots
    OUT/manifest.json           config, seeds, burn-in per trace, timings, failures
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..bbvi import run_bbvi
from ..mc_cavi import McSchedule, _json_default, first_plateau, run_mc_cavi
from ..models import model1, model2
from ..models.nmr import NmrModel, mc_cavi_q_sd
from ..models.templates import read_catalog, read_spectrum, synthetic_fixture
from ..vi import ConfigurationError, ConvergenceError, SweepTrace, run_cavi
from . import report
from .config import TABLE1_SCHEDULES, ExperimentConfig

# the synthetic NMR fixture is a fixed dataset, independent of the run seed
NMR_FIXTURE_SEED = 0
UNBOUNDED_ITERS = 10**9
POST_BURNIN_SWEEPS = 40


class FixtureError(OSError):
    """A data fixture is missing or cannot be parsed."""


@dataclass
class EngineRun:
    trace: SweepTrace
    burn_in: int
    elapsed: float
    failure: str | None = None
    band: dict | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class ReportBundle:
    out: str
    experiment: str
    traces: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    burn_in: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)
    manifest: str = ""
    failures: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    @property
    def failed(self):
        return bool(self.failures)


# -- helpers -----------------------------------------------------------------------

def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]) if stream else seed)


def _iters_and_budget(config: ExperimentConfig, engine: str):
    s = config.settings(engine)
    if config.budget_secs is not None:
        return UNBOUNDED_ITERS, config.budget_secs, None
    return s.iters, None, s.burn_in


def _burn_in(fixed, length):
    """Configured burn-in, or half the completed sweeps under a time budget."""
    return length // 2 if fixed is None else fixed


def _rename(trace: SweepTrace, mapping: dict) -> SweepTrace:
    for rec in trace.records:
        for old, new in mapping.items():
            if old in rec:
                rec[new] = rec.pop(old)
    return trace


def _guard(fn):
    """Runs an engine; divergence keeps the partial trace and records a failure."""
    t0 = time.perf_counter()
    try:
        run = fn()
    except ConvergenceError as exc:
        trace = exc.trace if isinstance(exc.trace, SweepTrace) else SweepTrace()
        return EngineRun(trace, 0, time.perf_counter() - t0, failure=f"diverged: {exc}")
    run.elapsed = time.perf_counter() - t0
    return run


def _empty(reason="no iterations requested"):
    return EngineRun(SweepTrace(), 0, 0.0, failure=reason)


def _check_mc_iters(iters, schedule: McSchedule, budget):
    if budget is None and 0 < iters < schedule.burnin_iters:
        raise ConfigurationError(f"{iters} iterations do not cover the {schedule.burnin_iters} burn-in sweeps "
                                 "of the schedule")


# -- example 1 ---------------------------------------------------------------------

def _example1(config, engines):
    x = model1.generate(config.n_data or 1000, _rng(config.seed))
    m = model1.Model1(x)
    runs = {}
    if "cavi" in engines:
        iters, _, _ = _iters_and_budget(config, "cavi")

        def cavi():
            if iters == 0:
                return _empty()
            state, trace = run_cavi(m.cavi_spec(), m.initial_state(), config.rel_tol, max_sweeps=iters)
            final = {k: state[k] for k in ("tau_shape", "tau_rate", "vartheta_mean", "vartheta_var")}
            return EngineRun(trace, len(trace) - 1, 0.0, extra={"final": final, "sweeps": len(trace)})
        runs["cavi"] = _guard(cavi)
    if "mc-cavi" in engines:
        iters, budget, burn = _iters_and_budget(config, "mc-cavi")
        schedule = config.mc_schedule()
        _check_mc_iters(iters, schedule, budget)

        def mc():
            if iters == 0:
                return _empty()
            _, trace = run_mc_cavi(m.mc_spec(), m.initial_state(), schedule, iters, _rng(config.seed),
                                   budget_secs=budget)
            return EngineRun(trace, _burn_in(burn, len(trace)), 0.0,
                             extra={"first_plateau": first_plateau(trace, "theta", 10, 1.001)})
        runs["mc-cavi"] = _guard(mc)
    return runs, {}


# -- example 2 ---------------------------------------------------------------------

def _example2(config, engines):
    y = model2.generate(config.n_data or 100, _rng(config.seed))
    m = model2.Model2(y)
    j = np.arange(1, m.n + 1)
    truth = model2.TRUE_VARTHETA + model2.true_kappa(m.n)
    runs = {}
    if "mcmc" in engines:
        iters, budget, burn = _iters_and_budget(config, "mcmc")

        def mcmc():
            if iters == 0:
                return _empty()
            res = m.run_mcmc(iters, _rng(config.seed), burn_in=burn, budget_secs=budget)
            trace = SweepTrace()
            for vt, th in zip(res["vartheta"], res["theta"]):
                trace.append({"vartheta": vt, "theta": th})
            b = _burn_in(burn, len(trace))
            curves = res["vartheta"][b:, None] + res["kappa"][b:]
            violations = int(np.sum(~((np.abs(res["kappa"]) < res["psi"]) & (res["psi"] < model2.PSI_MAX))))
            return EngineRun(trace, b, 0.0, band={"x": j, "data": y, "curves": curves, "truth": truth},
                             extra={"constraint_violations": violations})
        runs["mcmc"] = _guard(mcmc)
    if "mc-cavi" in engines:
        iters, budget, burn = _iters_and_budget(config, "mc-cavi")
        schedule = config.mc_schedule()
        _check_mc_iters(iters, schedule, budget)

        def mc():
            if iters == 0:
                return _empty()
            fitted = []
            _, trace = run_mc_cavi(m.mc_cavi_spec(), m.initial_state(), schedule, iters, _rng(config.seed),
                                   budget_secs=budget,
                                   on_sweep=lambda s: fitted.append(s["E_vartheta"] + np.array(s["E_kappa"])))
            _rename(trace, {"E_vartheta": "vartheta", "E_theta": "theta"})
            b = _burn_in(burn, len(trace))
            return EngineRun(trace, b, 0.0, band={"x": j, "data": y, "curves": np.array(fitted[b:]),
                                                  "truth": truth})
        runs["mc-cavi"] = _guard(mc)
    if "bbvi" in engines:
        iters, budget, burn = _iters_and_budget(config, "bbvi")

        def bb():
            if iters == 0:
                return _empty()
            model = m.bbvi_factors()
            res = run_bbvi(model, m.bbvi_init(), iters, config.bbvi_samples, _rng(config.seed), eta=config.eta,
                           monitor=lambda lam: {"vartheta": lam[0], "theta": math.exp(lam[2] - lam[3])},
                           budget_secs=budget)
            return EngineRun(res.trace, _burn_in(burn, len(res.trace)), 0.0, extra={"result": res})
        runs["bbvi"] = _guard(bb)
    return runs, {}


# -- NMR -------------------------------------------------------------------------------

def load_nmr_fixture(config: ExperimentConfig):
    """Spectrum and catalog from the configured files, or the synthetic fixture."""
    if (config.spectrum is None) != (config.catalog is None):
        raise ConfigurationError("give both a spectrum and a catalog file, or neither")
    if config.spectrum is None:
        return synthetic_fixture(NMR_FIXTURE_SEED)
    try:
        return read_spectrum(config.spectrum), read_catalog(config.catalog), None
    except OSError as exc:
        raise FixtureError(f"cannot read fixture: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FixtureError(f"cannot parse fixture: {exc}") from exc


def _nmr(config, engines):
    spectrum, catalog, truth = load_nmr_fixture(config)
    m = NmrModel(spectrum, catalog)
    n = spectrum.n
    runs = {}
    if "mc-cavi" in engines:
        iters, budget, burn = _iters_and_budget(config, "mc-cavi")
        schedule = config.mc_schedule()
        _check_mc_iters(iters, schedule, budget)

        def mc():
            if iters == 0:
                return _empty()
            fitted, slack = [], []

            def record(s):
                fitted.append((m.template(s["E_gamma"], s["E_delta"]) @ s["E_beta"])[:n])
                slack.append(float(s["min_slack"]))

            _, trace = run_mc_cavi(m.mc_cavi_spec(), m.initial_state(), schedule, iters, _rng(config.seed),
                                   budget_secs=budget, on_sweep=record)
            for rec, sl in zip(trace.records, slack):
                rec.pop("max_tau", None)
                rec["min_slack"] = sl
            _rename(trace, {"E_theta": "theta"})
            b = _burn_in(burn, len(trace))
            q_sd = mc_cavi_q_sd(trace, m.M, b)
            for rec in trace.records:
                for k in [k for k in rec if k.startswith("beta2_")]:
                    rec.pop(k)
            return EngineRun(trace, b, 0.0, band={"x": spectrum.x, "data": spectrum.y,
                                                  "curves": np.array(fitted[b:])},
                             extra={"q_sd": {f"beta_{i + 1}": float(s) for i, s in enumerate(q_sd)}})
        runs["mc-cavi"] = _guard(mc)
    if "mcmc" in engines:
        iters, budget, burn = _iters_and_budget(config, "mcmc")

        def mcmc():
            if iters == 0:
                return _empty()
            fitted = []

            def record(chain):
                v = chain.values
                fitted.append((m.template(float(v["gamma"]), m._centers_from(v)) @ v["beta"])[:n])

            res = m.run_mcmc(iters, _rng(config.seed), burn_in=burn, budget_secs=budget, on_sweep=record)
            trace = SweepTrace()
            for k in range(len(res["theta"])):
                rec = {f"beta_{i + 1}": res["beta"][k, i] for i in range(m.M)}
                rec.update(gamma=res["gamma"][k], theta=res["theta"][k], min_slack=res["min_slack"][k])
                trace.append(rec)
            b = _burn_in(burn, len(trace))
            return EngineRun(trace, b, 0.0, band={"x": spectrum.x, "data": spectrum.y,
                                                  "curves": np.array(fitted[b:])})
        runs["mcmc"] = _guard(mcmc)
    tables = {}
    if truth is not None:
        tables["truth"] = {f"beta_{i + 1}": float(b) for i, b in enumerate(truth["beta"])}
    return runs, tables


# -- sweeps ---------------------------------------------------------------------------

def _theorem1_sweep(config, engines):
    x = model1.generate(config.n_data or 1000, _rng(config.seed))
    m = model1.Model1(x)
    ref, _ = run_cavi(m.cavi_spec(), m.initial_state(), 1e-12, max_sweeps=1000)
    iters, _, burn = _iters_and_budget(config, "mc-cavi")
    if config.budget_secs is not None:
        raise ConfigurationError("the N sweep runs a fixed number of iterations; drop the time budget")
    runs, rows = {}, []
    for size in config.sweep_sizes:
        errors = []
        for r in range(config.sweep_seeds):
            if iters == 0:
                break
            _, trace = run_mc_cavi(m.mc_spec(), m.initial_state(), McSchedule(size, 0, size), iters,
                                   _rng(config.seed, size, r))
            errors.append(abs(trace.last("E_tau") - ref["E_tau"]))
            if r == 0:
                runs[f"mc-cavi[N={size}]"] = EngineRun(trace, min(burn, len(trace) - 1), 0.0)
        if not errors:
            runs[f"mc-cavi[N={size}]"] = _empty()
        rows.append({"N": size, "median_abs_error": float(np.median(errors)) if errors else math.nan,
                     "replicates": len(errors), "errors": errors})
    return runs, {"sweep": rows, "cavi_E_tau": ref["E_tau"]}


def _schedule_sweep(config, engines):
    x = model1.generate(config.n_data or 1000, _rng(config.seed))
    m = model1.Model1(x)
    ref, _ = run_cavi(m.cavi_spec(), m.initial_state(), 1e-12, max_sweeps=1000)
    iters, budget, _ = _iters_and_budget(config, "mc-cavi")
    explicit = config.iters is not None or "mc-cavi" in config.engines
    schedules = [config.schedule] if config.schedule else [McSchedule(*s) for s in TABLE1_SCHEDULES]
    runs, rows = {}, []
    for sch in schedules:
        label = f"mc-cavi[{sch.burnin_n}-{sch.burnin_iters}-{sch.main_n}]"
        # by default every schedule gets the same number of post-burn-in sweeps
        total = iters if explicit or budget is not None else sch.burnin_iters + POST_BURNIN_SWEEPS
        _check_mc_iters(total, sch, budget)
        if total == 0:
            runs[label] = _empty()
            continue
        t0 = time.perf_counter()
        _, trace = run_mc_cavi(m.mc_spec(), m.initial_state(), sch, total, _rng(config.seed), budget_secs=budget)
        elapsed = time.perf_counter() - t0
        b = max(len(trace) - 10, 0)
        runs[label] = EngineRun(trace, b, elapsed)
        tail = trace.column("E_tau")[b:]
        rows.append({"schedule": [sch.burnin_n, sch.burnin_iters, sch.main_n], "E_tau_trailing10": float(tail.mean()),
                     "first_plateau": first_plateau(trace, "theta", 10, 1.001), "elapsed_secs": elapsed})
    return runs, {"sweep": rows, "cavi_E_tau": ref["E_tau"]}


_RUNNERS = {"example1": _example1, "example2": _example2, "nmr": _nmr,
            "theorem1-sweep": _theorem1_sweep, "schedule-sweep": _schedule_sweep}

_TABLE_ROWS = {"example1": ["E_tau", "theta", "zeta"], "example2": ["vartheta", "theta"]}
_TRACE_PLOTS = {"example1": ["E_tau"], "example2": ["vartheta", "theta"], "nmr": ["beta_1", "beta_2", "theta"],
                "theorem1-sweep": ["E_tau"], "schedule-sweep": ["E_tau"]}


# -- bundle ------------------------------------------------------------------------------

def _safe_name(label):
    return label.replace("[", "_").replace("]", "").replace("=", "").replace(",", "-")


def render(bundle: ReportBundle, bands: dict | None = None):
    """Writes summary.csv, table.txt and the SVG charts from the trace CSVs on disk."""
    out = bundle.out
    os.makedirs(os.path.join(out, "plots"), exist_ok=True)
    bundle.summary, bundle.plots = {}, []
    for label, path in bundle.traces.items():
        try:
            bundle.summary[label] = report.summarize_trace(path, bundle.burn_in[label])
        except ValueError as exc:
            bundle.failures.setdefault(label, str(exc))
    report.write_summary_csv(os.path.join(out, "summary.csv"), bundle.summary)
    rows = _TABLE_ROWS.get(bundle.experiment) or sorted({p for s in bundle.summary.values() for p in s})
    with open(os.path.join(out, "table.txt"), "w") as fh:
        fh.write(report.format_table(bundle.summary, rows))
    for stat in _TRACE_PLOTS.get(bundle.experiment, []):
        series = {}
        for label, path in bundle.traces.items():
            cols = report.read_trace_csv(path)
            if stat in cols and len(cols[stat]):
                series[label] = (cols["sweep"], cols[stat])
        if series:
            p = os.path.join(out, "plots", f"trace_{stat}.svg")
            report.write_line_chart(p, series, title=f"trace of {stat}", xlabel="sweep", ylabel=stat)
            bundle.plots.append(p)
    band_dir = os.path.join(out, "bands")
    if os.path.isdir(band_dir):
        for name in sorted(os.listdir(band_dir)):
            if name.endswith(".csv"):
                p = os.path.join(out, "plots", f"fit_{name[:-4]}.svg")
                report.replot_band(os.path.join(band_dir, name), p, title=f"posterior fit ({name[:-4]})")
                bundle.plots.append(p)
    return bundle


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Runs the configured engines and writes the bundle under ``config.out``."""
    out = config.out
    try:
        os.makedirs(os.path.join(out, "traces"), exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    runs, tables = _RUNNERS[config.experiment](config, config.selected_engines)
    bundle = ReportBundle(out=out, experiment=config.experiment, tables=tables)
    manifest_runs = {}
    for label, run in runs.items():
        path = os.path.join(out, "traces", f"{_safe_name(label)}.csv")
        run.trace.to_csv(path)
        bundle.traces[label] = path
        bundle.burn_in[label] = run.burn_in
        if run.failure:
            bundle.failures[label] = run.failure
        elif len(run.trace) == 0:
            bundle.failures[label] = "no completed sweeps"
        if run.band is not None and len(run.band["curves"]):
            os.makedirs(os.path.join(out, "bands"), exist_ok=True)
            mean, lo, hi = report.fit_band(run.band["curves"])
            report.write_band_csv(os.path.join(out, "bands", f"{_safe_name(label)}.csv"), run.band["x"],
                                  run.band["data"], mean, lo, hi, run.band.get("truth"))
        result = run.extra.pop("result", None)
        if result is not None:
            result.trajectory_to_csv(os.path.join(out, "traces", f"{_safe_name(label)}_parameters.csv"))
        sweep_times = np.diff(np.concatenate([[0.0], run.trace.times])) if run.trace.times else np.array([])
        manifest_runs[label] = {"burn_in": run.burn_in, "sweeps": len(run.trace), "elapsed_secs": run.elapsed,
                                "max_sweep_secs": float(sweep_times.max()) if sweep_times.size else 0.0,
                                "failure": bundle.failures.get(label), **run.extra}
    render(bundle)
    cfg = asdict(config)
    cfg["schedule"] = asdict(config.mc_schedule())
    manifest = {"experiment": config.experiment, "seed": config.seed, "config": cfg, "runs": manifest_runs,
                "tables": tables, "failed": bundle.failed, "failures": bundle.failures}
    bundle.manifest = os.path.join(out, "manifest.json")
    with open(bundle.manifest, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return bundle


def rerender(out: str) -> ReportBundle:
    """Rebuilds summaries and plots of an existing bundle from its traces and manifest."""
    path = os.path.join(out, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    bundle = ReportBundle(out=out, experiment=manifest["experiment"], tables=manifest.get("tables", {}))
    for label, info in manifest["runs"].items():
        p = os.path.join(out, "traces", f"{_safe_name(label)}.csv")
        if not os.path.exists(p):
            raise OSError(f"missing trace file {p}")
        bundle.traces[label] = p
        bundle.burn_in[label] = info["burn_in"]
        if info.get("failure"):
            bundle.failures[label] = info["failure"]
    return render(bundle)
