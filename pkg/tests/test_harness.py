import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mccavi.harness import report
from mccavi.harness.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, gen_fixtures, main
from mccavi.harness.config import EngineSettings, ExperimentConfig, load_config, with_overrides
from mccavi.harness.experiments import rerender, run_experiment
from mccavi.mc_cavi import McSchedule
from mccavi.models.templates import read_catalog, read_spectrum
from mccavi.vi import ConfigurationError


# -- config ---------------------------------------------------------------------

def test_unknown_experiment_and_engine():
    with pytest.raises(ConfigurationError):
        ExperimentConfig("example9")
    with pytest.raises(ConfigurationError):
        ExperimentConfig("example1", engine="bbvi")


def test_budget_and_iterations_are_exclusive():
    with pytest.raises(ConfigurationError):
        ExperimentConfig("example1", iters=10, budget_secs=1.0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig("example1", budget_secs=0.0)
    cfg = with_overrides(ExperimentConfig("example1", iters=10), budget_secs=2.0)
    assert cfg.iters is None and cfg.budget_secs == 2.0


def test_ini_file_round_trip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nexperiment = example2\nseed = 4\nbudget_secs = 3\n\n"
                    "[mc-cavi]\nschedule = 10,150,10\niters = 300\nburn_in = 150\n\n[bbvi]\neta = 0.25\n")
    cfg = load_config(path)
    assert cfg.experiment == "example2" and cfg.seed == 4 and cfg.eta == 0.25
    assert cfg.schedule == McSchedule(10, 150, 10)
    assert cfg.engines["mc-cavi"] == EngineSettings(300, 150)
    # a command-line iteration count replaces the file's budget
    cfg = load_config(path, iters=20)
    assert cfg.iters == 20 and cfg.budget_secs is None
    assert cfg.settings("mc-cavi") == EngineSettings(20, 10)


def test_bad_ini_files(tmp_path):
    for text in ("[run]\nexperiment = example1\n[plotting]\nx = 1\n",
                 "[run]\nseed = 1\n",
                 "[run]\nexperiment = example1\n[mc-cavi]\nschedule = 10,10\n",
                 "[run]\nexperiment = example1\niters = many\n"):
        path = tmp_path / "bad.ini"
        path.write_text(text)
        with pytest.raises(ConfigurationError):
            load_config(path)


# -- summaries --------------------------------------------------------------------

def test_summarize_constant_column():
    assert report.summarize_trace({"c": np.full(7, 2.5)}, 3) == {"c": (2.5, 0.0)}


def test_summarize_one_to_ten():
    mean, sd = report.summarize_trace({"x": np.arange(1.0, 11.0)}, 5)["x"]
    assert mean == 8.0
    assert sd == pytest.approx(math.sqrt(2.5), rel=1e-15)


def test_summarize_single_remaining_row():
    assert report.summarize_trace({"x": np.array([1.0, 2.0, 3.0])}, 2) == {"x": (3.0, 0.0)}


def test_summarize_short_trace_raises():
    with pytest.raises(ValueError):
        report.summarize_trace({"x": np.arange(5.0)}, 5)


def test_summarize_skips_sweep_column(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("sweep,a\n1,1.0\n2,3.0\n")
    assert report.summarize_trace(str(path), 0) == {"a": (2.0, math.sqrt(2.0))}


# -- plots ------------------------------------------------------------------------

def test_constant_fit_band_collapses(tmp_path):
    curves = np.tile(np.linspace(0, 1, 20), (50, 1))
    mean, lo, hi = report.emit_fit_plot(tmp_path / "fit.svg", np.arange(20), np.zeros(20), curves)
    assert np.array_equal(lo, hi) and np.array_equal(lo, curves[0])
    # the mean of identical values can differ from them by summation rounding
    np.testing.assert_allclose(mean, lo, rtol=1e-14, atol=0)


def test_svg_files_parse(tmp_path):
    rng = np.random.default_rng(0)
    report.emit_fit_plot(tmp_path / "fit.svg", np.arange(30), rng.normal(size=30), rng.normal(size=(40, 30)),
                         truth=np.zeros(30), title="a < b & c")
    report.write_line_chart(tmp_path / "line.svg", {"x": (np.arange(5), np.arange(5.0) ** 2)}, title="t")
    for name in ("fit.svg", "line.svg"):
        root = ET.parse(tmp_path / name).getroot()
        assert root.tag.endswith("svg")


def test_band_coverage_counts():
    assert report.band_coverage(np.zeros(4), np.ones(4), [0.5, 1.0, 1.5, -0.1]) == 0.5


# -- run_experiment ------------------------------------------------------------------

def _example1(out, **kw):
    return ExperimentConfig("example1", out=str(out), **kw)


def test_trace_csvs_are_deterministic(tmp_path):
    a = run_experiment(_example1(tmp_path / "a"))
    b = run_experiment(_example1(tmp_path / "b"))
    for label in a.traces:
        with open(a.traces[label], "rb") as fa, open(b.traces[label], "rb") as fb:
            assert fa.read() == fb.read()


def test_summary_recomputes_from_csvs(tmp_path):
    bundle = run_experiment(_example1(tmp_path))
    on_disk = report.read_summary_csv(tmp_path / "summary.csv")
    for label, path in bundle.traces.items():
        assert report.summarize_trace(path, bundle.burn_in[label]) == on_disk[label] == bundle.summary[label]


def test_example1_bundle(tmp_path):
    bundle = run_experiment(_example1(tmp_path))
    assert not bundle.failed
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1 and set(manifest["runs"]) == {"cavi", "mc-cavi"}
    assert manifest["config"]["schedule"] == {"burnin_n": 10, "burnin_iters": 10, "main_n": 1000}
    mean, _ = bundle.summary["mc-cavi"]["E_tau"]
    assert float(f"{mean:.2g}") == 0.01
    for p in bundle.plots:
        ET.parse(p)


def test_zero_iterations_gives_empty_traces_and_failure(tmp_path):
    bundle = run_experiment(_example1(tmp_path, iters=0))
    assert bundle.failed
    assert set(bundle.failures) == {"cavi", "mc-cavi"}
    for path in bundle.traces.values():
        assert os.path.exists(path)
        assert len(report.read_trace_csv(path)["sweep"]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["failed"] is True


def test_iterations_shorter_than_schedule_burn_in(tmp_path):
    with pytest.raises(ConfigurationError):
        run_experiment(_example1(tmp_path, engine="mc-cavi", iters=5))


def test_model2_mcmc_band_covers_truth(tmp_path):
    run_experiment(ExperimentConfig("example2", engine="mcmc", out=str(tmp_path)))
    band = report.read_trace_csv(tmp_path / "bands" / "mcmc.csv")
    assert report.band_coverage(band["lo"], band["hi"], band["truth"]) >= 0.9
    ET.parse(tmp_path / "plots" / "fit_mcmc.svg")


def test_budget_parity(tmp_path):
    budget = 0.5
    bundle = run_experiment(ExperimentConfig("example2", out=str(tmp_path), budget_secs=budget))
    runs = json.loads((tmp_path / "manifest.json").read_text())["runs"]
    for label, info in runs.items():
        assert info["sweeps"] > 0, label
        # the clock is read between sweeps; allow one sweep plus setup slack
        assert info["elapsed_secs"] <= budget + info["max_sweep_secs"] + 0.25, label
        assert info["burn_in"] == info["sweeps"] // 2
    assert not bundle.failed


def test_rerender_reproduces_summary(tmp_path):
    bundle = run_experiment(_example1(tmp_path))
    before = (tmp_path / "summary.csv").read_bytes()
    os.remove(tmp_path / "summary.csv")
    again = rerender(str(tmp_path))
    assert (tmp_path / "summary.csv").read_bytes() == before
    assert again.summary == bundle.summary


# -- CLI ---------------------------------------------------------------------------

def test_cli_run_success(tmp_path, capsys):
    assert main(["run", "--experiment", "example1", "--out", str(tmp_path)]) == EXIT_OK
    assert "E_tau" in capsys.readouterr().out


def test_cli_config_errors(tmp_path):
    # argparse usage errors exit directly, with the configuration-error status
    with pytest.raises(SystemExit) as info:
        main(["run", "--experiment", "example1", "--iters", "5", "--budget-secs", "1"])
    assert info.value.code == EXIT_CONFIG
    assert main(["run", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--experiment", "example1", "--schedule", "1,2", "--out", str(tmp_path)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_CONFIG


def test_cli_zero_iterations_exit_code(tmp_path):
    assert main(["run", "--experiment", "example1", "--iters", "0", "--out", str(tmp_path)]) == EXIT_DIVERGED


def test_cli_io_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--experiment", "example1", "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["report", "--out", str(tmp_path / "missing")]) == EXIT_IO
    assert main(["run", "--experiment", "nmr", "--spectrum", str(tmp_path / "none.txt"),
                 "--catalog", str(tmp_path / "none.json"), "--out", str(tmp_path / "n")]) == EXIT_IO


def test_gen_fixtures_round_trip(tmp_path, capsys):
    assert main(["gen-fixtures", "--out", str(tmp_path)]) == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert len(printed) == 4
    assert np.loadtxt(tmp_path / "model1.txt").shape == (1000,)
    assert np.loadtxt(tmp_path / "model2.txt").shape == (100,)
    spectrum = read_spectrum(tmp_path / "spectrum.txt")
    catalog = read_catalog(tmp_path / "catalog.json")
    assert spectrum.n > 0 and len(catalog) == 2
    assert gen_fixtures(str(tmp_path / "again")) and \
        (tmp_path / "again" / "spectrum.txt").read_bytes() == (tmp_path / "spectrum.txt").read_bytes()


def test_cli_report_rerenders(tmp_path, capsys):
    main(["run", "--experiment", "example1", "--out", str(tmp_path)])
    first = capsys.readouterr().out
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out == first
