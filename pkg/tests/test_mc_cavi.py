import json
import math
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mccavi.mc_cavi import (McCaviRun, McSchedule, delta_elbo_rule, estimate_block_expectations,
                            first_plateau, plateau_detect, run_mc_cavi, write_manifest)
from mccavi.mcmc import ChainState, GibbsRule
from mccavi.models.model1 import Model1, generate
from mccavi.models.model2 import Model2
from mccavi.models import model2 as m2
from mccavi.vi import ConfigurationError, ModelSpec, SweepTrace, VariationalState, run_cavi


@pytest.fixture(scope="module")
def model1():
    return Model1(generate(1000, np.random.default_rng(1)))


def test_point_mass_conditionals(rng):
    chain = ChainState({"a": 0.0, "b": 0.0})
    rules = [GibbsRule("a", lambda v, r: 2.0), GibbsRule("b", lambda v, r: -1.0)]
    stats = {"a": lambda v: v["a"], "ab": lambda v: v["a"] * v["b"], "b2": lambda v: v["b"] ** 2}
    for n in (1, 7, 100):
        est = estimate_block_expectations(chain, rules, n, stats, rng)
        assert est == {"a": 2.0, "ab": -2.0, "b2": 1.0}


def test_single_sweep_average_is_the_final_state(rng):
    chain = ChainState({"x": 0.0})
    rules = [GibbsRule("x", lambda v, r: r.normal())]
    est = estimate_block_expectations(chain, rules, 1, {"x": lambda v: v["x"], "x2": lambda v: v["x"] ** 2}, rng)
    assert est["x"] == float(chain.values["x"])
    assert est["x2"] == pytest.approx(float(chain.values["x"]) ** 2)


def test_batched_gibbs_draws_match_sequential_stream():
    draw = lambda v, r: r.gamma(3.0, 0.5)
    many = lambda v, m, r: r.gamma(3.0, 0.5, size=m)
    stats = {"t": lambda v: v["t"]}
    a = estimate_block_expectations(ChainState({"t": 1.0}), [GibbsRule("t", draw)], 500, stats,
                                    np.random.default_rng(9))
    b = estimate_block_expectations(ChainState({"t": 1.0}), [GibbsRule("t", draw, many)], 500, stats,
                                    np.random.default_rng(9))
    assert a["t"] == pytest.approx(b["t"], rel=1e-12)


def test_memory_does_not_grow_with_sample_size(model1):
    spec = model1.mc_spec()
    block = spec.blocks[0]
    state = model1.initial_state()

    def peak(n):
        chain = block.init_chain()
        tracemalloc.start()
        estimate_block_expectations(chain, block.rules(state), n, block.statistics, np.random.default_rng(0))
        _, top = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        return top

    assert peak(1_000_000) < 2 * peak(5_000) + 100_000


def test_pair_block_matches_quadrature_oracle(frozen):
    # 200 independent copies of each residual give an honest standard error
    cases = frozen["pair_block"]
    copies = 200
    resid = np.repeat([c["resid"] for c in cases], copies)
    model = Model2(resid)
    state = VariationalState(moments={"E_vartheta": 0.0, "E_theta": cases[0]["theta"]})
    chain = model.pair_chain()
    rules = model.pair_rules(state)
    rng = np.random.default_rng(21)
    estimate_block_expectations(chain, rules, 200, {}, rng)
    est = estimate_block_expectations(chain, rules, 5_000,
                                      {"k": lambda v: v["kappa"], "k2": lambda v: v["kappa"] ** 2,
                                       "p": lambda v: v["psi"]}, rng)
    for i, c in enumerate(cases):
        rows = slice(i * copies, (i + 1) * copies)
        for key, name in (("k", "E_kappa"), ("k2", "E_kappa2"), ("p", "E_psi")):
            vals = est[key][rows]
            se = vals.std(ddof=1) / math.sqrt(copies)
            assert abs(vals.mean() - c[name]) < 3 * se + 1e-12, (c["resid"], name)


def test_model1_schedule_gives_expected_precision(model1):
    _, trace = run_mc_cavi(model1.mc_spec(), model1.initial_state(), McSchedule(10, 10, 1000), 50,
                           np.random.default_rng(1))
    assert len(trace) == 50
    assert np.all(trace.column("N")[:10] == 10) and np.all(trace.column("N")[10:] == 1000)
    tail = trace.column("E_tau")[-10:].mean()
    assert float(f"{tail:.2g}") == 0.01


def test_model1_plateau_is_found_early(model1):
    _, trace = run_mc_cavi(model1.mc_spec(), model1.initial_state(), McSchedule(10, 10, 1000), 50,
                           np.random.default_rng(1))
    # two windows of 10 are needed, so 20 is the earliest possible answer
    k = first_plateau(trace, "E_tau", 10, 1e-3)
    assert k is not None and 20 <= k <= 25


def test_all_closed_form_model_reproduces_cavi(model1):
    spec = model1.cavi_spec()
    exact, ctrace = run_cavi(spec, model1.initial_state())
    state, trace = run_mc_cavi(spec, model1.initial_state(), McSchedule(10, 0, 1000), len(ctrace), rng=0)
    assert state.moments == exact.moments
    for col in ("zeta", "theta", "E_tau"):
        assert np.array_equal(trace.column(col), ctrace.column(col))


def test_runs_are_reproducible(model1):
    runs = [run_mc_cavi(model1.mc_spec(), model1.initial_state(), McSchedule(10, 5, 100), 20,
                        np.random.default_rng(5))[1] for _ in range(2)]
    assert np.array_equal(runs[0].column("E_tau"), runs[1].column("E_tau"))


def test_warm_and_cold_starts_reach_the_same_fixed_point():
    y = m2.generate(100, np.random.default_rng(1))
    model = Model2(y)
    tails = {}
    for warm in (True, False):
        _, trace = run_mc_cavi(model.mc_cavi_spec(), model.initial_state(), McSchedule(50, 20, 50), 80,
                               np.random.default_rng(2), warm_start=warm)
        tails[warm] = trace.column("E_vartheta")[30:]
    se = math.sqrt(sum(t.var(ddof=1) / t.size for t in tails.values()))
    # neighbouring sweeps are correlated; inflate by a generous factor rather than fit an IAT
    assert abs(tails[True].mean() - tails[False].mean()) < 3 * 5 * se


def test_pair_chain_persists_between_sweeps():
    model = Model2(m2.generate(20, np.random.default_rng(0)))
    run = McCaviRun(model.mc_cavi_spec(), model.initial_state(), McSchedule(5, 1, 5), np.random.default_rng(0))
    run.step()
    chain = run.chains["kappa_psi"]
    proposed = int(chain.proposed["psi"][0])
    run.step()
    assert run.chains["kappa_psi"] is chain
    assert int(chain.proposed["psi"][0]) == proposed + 5
    assert not chain.adapting


def test_schedule_validation():
    with pytest.raises(ValueError):
        McSchedule(100, 10, 10)
    with pytest.raises(ValueError):
        McSchedule(0, 10, 10)
    with pytest.raises(ValueError):
        McSchedule(1, -1, 10)
    assert McSchedule.parse("10,150,1e5") == McSchedule(10, 150, 100_000)
    s = McSchedule(3, 2, 7)
    assert [s.n_at(k) for k in (1, 2, 3, 4)] == [3, 3, 7, 7]


def test_total_iters_must_cover_burn_in(model1):
    with pytest.raises(ValueError):
        run_mc_cavi(model1.mc_spec(), model1.initial_state(), McSchedule(10, 30, 100), 20, rng=0)


def test_plateau_examples():
    assert plateau_detect(np.full(20, 0.5), "x", 10, 1e-6)
    drift = np.linspace(0, 1, 40)
    assert not plateau_detect(drift, "x", 10, 0.1)
    with pytest.raises(ValueError):
        plateau_detect(np.zeros(15), "x", 10, 1.0)


@settings(max_examples=60, deadline=None)
@given(level=st.floats(-1e3, 1e3), noise=st.floats(0, 1), band=st.floats(1e-6, 10), seed=st.integers(0, 999))
def test_plateau_agrees_with_its_definition(level, noise, band, seed):
    values = level + noise * np.random.default_rng(seed).uniform(-1, 1, size=30)
    last, prev = values[-10:], values[-20:-10]
    expected = np.ptp(last) <= band and abs(last.mean() - prev.mean()) <= band / 2
    assert plateau_detect(values, "x", 10, band) == expected


def _mc_step(spec):
    def update(state, n, rng):
        run = McCaviRun(spec, state, McSchedule(n, 0, n), rng)
        return run.step()
    return update


def test_delta_elbo_at_fixed_point_says_stop(model1):
    state, _ = run_cavi(model1.cavi_spec(), model1.initial_state(), rel_tol=1e-14)
    mu, sd, stop = delta_elbo_rule(model1.mc_spec(), state, _mc_step(model1.mc_spec()), 10_000,
                                   np.random.default_rng(0), K=3.0, nu=1e-2)
    assert stop
    assert abs(mu) <= 2 * sd / math.sqrt(30) + 1e-9 or abs(mu) < 1e-6


def test_delta_elbo_far_from_optimum_keeps_going(model1):
    spec = model1.cavi_spec()
    from mccavi.vi import cavi_update_block
    state = cavi_update_block(spec, cavi_update_block(spec, model1.initial_state(), 0), 1)
    mu, sd, stop = delta_elbo_rule(model1.mc_spec(), state, _mc_step(model1.mc_spec()), 100,
                                   np.random.default_rng(0))
    assert mu > 3 * sd
    assert not stop


def test_delta_elbo_spread_shrinks_with_sample_size(model1):
    spec = model1.cavi_spec()
    from mccavi.vi import cavi_update_block
    state = cavi_update_block(spec, cavi_update_block(spec, model1.initial_state(), 0), 1)
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(20):
        _, small, _ = delta_elbo_rule(model1.mc_spec(), state, _mc_step(model1.mc_spec()), 50, rng)
        _, large, _ = delta_elbo_rule(model1.mc_spec(), state, _mc_step(model1.mc_spec()), 100, rng)
        ratios.append(large / small)
    assert np.median(ratios) < 1.0


def test_delta_elbo_needs_an_elbo():
    spec = ModelSpec(blocks=[], monitor=lambda s: {})
    with pytest.raises(ConfigurationError):
        delta_elbo_rule(spec, VariationalState(), lambda s, n, r: s, 10, 0)


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "manifest.json"
    write_manifest(path, seed=3, schedule=McSchedule(10, 10, 1000), iterations=np.int64(50),
                   elapsed=np.float64(0.25), values=np.arange(3))
    data = json.loads(path.read_text())
    assert data == {"seed": 3, "iterations": 50, "elapsed": 0.25, "values": [0, 1, 2],
                    "schedule": {"burnin_n": 10, "burnin_iters": 10, "main_n": 1000}}


def test_trace_carries_sample_size_column(model1):
    _, trace = run_mc_cavi(model1.mc_spec(), model1.initial_state(), McSchedule(2, 1, 3), 3, rng=0)
    assert isinstance(trace, SweepTrace)
    assert list(trace.column("N")) == [2.0, 3.0, 3.0]
