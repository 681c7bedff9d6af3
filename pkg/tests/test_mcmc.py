import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mccavi.mcmc import (ChainState, ConstraintViolation, GibbsRule, MhProposal, MhRule, adapt_scale,
                         mh_update, mwg_sweep, run_chain)


def std_normal(x):
    return -0.5 * np.asarray(x) ** 2


def test_flat_target_always_accepts(rng):
    flat = lambda x: np.zeros(np.shape(x))
    values, accepted = mh_update(np.zeros(1000), MhProposal("rw", 1.0), flat, rng)
    assert accepted.all()
    assert np.all(values != 0.0)


def test_out_of_support_proposal_is_rejected(rng):
    positive = lambda x: np.where(np.asarray(x) > 0, 0.0, -np.inf)
    # from 1e-3 with scale 100 about half the proposals land below zero
    values, accepted = mh_update(np.full(2000, 1e-3), MhProposal("rw", 100.0), positive, rng)
    assert np.all(values > 0)
    assert np.all(values[~accepted] == 1e-3)
    assert 0.3 < accepted.mean() < 0.7


def test_scalar_update_returns_python_types(rng):
    value, accepted = mh_update(0.5, MhProposal(), std_normal, rng)
    assert isinstance(value, float) and isinstance(accepted, bool)


def test_random_walk_standard_normal_long_run():
    rng = np.random.default_rng(7)
    chain = ChainState({"x": 0.0}, adapting=False)
    rule = MhRule("x", MhProposal("rw", 2.4), lambda v, c: std_normal(c))
    draws = np.array(run_chain(chain, [rule], 100_000, rng, record=lambda v: float(v["x"])))
    assert abs(draws.mean()) < 0.03
    assert 0.3 <= chain.acceptance_rate("x") <= 0.6
    assert draws.var() == pytest.approx(1.0, abs=0.05)


def test_log_scale_random_walk_includes_jacobian():
    # Gamma(3, 1) target sampled on the log scale
    rng = np.random.default_rng(3)
    log_gamma = lambda x: np.where(x > 0, 2.0 * np.log(np.maximum(x, 1e-300)) - x, -np.inf)
    x = np.ones(4000)
    for _ in range(400):
        x, _ = mh_update(x, MhProposal("rw", 0.8, transform="log"), log_gamma, rng)
    assert x.mean() == pytest.approx(3.0, abs=0.1)
    assert x.var() == pytest.approx(3.0, rel=0.1)


def test_truncated_random_walk_has_proposal_correction():
    # uniform target on [0, 1]; without the normalising-constant ratio the
    # truncated walk piles up mass in the middle
    rng = np.random.default_rng(5)
    flat = lambda x: np.where((np.asarray(x) >= 0) & (np.asarray(x) <= 1), 0.0, -np.inf)
    x = rng.uniform(size=5000)
    for _ in range(200):
        x, _ = mh_update(x, MhProposal("tn_rw", 0.7, lower=0.0, upper=1.0), flat, rng)
    hist = np.histogram(x, bins=5, range=(0, 1))[0] / x.size
    assert np.allclose(hist, 0.2, atol=0.02)


def test_detailed_balance_on_five_states():
    # piecewise-constant density on [0, 5) with an independent uniform proposal:
    # the cell index is itself a Markov chain with stationary law pi
    pi = np.array([0.1, 0.3, 0.15, 0.25, 0.2])
    log_target = lambda x: np.log(pi[np.clip(np.floor(x).astype(int), 0, 4)])
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 5, size=1000)
    counts = np.zeros((5, 5))
    for _ in range(1000):
        new, _ = mh_update(x, MhProposal("uniform", lower=0.0, upper=5.0), log_target, rng)
        np.add.at(counts, (np.floor(x).astype(int), np.floor(new).astype(int)), 1)
        x = new
    P = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(pi @ P - pi).max() < 1e-2
    flux = pi[:, None] * P
    assert np.abs(flux - flux.T).max() < 1e-2


def _bivariate_gibbs(rho):
    sd = math.sqrt(1 - rho * rho)
    return [GibbsRule("x", lambda v, r: rho * v["y"] + sd * r.normal()),
            GibbsRule("y", lambda v, r: rho * v["x"] + sd * r.normal())]


def test_gibbs_lag_one_autocorrelation():
    rng = np.random.default_rng(2)
    chain = ChainState({"x": 0.0, "y": 0.0})
    xs = np.array(run_chain(chain, _bivariate_gibbs(0.5), 100_000, rng, record=lambda v: float(v["x"])))
    lag1 = np.corrcoef(xs[:-1], xs[1:])[0, 1]
    assert lag1 == pytest.approx(0.25, abs=0.05)


def test_degenerate_conditionals_leave_state_unchanged(rng):
    chain = ChainState({"a": 1.5, "b": -2.0})
    rules = [GibbsRule("a", lambda v, r: 1.5), GibbsRule("b", lambda v, r: -2.0)]
    mwg_sweep(chain, rules, rng)
    assert chain.values["a"] == 1.5 and chain.values["b"] == -2.0


def test_adapt_scale_fixed_point_and_monotonicity():
    assert adapt_scale(0.7, 0.45, 0.45) == pytest.approx(0.7)
    assert adapt_scale(0.7, 0.6, 0.45) > 0.7
    assert adapt_scale(0.7, 0.2, 0.45) < 0.7
    rates = np.linspace(0, 1, 11)
    assert np.all(np.diff(adapt_scale(1.0, rates, 0.45)) > 0)
    assert adapt_scale(1e-8, 0.0, 0.45) > 0


def test_adaptation_reaches_target_rate():
    rng = np.random.default_rng(4)
    chain = ChainState({"x": 0.0})
    rule = MhRule("x", MhProposal("rw", 0.05), lambda v, c: std_normal(c))
    run_chain(chain, [rule], 8000, rng)
    before = int(chain.accepted["x"])
    run_chain(chain, [rule], 2000, rng)
    rate = (int(chain.accepted["x"]) - before) / 2000
    assert 0.35 <= rate <= 0.55


def test_frozen_scales_are_immutable():
    rng = np.random.default_rng(8)
    chain = ChainState({"x": 0.0})
    rule = MhRule("x", MhProposal("rw", 0.05), lambda v, c: std_normal(c))
    run_chain(chain, [rule], 300, rng, burn_in=100)
    assert not chain.adapting
    frozen = np.copy(chain.scales["x"])
    run_chain(chain, [rule], 500, rng)
    assert np.array_equal(chain.scales["x"], frozen)
    assert np.all(chain.accepted["x"] <= chain.proposed["x"])


def test_wrong_conditional_is_a_hard_error(rng):
    chain = ChainState({"x": 0.5}, constraint=lambda v: 0 < v["x"] < 1)
    with pytest.raises(ConstraintViolation):
        mwg_sweep(chain, [GibbsRule("x", lambda v, r: 2.0)], rng)


@settings(max_examples=25, deadline=None)
@given(lo=st.floats(-5, 5), width=st.floats(0.01, 4), centre=st.floats(-3, 3),
       kind=st.sampled_from(["rw", "uniform", "tn_rw"]), seed=st.integers(0, 2**31))
def test_sweeps_preserve_declared_support(lo, width, centre, kind, seed):
    hi = lo + width
    rng = np.random.default_rng(seed)

    def target(v, c):
        c = np.asarray(c)
        return np.where((c > lo) & (c < hi), -0.5 * (c - centre) ** 2, -np.inf)

    proposal = MhProposal(kind, 0.5 * width, lower=lo, upper=hi) if kind != "rw" else MhProposal("rw", width)
    chain = ChainState({"x": np.full(3, lo + 0.5 * width)},
                       constraint=lambda v: bool(np.all((v["x"] > lo) & (v["x"] < hi))))
    run_chain(chain, [MhRule("x", proposal, target)], 100, rng)
    assert np.all((chain.values["x"] > lo) & (chain.values["x"] < hi))


def test_copy_is_independent(rng):
    chain = ChainState({"x": [0.0, 1.0]})
    rule = MhRule("x", MhProposal(), lambda v, c: std_normal(c))
    mwg_sweep(chain, [rule], rng)
    twin = chain.copy()
    mwg_sweep(twin, [rule], rng)
    assert not np.shares_memory(twin.values["x"], chain.values["x"])
    assert int(chain.proposed["x"][0]) == 1 and int(twin.proposed["x"][0]) == 2


def test_proposal_validation():
    with pytest.raises(ValueError):
        MhProposal("rw", 0.0)
    with pytest.raises(ValueError):
        MhProposal("leapfrog")
    with pytest.raises(ValueError):
        MhProposal("uniform", lower=1.0, upper=0.0)
