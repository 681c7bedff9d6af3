"""Monte Carlo coordinate ascent: CAVI with inner MCMC estimates.

Closed-form blocks are updated exactly. For every other block an inner
Metropolis-within-Gibbs chain targeting that block's current variational
law is advanced ``N`` sweeps, and only running averages of the block's
declared statistics are kept. Chains persist between outer sweeps.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .mcmc import ChainState, GibbsRule, mwg_sweep
from .stats import as_generator
from .vi import (ConfigurationError, ModelSpec, SweepTrace, VariationalState, _apply,
                 _elbo_or_none, cavi_update_block)

_DRAW_CHUNK = 4096


@dataclass(frozen=True)
class McSchedule:
    """Sample size ``burnin_n`` for the first ``burnin_iters`` sweeps, ``main_n`` after."""

    burnin_n: int = 10
    burnin_iters: int = 10
    main_n: int = 1000

    def __post_init__(self):
        if self.burnin_n < 1 or self.main_n < 1:
            raise ValueError("Monte Carlo sample sizes must be positive")
        if self.burnin_iters < 0:
            raise ValueError("burnin_iters must be non-negative")
        if self.burnin_n > self.main_n:
            raise ValueError("the sample size may not decrease after burn-in")

    def n_at(self, k: int) -> int:
        """Sample size used at outer sweep ``k`` (1-based)."""
        return self.burnin_n if k <= self.burnin_iters else self.main_n

    @classmethod
    def parse(cls, text: str) -> "McSchedule":
        a, b, c = (int(float(v)) for v in text.split(","))
        return cls(a, b, c)


def estimate_block_expectations(chain: ChainState, rules, n: int, stats: dict, rng) -> dict:
    """Advances ``chain`` by ``n`` sweeps and returns running averages of ``stats``.

    Only the running sums are held, so memory does not grow with ``n``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = as_generator(rng)
    sums = {}
    if len(rules) == 1 and isinstance(rules[0], GibbsRule) and rules[0].draw_many is not None:
        rule = rules[0]
        done = 0
        while done < n:
            m = min(_DRAW_CHUNK, n - done)
            draws = np.asarray(rule.draw_many(chain.values, m, rng), dtype=float)
            for name, fn in stats.items():
                s = np.sum(fn({rule.name: draws}), axis=0)
                sums[name] = s if name not in sums else sums[name] + s
            chain.values[rule.name] = np.asarray(draws[-1], dtype=float).reshape(chain.values[rule.name].shape)
            done += m
        chain.check()
    else:
        for _ in range(n):
            mwg_sweep(chain, rules, rng)
            for name, fn in stats.items():
                v = np.asarray(fn(chain.values), dtype=float)
                sums[name] = v.copy() if name not in sums else sums[name] + v
    return {k: (v / n if np.ndim(v) else float(v) / n) for k, v in sums.items()}


@dataclass
class McCaviRun:
    """Mutable state of one MC-CAVI run; :meth:`step` performs one outer sweep."""

    model: ModelSpec
    state: VariationalState
    schedule: McSchedule
    rng: np.random.Generator
    chains: dict = field(default_factory=dict)
    trace: SweepTrace = field(default_factory=SweepTrace)
    warm_start: bool = True
    record_elbo: bool = False

    def __post_init__(self):
        self.rng = as_generator(self.rng)

    def chain_for(self, block):
        if not self.warm_start or block.name not in self.chains:
            self.chains[block.name] = block.init_chain()
        return self.chains[block.name]

    def step(self):
        k = self.state.sweep + 1
        n = self.schedule.n_at(k)
        for i, block in enumerate(self.model.blocks):
            if block.closed_form:
                self.state = cavi_update_block(self.model, self.state, i)
                continue
            chain = self.chain_for(block)
            if k > self.schedule.burnin_iters:
                chain.freeze()
            averages = estimate_block_expectations(chain, block.rules(self.state), n,
                                                   block.statistics, self.rng)
            self.state = _apply(self.state.copy(), block, block.absorb(self.state, averages))
        self.state.sweep = k
        stats = dict(self.model.monitor(self.state))
        stats["N"] = n
        elbo = _elbo_or_none(self.model, self.state) if self.record_elbo else None
        self.trace.append(stats, elbo)
        return self.state


def run_mc_cavi(model: ModelSpec, init: VariationalState, schedule: McSchedule, total_iters: int,
                rng, warm_start: bool = True, budget_secs: float | None = None,
                record_elbo: bool = False, on_sweep=None):
    """Runs MC-CAVI for ``total_iters`` outer sweeps (or until the time budget).

    The clock is checked once per outer sweep, so the trace only ever holds
    completed sweeps. ``on_sweep(state)`` is called after every sweep.
    """
    if total_iters < schedule.burnin_iters and budget_secs is None:
        raise ValueError("total_iters must cover the burn-in iterations")
    run = McCaviRun(model, init.copy(), schedule, rng, warm_start=warm_start, record_elbo=record_elbo)
    t0 = time.perf_counter()
    for _ in range(total_iters):
        if budget_secs is not None and time.perf_counter() - t0 >= budget_secs:
            break
        run.step()
        if on_sweep is not None:
            on_sweep(run.state)
    return run.state, run.trace


def plateau_detect(trace: SweepTrace, statistic: str, window: int, band: float) -> bool:
    """True when the trace tail fluctuates within ``band`` around a fixed level.

    The last ``window`` values must span at most ``band`` and the means of the
    last two windows may differ by at most ``band / 2``.
    """
    values = trace.column(statistic) if isinstance(trace, SweepTrace) else np.asarray(trace, float)
    if window < 1 or len(values) < 2 * window:
        raise ValueError("plateau detection needs at least two full windows")
    last = values[-window:]
    prev = values[-2 * window:-window]
    return bool(np.ptp(last) <= band and abs(last.mean() - prev.mean()) <= band / 2)


def first_plateau(trace: SweepTrace, statistic: str, window: int, band: float):
    """Earliest sweep count at which :func:`plateau_detect` holds, or None."""
    values = trace.column(statistic)
    for k in range(2 * window, len(values) + 1):
        if plateau_detect(values[:k], statistic, window, band):
            return k
    return None


def delta_elbo_rule(model: ModelSpec, state: VariationalState, update, n: int, rng,
                    K: float = 3.0, nu: float = 1e-2, replicates: int = 30):
    """Replicated ELBO change of a Monte Carlo block update.

    ``update(state, n, rng)`` returns the updated state. Returns the mean and
    standard deviation of the change over ``replicates`` independent updates
    and the stopping flag ``sd <= nu and |mean| < K * sd``.
    """
    if model.elbo is None:
        raise ConfigurationError(f"{model.name} has no ELBO to monitor")
    rng = as_generator(rng)
    base = model.elbo(state)
    deltas = np.array([model.elbo(update(state.copy(), n, rng)) - base for _ in range(replicates)])
    mu = float(deltas.mean())
    sd = float(deltas.std(ddof=1))
    return mu, sd, bool(sd <= nu and abs(mu) < K * sd)


def write_manifest(path, *, seed, schedule=None, iterations=None, **extra):
    manifest = {"seed": seed, "iterations": iterations}
    if schedule is not None:
        manifest["schedule"] = asdict(schedule)
    manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    raise TypeError(type(obj))
