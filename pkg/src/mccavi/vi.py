"""Mean-field model description, ELBO and the deterministic CAVI driver.

Blocks exchange named expectations (``E_tau``, ``E_vartheta2`` ...) rather
than densities. A closed-form block turns the current moments into a new
factor plus its moments; a Monte Carlo block (see :mod:`mccavi.mc_cavi`)
produces the same moments from an inner Markov chain.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .stats import as_generator


class ConfigurationError(ValueError):
    """The model or state does not support the requested operation."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


@dataclass
class VariationalState:
    """Per-block factors plus the cached moments every update reads."""

    moments: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)
    sweep: int = 0

    def copy(self):
        return VariationalState(
            moments={k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.moments.items()},
            factors=dict(self.factors),
            sweep=self.sweep,
        )

    def __getitem__(self, key):
        try:
            return self.moments[key]
        except KeyError:
            raise ConfigurationError(f"moment {key!r} is not cached in the variational state") from None


@dataclass
class ClosedFormBlock:
    """``update(state)`` returns ``(factor, moments)`` for this block."""

    name: str
    update: Callable
    closed_form = True


@dataclass
class MonteCarloBlock:
    """A block whose factor is only available through an inner MCMC chain.

    ``rules(state)`` builds the inner-chain update rules from the current
    moments; ``statistics`` maps names to functions of the chain values whose
    running averages are kept; ``finish(state, averages)`` turns the averages
    into cached moments (identity by default).
    """

    name: str
    init_chain: Callable
    rules: Callable
    statistics: dict
    finish: Callable | None = None
    closed_form = False

    def absorb(self, state, averages):
        moments = self.finish(state, averages) if self.finish is not None else averages
        return None, moments


@dataclass
class ModelSpec:
    """A target split into blocks updated in declaration order.

    ``monitor(state)`` returns the model-declared convergence statistics.
    ``elbo(state)`` is the analytic ELBO where available. The Monte Carlo ELBO
    needs ``log_joint(z)``, ``sample_q(state, n, rng)`` and ``log_q(state, z)``.
    """

    blocks: list
    monitor: Callable
    elbo: Callable | None = None
    log_joint: Callable | None = None
    sample_q: Callable | None = None
    log_q: Callable | None = None
    name: str = "model"

    @property
    def closed_form_index(self):
        return {i for i, b in enumerate(self.blocks) if b.closed_form}

    def block_index(self, name):
        for i, b in enumerate(self.blocks):
            if b.name == name:
                return i
        raise KeyError(name)


class SweepTrace:
    """Append-only per-sweep record of monitored statistics."""

    def __init__(self):
        self.records: list[dict] = []
        self.elbos: list[float | None] = []
        self.times: list[float] = []
        self._t0 = time.perf_counter()

    def append(self, stats: dict, elbo=None):
        self.records.append({k: float(v) for k, v in stats.items()})
        self.elbos.append(None if elbo is None else float(elbo))
        self.times.append(time.perf_counter() - self._t0)

    def __len__(self):
        return len(self.records)

    @property
    def columns(self):
        cols = []
        for r in self.records:
            for k in r:
                if k not in cols:
                    cols.append(k)
        if any(e is not None for e in self.elbos):
            cols.append("elbo")
        return cols

    def column(self, name):
        if name == "elbo":
            return np.array([np.nan if e is None else e for e in self.elbos])
        return np.array([r.get(name, np.nan) for r in self.records])

    def last(self, name):
        return self.records[-1][name]

    def to_csv(self, path):
        """One row per sweep; floats written with ``repr`` so reruns are byte-identical."""
        cols = self.columns
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep"] + cols)
            for k in range(len(self)):
                row = [k + 1]
                for c in cols:
                    v = self.elbos[k] if c == "elbo" else self.records[k].get(c)
                    row.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                elbo = row.pop("elbo", None)
                row.pop("sweep", None)
                trace.records.append({k: float(v) for k, v in row.items() if v != ""})
                trace.elbos.append(float(elbo) if elbo else None)
                trace.times.append(math.nan)
        return trace


def _apply(state, block, result):
    factor, moments = result
    state.factors[block.name] = factor
    state.moments.update(moments)
    return state


def cavi_update_block(model: ModelSpec, state: VariationalState, i: int) -> VariationalState:
    """Replaces block ``i`` by its exact coordinate-ascent optimum."""
    block = model.blocks[i]
    if not block.closed_form:
        raise ConfigurationError(f"block {block.name!r} has no closed-form update")
    new = state.copy()
    return _apply(new, block, block.update(new))


def _monitor(model, state):
    try:
        return model.monitor(state)
    except ConfigurationError:
        return None


def _relative_change(old, new):
    if old is None:
        return math.inf
    worst = 0.0
    for k, v in new.items():
        o = old.get(k)
        if o is None:
            return math.inf
        denom = abs(o) if o != 0 else 1.0
        worst = max(worst, abs(v - o) / denom)
    return worst


def _elbo_or_none(model, state):
    if model.elbo is None:
        return None
    try:
        return model.elbo(state)
    except ConfigurationError:
        return None


def run_cavi(model: ModelSpec, init: VariationalState, rel_tol: float = 1e-4,
             max_sweeps: int = 10_000):
    """Full CAVI sweeps until every monitored statistic moves by < ``rel_tol``.

    The sweep count includes the sweep whose change fell below tolerance.
    Raises :class:`ConvergenceError` (carrying the trace) after ``max_sweeps``.
    """
    if len(model.closed_form_index) != len(model.blocks):
        raise ConfigurationError("run_cavi needs every block in closed form")
    state = init.copy()
    trace = SweepTrace()
    prev = _monitor(model, state)
    for _ in range(max_sweeps):
        for i in range(len(model.blocks)):
            state = cavi_update_block(model, state, i)
        state.sweep += 1
        stats = model.monitor(state)
        trace.append(stats, _elbo_or_none(model, state))
        if _relative_change(prev, stats) < rel_tol:
            return state, trace
        prev = stats
    raise ConvergenceError(f"CAVI did not converge in {max_sweeps} sweeps", trace, state)


def elbo(model: ModelSpec, state: VariationalState, n_samples: int | None = None, rng=None,
         return_se: bool = False):
    """Analytic ELBO, or an unbiased Monte Carlo estimate when ``n_samples`` is given."""
    if n_samples is None:
        if model.elbo is None:
            raise ConfigurationError(f"{model.name} has no closed-form ELBO")
        return model.elbo(state)
    if model.log_joint is None or model.sample_q is None or model.log_q is None:
        raise ConfigurationError(f"{model.name} cannot estimate the ELBO by Monte Carlo")
    z = model.sample_q(state, n_samples, as_generator(rng))
    w = np.asarray(model.log_joint(z)) - np.asarray(model.log_q(state, z))
    est = float(np.mean(w))
    if return_se:
        se = float(np.std(w, ddof=1) / math.sqrt(len(w))) if len(w) > 1 else math.inf
        return est, se
    return est
