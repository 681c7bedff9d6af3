"""Metropolis-Hastings and Metropolis-within-Gibbs kernels.

Coordinates are named and may be vector valued; the entries of a vector
coordinate must be conditionally independent given the other coordinates,
so that updating them together is the same as updating them one at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .stats import as_generator, log_diff_normal_cdf, sample_truncated_normal

PROPOSAL_KINDS = ("rw", "uniform", "tn_rw")


class ConstraintViolation(RuntimeError):
    """A coordinate update produced a state outside the target's support."""


@dataclass(frozen=True)
class MhProposal:
    """Proposal mechanism for one coordinate.

    ``rw``      normal random walk on the identity or log scale
    ``uniform`` independent U(lower, upper)
    ``tn_rw``   normal random walk truncated to [lower, upper]
    """

    kind: str = "rw"
    scale: float = 1.0
    transform: str = "identity"
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.kind not in PROPOSAL_KINDS:
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("proposal scale must be positive")
        if self.transform not in ("identity", "log"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.kind != "rw" and not self.lower < self.upper:
            raise ValueError("bounded proposals need lower < upper")


def _propose(x, proposal, scale, rng):
    """Returns the candidate and log q(x | y) - log q(y | x)."""
    if proposal.kind == "rw":
        eps = rng.normal(size=x.shape)
        if proposal.transform == "log":
            with np.errstate(divide="ignore"):
                y = np.exp(np.log(x) + scale * eps)
                return y, np.log(y) - np.log(x)
        return x + scale * eps, np.zeros(x.shape)
    if proposal.kind == "uniform":
        y = rng.uniform(proposal.lower, proposal.upper, size=x.shape)
        inside = (x >= proposal.lower) & (x <= proposal.upper)
        return y, np.where(inside, 0.0, -np.inf)
    lo, hi = proposal.lower, proposal.upper
    y = np.asarray(sample_truncated_normal(x, scale, lo, hi, rng), dtype=float).reshape(x.shape)
    log_z_x = log_diff_normal_cdf((lo - x) / scale, (hi - x) / scale)
    log_z_y = log_diff_normal_cdf((lo - y) / scale, (hi - y) / scale)
    return y, np.asarray(log_z_x - log_z_y)


def mh_update(current, proposal: MhProposal, log_target: Callable, rng, scale=None,
              current_log_target=None):
    """One Metropolis-Hastings step, elementwise over array-valued ``current``.

    Returns ``(value, accepted)``. Candidates with ``log_target == -inf`` are
    always rejected.
    """
    rng = as_generator(rng)
    x = np.asarray(current, dtype=float)
    s = proposal.scale if scale is None else np.asarray(scale, dtype=float)
    y, log_corr = _propose(x, proposal, s, rng)
    lt_x = np.asarray(log_target(x) if current_log_target is None else current_log_target, dtype=float)
    lt_y = np.asarray(log_target(y), dtype=float)
    with np.errstate(invalid="ignore"):
        log_alpha = lt_y - lt_x + log_corr
    log_alpha = np.where(np.isfinite(lt_y), log_alpha, -np.inf)
    accepted = np.log(rng.uniform(size=x.shape)) < log_alpha
    value = np.where(accepted, y, x)
    if value.ndim == 0:
        return float(value), bool(accepted)
    return value, accepted


def adapt_scale(scale, observed_rate, target_rate, gain: float = 1.0):
    """Multiplicative Robbins-Monro style scale adaptation."""
    return scale * np.exp(gain * (np.asarray(observed_rate) - target_rate))


@dataclass
class GibbsRule:
    """Exact draw from the full conditional of coordinate ``name``.

    ``draw(values, rng)`` returns the new value. ``draw_many(values, n, rng)``
    may be supplied when the conditional does not depend on the coordinate's
    own previous value and the chain has no other coordinates, which lets
    ``n`` sweeps be drawn in one call.
    """

    name: str
    draw: Callable
    draw_many: Callable | None = None


@dataclass
class MhRule:
    """MH update of coordinate ``name``; ``log_target(values, candidate)``."""

    name: str
    proposal: MhProposal
    log_target: Callable


@dataclass
class ChainState:
    values: dict
    scales: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    adapting: bool = True
    target_rate: float = 0.45
    batch_size: int = 50
    gain: float = 1.0
    constraint: Callable | None = None
    _batch_acc: dict = field(default_factory=dict, repr=False)
    _batch_n: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = {k: np.array(v, dtype=float) for k, v in self.values.items()}

    def freeze(self):
        """Stop adapting; proposal scales are immutable from now on."""
        self.adapting = False

    def acceptance_rate(self, name):
        n = self.proposed.get(name)
        if n is None:
            return None
        return self.accepted[name] / np.maximum(n, 1)

    def check(self):
        if self.constraint is not None and not self.constraint(self.values):
            raise ConstraintViolation("chain state violates the declared constraints")

    def copy(self):
        return ChainState(
            values={k: v.copy() for k, v in self.values.items()},
            scales={k: np.copy(v) for k, v in self.scales.items()},
            accepted={k: v.copy() for k, v in self.accepted.items()},
            proposed={k: v.copy() for k, v in self.proposed.items()},
            adapting=self.adapting, target_rate=self.target_rate,
            batch_size=self.batch_size, gain=self.gain, constraint=self.constraint,
            _batch_acc={k: v.copy() for k, v in self._batch_acc.items()},
            _batch_n=dict(self._batch_n),
        )


def _mh_coordinate(chain: ChainState, rule: MhRule, rng):
    name = rule.name
    x = chain.values[name]
    if name not in chain.scales:
        chain.scales[name] = np.full(x.shape, rule.proposal.scale)
        chain.accepted[name] = np.zeros(x.shape, dtype=np.int64)
        chain.proposed[name] = np.zeros(x.shape, dtype=np.int64)
        chain._batch_acc[name] = np.zeros(x.shape, dtype=np.int64)
        chain._batch_n[name] = 0
    values = chain.values
    new, acc = mh_update(x, rule.proposal, lambda c: rule.log_target(values, c), rng,
                         scale=chain.scales[name])
    chain.values[name] = np.asarray(new, dtype=float).reshape(x.shape)
    acc = np.asarray(acc)
    chain.accepted[name] += acc
    chain.proposed[name] += 1
    if chain.adapting:
        chain._batch_acc[name] += acc
        chain._batch_n[name] += 1
        if chain._batch_n[name] >= chain.batch_size:
            rate = chain._batch_acc[name] / chain._batch_n[name]
            chain.scales[name] = adapt_scale(chain.scales[name], rate, chain.target_rate, chain.gain)
            chain._batch_acc[name][...] = 0
            chain._batch_n[name] = 0


def mwg_sweep(chain: ChainState, rules, rng) -> ChainState:
    """One Metropolis-within-Gibbs sweep over ``rules`` in declaration order."""
    rng = as_generator(rng)
    for rule in rules:
        if isinstance(rule, GibbsRule):
            cur = chain.values[rule.name]
            chain.values[rule.name] = np.asarray(rule.draw(chain.values, rng), dtype=float).reshape(cur.shape)
        else:
            _mh_coordinate(chain, rule, rng)
        chain.check()
    return chain


def run_chain(chain: ChainState, rules, n_sweeps: int, rng, record=None, burn_in: int | None = None):
    """Runs ``n_sweeps`` sweeps; ``record(values)`` is collected after each.

    Adaptation is frozen once ``burn_in`` sweeps have been completed.
    """
    rng = as_generator(rng)
    out = []
    for k in range(n_sweeps):
        if burn_in is not None and k >= burn_in:
            chain.freeze()
        mwg_sweep(chain, rules, rng)
        if record is not None:
            out.append(record(chain.values))
    return out
