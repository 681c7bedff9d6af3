"""Black-box VI with score-function gradients.

Each factor group holds ``count`` independent factors with ``d`` parameters
each (``index`` has shape ``(count, d)`` into the flat parameter vector).
Per factor the gradient is Rao-Blackwellised, i.e. only the factor's local
log term ``log c_i`` enters, and a scalar control-variate coefficient is
fitted from the same samples.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .stats import as_generator
from .vi import ConvergenceError, SweepTrace

ADAGRAD_EPS = 1e-10
DIVERGENCE_LIMIT = 1e6


class BbviDivergence(ConvergenceError):
    """A variational parameter left the [-1e6, 1e6] box."""


@dataclass
class FactorFamily:
    """A group of identically-shaped factors.

    ``sample(params, N, rng)``      draws with a leading sample axis, then ``count``
    ``score(params, z)``            (N, count, d)
    ``log_q(params, z)``            (N, count)
    ``log_c(z, context)``           (N, count), the factor's local log-joint term
    """

    name: str
    index: np.ndarray
    sample: Callable
    score: Callable
    log_q: Callable
    log_c: Callable

    @property
    def count(self):
        return self.index.shape[0]


@dataclass
class BbviModel:
    factors: list
    dim: int
    context: Callable = lambda lam: {}
    names: list | None = None
    helper: object = None


@dataclass
class AdaGradState:
    G: np.ndarray
    eta: float = 0.5

    @classmethod
    def zeros(cls, dim, eta=0.5):
        return cls(np.zeros(dim), eta)


def adagrad_step(lam, grad, ada: AdaGradState):
    """``G' = G + g*g`` and ``lam' = lam + eta * g / sqrt(G' + 1e-10)``."""
    grad = np.asarray(grad, dtype=float)
    G = ada.G + grad * grad
    return np.asarray(lam, float) + ada.eta * grad / np.sqrt(G + ADAGRAD_EPS), AdaGradState(G, ada.eta)


def control_variate_coeff(f, g, axis=0):
    """``sum_d Cov(f_d, g_d) / sum_d Var(g_d)`` over the sample ``axis``.

    ``f`` and ``g`` have the sample axis first and parameters last; any axes
    in between are batch axes and get one coefficient each.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[axis] < 2:
        raise ValueError("control variates need at least two samples")
    fc = f - f.mean(axis=axis, keepdims=True)
    gc = g - g.mean(axis=axis, keepdims=True)
    m = f.shape[axis] - 1
    cov = np.sum(fc * gc, axis=axis) / m
    var = np.sum(gc * gc, axis=axis) / m
    num = cov.sum(axis=-1) if cov.ndim else cov
    den = var.sum(axis=-1) if var.ndim else var
    if np.any(den == 0):
        raise ZeroDivisionError("score has zero sample variance in every coordinate")
    return num / den


def _safe_coeff(f, g):
    gc = g - g.mean(axis=0, keepdims=True)
    den = np.sum(gc * gc, axis=(0, -1))
    degenerate = ~(den > 0)
    if np.any(degenerate):
        warnings.warn("degenerate score: control-variate coefficient set to 0", RuntimeWarning, stacklevel=3)
    fc = f - f.mean(axis=0, keepdims=True)
    num = np.sum(fc * gc, axis=(0, -1))
    return np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den))


def rb_terms(factor: FactorFamily, params, z, context):
    """Returns ``(f, g)``: ``g`` is the score and ``f = g * (log c - log q)``."""
    g = factor.score(params, z)
    w = factor.log_c(z, context) - factor.log_q(params, z)
    return g * w[..., None], g


def rb_gradient(factor: FactorFamily, params, N: int, rng, context=None, control_variate: bool = True,
                z=None):
    """Rao-Blackwellised score-function gradient, shape ``(count, d)``."""
    if N < 2:
        raise ValueError("rb_gradient needs N >= 2")
    rng = as_generator(rng)
    if z is None:
        z = factor.sample(params, N, rng)
    f, g = rb_terms(factor, params, z, context if context is not None else {})
    if not control_variate:
        return f.mean(axis=0)
    a = _safe_coeff(f, g)
    return (f - a[None, :, None] * g).mean(axis=0)


def full_gradient(model: BbviModel, lam, N, rng, control_variate=True):
    rng = as_generator(rng)
    ctx = model.context(lam)
    grad = np.zeros(model.dim)
    for factor in model.factors:
        gi = rb_gradient(factor, lam[factor.index], N, rng, ctx, control_variate)
        grad[factor.index] = gi
    return grad


@dataclass
class BbviResult:
    trajectory: np.ndarray
    trace: SweepTrace
    ada: AdaGradState
    names: list = field(default_factory=list)

    @property
    def final(self):
        return self.trajectory[-1]

    def trajectory_to_csv(self, path):
        names = self.names or [f"lambda_{i}" for i in range(self.trajectory.shape[1])]
        with open(path, "w") as fh:
            fh.write(",".join(["iteration"] + names) + "\n")
            for k, row in enumerate(self.trajectory):
                fh.write(",".join([str(k)] + [repr(float(v)) for v in row]) + "\n")


def run_bbvi(model: BbviModel, init, iters: int, N: int, rng, eta: float = 0.5,
             monitor: Callable | None = None, budget_secs: float | None = None,
             control_variate: bool = True) -> BbviResult:
    """Sampling, per-factor gradients and a joint AdaGrad step, ``iters`` times.

    The trajectory includes the initial point as row 0. Raises
    :class:`BbviDivergence` (with the partial trace) if any |lambda| > 1e6.
    """
    rng = as_generator(rng)
    lam = np.array(init, dtype=float)
    if lam.shape != (model.dim,):
        raise ValueError(f"expected {model.dim} parameters, got shape {lam.shape}")
    ada = AdaGradState.zeros(model.dim, eta)
    traj = [lam.copy()]
    trace = SweepTrace()
    t0 = time.perf_counter()
    for _ in range(iters):
        if budget_secs is not None and time.perf_counter() - t0 >= budget_secs:
            break
        grad = full_gradient(model, lam, N, rng, control_variate)
        lam, ada = adagrad_step(lam, grad, ada)
        traj.append(lam.copy())
        trace.append(monitor(lam) if monitor is not None else {})
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > DIVERGENCE_LIMIT:
            raise BbviDivergence("BBVI parameters diverged", trace,
                                 BbviResult(np.array(traj), trace, ada, model.names or []))
    return BbviResult(np.array(traj), trace, ada, list(model.names or []))


def score_mean(factor: FactorFamily, params, N, rng):
    """Monte Carlo mean and standard error of the score, for the score-identity check."""
    z = factor.sample(params, N, as_generator(rng))
    g = factor.score(params, z)
    return g.mean(axis=0), g.std(axis=0, ddof=1) / math.sqrt(N)
