"""Scalar distributions, normal-CDF helpers and the seeded random stream.

All distributions are immutable and vectorised over ``x``. Gamma uses the
rate parameterisation throughout the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
# inverse-CDF sampling is used while the truncated mass exceeds this
_INVERSE_CDF_MIN_MASS = 1e-10
_SQRT2 = math.sqrt(2.0)
_LOG_MIN_MASS = math.log(1e-300)


class VanishingMassError(ArithmeticError):
    """The truncation interval carries (numerically) no probability mass."""


class RngHandle:
    """A seeded random stream.

    Child streams are derived by seed offset; ``RngHandle(s).child(k)`` is
    the same stream as ``RngHandle(s + k)``. Seeds go through numpy's
    ``SeedSequence`` so neighbouring seeds give unrelated streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) % 2**64
        self.generator = np.random.default_rng(self.seed)

    def child(self, offset: int) -> "RngHandle":
        return RngHandle((self.seed + int(offset)) % 2**64)

    def __repr__(self):
        return f"RngHandle(seed={self.seed})"


def as_generator(rng) -> np.random.Generator:
    """Accept an RngHandle, a Generator or an integer seed."""
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# standard normal helpers
# ---------------------------------------------------------------------------

def normal_cdf(x):
    return special.ndtr(x)


def log_normal_cdf(x):
    return special.log_ndtr(x)


def normal_log_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + x * x)


def normal_pdf(x):
    return np.exp(normal_log_pdf(x))


def log_diff_normal_cdf(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a <= b`` without cancellation.

    Intervals containing 0 are summed from two ``erf`` halves. One-sided
    intervals are reflected into the lower tail, where ``log_ndtr`` keeps
    full relative precision. Very narrow intervals integrate a Taylor
    expansion of the density around the midpoint.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper_tail = a > 0
    lo = np.where(upper_tail, -b, a)
    hi = np.where(upper_tail, -a, b)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log(-np.expm1(log_lo - log_hi))
        straddle = (a <= 0) & (b >= 0)
        mid = np.log(0.5 * (special.erf(b / _SQRT2) + special.erf(-a / _SQRT2)))
    out = np.where(straddle, mid, out)
    finite = np.isfinite(a) & np.isfinite(b)
    m = 0.5 * (np.where(finite, a, 0.0) + np.where(finite, b, 0.0))
    h = np.where(finite, 0.5 * (b - a), np.inf)
    narrow = h * (1.0 + np.abs(m)) < 1e-2
    if np.any(narrow):
        m2, h2 = m * m, h * h
        series = 1.0 + (m2 - 1.0) * h2 / 6.0 + (m2 * m2 - 6.0 * m2 + 3.0) * h2 * h2 / 120.0
        with np.errstate(divide="ignore", invalid="ignore"):
            local = np.log(2.0 * h) + normal_log_pdf(m) + np.log(series)
        out = np.where(narrow, local, out)
    out = np.where(hi <= lo, -np.inf, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# truncated normal
# ---------------------------------------------------------------------------

def truncated_normal_moments(mean, variance, lower, upper):
    """Exact mean and variance of ``N(mean, variance)`` restricted to [lower, upper].

    Infinite bounds are allowed. Raises :class:`VanishingMassError` when the
    interval mass drops below 1e-300.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(variance, dtype=float))
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    log_z = np.asarray(log_diff_normal_cdf(a, b))
    if np.any(log_z < _LOG_MIN_MASS):
        raise VanishingMassError("truncation interval has mass below 1e-300")
    with np.errstate(over="ignore", invalid="ignore"):
        ra = np.where(np.isfinite(a), np.exp(normal_log_pdf(np.where(np.isfinite(a), a, 0.0)) - log_z), 0.0)
        rb = np.where(np.isfinite(b), np.exp(normal_log_pdf(np.where(np.isfinite(b), b, 0.0)) - log_z), 0.0)
        a_ra = np.where(np.isfinite(a), a * ra, 0.0)
        b_rb = np.where(np.isfinite(b), b * rb, 0.0)
    shift = ra - rb
    m = mean + sd * shift
    v = sd**2 * np.maximum(1.0 + a_ra - b_rb - shift**2, 0.0)
    if m.ndim == 0:
        return float(m), float(v)
    return m, v


def _rejection_tail(c, d, rng):
    """Draws from N(0,1) restricted to [c, d] with c >= 0 (one per entry)."""
    out = np.empty(c.shape)
    todo = np.ones(c.shape, dtype=bool)
    while todo.any():
        ci, di = c[todo], d[todo]
        narrow = (di - ci) * np.maximum(ci, 1e-300) < 1.0
        lam = 0.5 * (ci + np.sqrt(ci * ci + 4.0))
        z_exp = ci + rng.exponential(size=ci.shape) / lam
        z_uni = ci + (np.minimum(di, ci + 1e6) - ci) * rng.uniform(size=ci.shape)
        z = np.where(narrow, z_uni, z_exp)
        log_acc = np.where(narrow, 0.5 * (ci * ci - z * z), -0.5 * (z - lam) ** 2)
        ok = (np.log(rng.uniform(size=ci.shape)) < log_acc) & (z <= di)
        idx = np.flatnonzero(todo)[ok]
        out[idx] = z[ok]
        todo[idx] = False
    return out


def sample_truncated_normal(mean, sd, lower, upper, rng, size=None):
    """Vectorised draws from ``N(mean, sd**2)`` truncated to [lower, upper].

    Inverse CDF on the reflected lower-tail interval; intervals with mass
    below 1e-10 fall back to exponential / uniform rejection.
    """
    rng = as_generator(rng)
    mean, sd, lower, upper = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(sd, float),
        np.asarray(lower, float), np.asarray(upper, float))
    if size is not None:
        shape = (size,) if np.isscalar(size) else tuple(size)
        mean, sd, lower, upper = (np.broadcast_to(v, shape) for v in (mean, sd, lower, upper))
    out_shape = mean.shape
    mean, sd, lower, upper = (np.atleast_1d(v) for v in (mean, sd, lower, upper))
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    p_lo = special.ndtr(lo)
    p_hi = special.ndtr(hi)
    u = rng.uniform(size=lo.shape)
    z = special.ndtri(p_lo + u * (p_hi - p_lo))
    tiny = (p_hi - p_lo) < _INVERSE_CDF_MIN_MASS
    if np.any(tiny):
        # reflected so that the interval is [c, d] with c >= 0 where possible
        lo_t, hi_t = lo[tiny], hi[tiny]
        upper_side = hi_t <= 0
        c = np.where(upper_side, -hi_t, np.maximum(lo_t, 0.0))
        d = np.where(upper_side, -lo_t, hi_t)
        straddle = (lo_t < 0) & (hi_t > 0)
        draws = _rejection_tail(np.where(straddle, 0.0, c), np.where(straddle, np.maximum(-lo_t, hi_t), d), rng)
        # a straddling interval this narrow is sampled uniformly: density is flat to 1e-20
        with np.errstate(invalid="ignore"):
            flat = lo_t + (hi_t - lo_t) * rng.uniform(size=lo_t.shape)
        draws = np.where(straddle, flat, np.where(upper_side, -draws, draws))
        z = z.copy()
        z[tiny] = draws
    z = np.clip(np.where(np.isnan(z), 0.5 * (lo + hi), z), lo, hi)
    z = np.where(flip, -z, z)
    x = np.clip(mean + sd * z, lower, upper).reshape(out_shape)
    return x if x.ndim else float(x)


def sample_truncated_normal_scalar(mean: float, sd: float, lower: float, upper: float, rng) -> float:
    """Single draw with plain-float arithmetic; same algorithm as the vectorised sampler."""
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    flip = a > 0
    lo, hi = (-b, -a) if flip else (a, b)
    p_lo = special.ndtr(lo)
    p_hi = special.ndtr(hi)
    if p_hi - p_lo < _INVERSE_CDF_MIN_MASS:
        return float(sample_truncated_normal(mean, sd, lower, upper, rng))
    z = float(special.ndtri(p_lo + rng.random() * (p_hi - p_lo)))
    z = min(max(z, lo), hi)
    x = mean + sd * (-z if flip else z)
    return min(max(x, lower), upper)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class Normal:
    mean: float
    variance: float

    def __post_init__(self):
        _check_positive("variance", self.variance)

    @property
    def sd(self):
        return math.sqrt(self.variance)

    @property
    def support(self):
        return (-math.inf, math.inf)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (LOG_2PI + math.log(self.variance) + (x - self.mean) ** 2 / self.variance)

    def sample(self, rng, size=None):
        return as_generator(rng).normal(self.mean, self.sd, size=size)

    def moments(self):
        return self.mean, self.variance


@dataclass(frozen=True)
class Gamma:
    """Gamma law with density proportional to ``x**(shape-1) * exp(-rate*x)``."""

    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    @property
    def support(self):
        return (0.0, math.inf)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * math.log(self.rate) - special.gammaln(self.shape)
                   + (self.shape - 1.0) * np.log(x) - self.rate * x)
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size=None):
        return as_generator(rng).gamma(self.shape, 1.0 / self.rate, size=size)

    def moments(self):
        return self.shape / self.rate, self.shape / self.rate**2

    def mean_log(self):
        return float(special.digamma(self.shape) - math.log(self.rate))

    def entropy(self):
        a = self.shape
        return float(a - math.log(self.rate) + special.gammaln(a) + (1.0 - a) * special.digamma(a))


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    variance: float
    lower: float
    upper: float

    def __post_init__(self):
        _check_positive("variance", self.variance)
        if not self.lower < self.upper:
            raise ValueError(f"lower ({self.lower}) must be below upper ({self.upper})")

    @property
    def sd(self):
        return math.sqrt(self.variance)

    @property
    def support(self):
        return (self.lower, self.upper)

    def log_normaliser(self):
        return float(log_diff_normal_cdf((self.lower - self.mean) / self.sd,
                                         (self.upper - self.mean) / self.sd))

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) / self.sd
        out = normal_log_pdf(z) - math.log(self.sd) - self.log_normaliser()
        return np.where((x >= self.lower) & (x <= self.upper), out, -np.inf)

    def sample(self, rng, size=None):
        return sample_truncated_normal(self.mean, self.sd, self.lower, self.upper, rng, size=size)

    def moments(self):
        return truncated_normal_moments(self.mean, self.variance, self.lower, self.upper)


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma2: float

    def __post_init__(self):
        _check_positive("sigma2", self.sigma2)

    @property
    def support(self):
        return (0.0, math.inf)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            out = -lx - 0.5 * (LOG_2PI + math.log(self.sigma2) + (lx - self.mu) ** 2 / self.sigma2)
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size=None):
        return as_generator(rng).lognormal(self.mu, math.sqrt(self.sigma2), size=size)

    def moments(self):
        m = math.exp(self.mu + 0.5 * self.sigma2)
        return m, (math.exp(self.sigma2) - 1.0) * m * m


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"lower ({self.lower}) must be below upper ({self.upper})")

    @property
    def support(self):
        return (self.lower, self.upper)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, -math.log(self.upper - self.lower), -np.inf)

    def sample(self, rng, size=None):
        return as_generator(rng).uniform(self.lower, self.upper, size=size)

    def moments(self):
        w = self.upper - self.lower
        return 0.5 * (self.lower + self.upper), w * w / 12.0


Distribution = Normal | Gamma | TruncatedNormal | LogNormal | Uniform


def log_pdf(d, x):
    return d.log_pdf(x)


def sample(d, rng, size=None):
    return d.sample(rng, size=size)
