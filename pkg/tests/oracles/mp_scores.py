"""40-digit log densities of the variational families and their central differences."""
import mpmath as mp

_DIGITS = 40


def _mp_ncdf(x):
    return mp.ncdf(x) if mp.isfinite(x) else (mp.mpf(1) if x > 0 else mp.mpf(0))


def mp_log_normal(a, g, x):
    return -0.5 * (mp.log(2 * mp.pi) + g + (x - a) ** 2 * mp.exp(-g))


def mp_log_gamma(a, g, x):
    shape, rate = mp.exp(a), mp.exp(g)
    return shape * g - mp.loggamma(shape) + (shape - 1) * mp.log(x) - rate * x


def mp_log_tn(a, g, x, lo, hi):
    s = mp.exp(g)
    lo_std, hi_std = (lo - a) / s, (hi - a) / s
    # reflect into the lower tail, where 40 digits do not cancel away
    if lo_std > 0:
        z = _mp_ncdf(-lo_std) - _mp_ncdf(-hi_std)
    else:
        z = _mp_ncdf(hi_std) - _mp_ncdf(lo_std)
    return -0.5 * mp.log(2 * mp.pi) - g - 0.5 * ((x - a) / s) ** 2 - mp.log(z)


def central_difference(fn, a, g, which):
    with mp.workdps(_DIGITS):
        h = mp.mpf("1e-15")
        a, g = mp.mpf(a), mp.mpf(g)
        if which == 0:
            return float((fn(a + h, g) - fn(a - h, g)) / (2 * h))
        return float((fn(a, g + h) - fn(a, g - h)) / (2 * h))
