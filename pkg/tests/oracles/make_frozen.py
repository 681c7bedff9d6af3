"""Regenerates frozen.json from high-precision oracles that share no code with the package.

Run from the repo root: python3 tests/oracles/make_frozen.py
"""
import json
import os
import random

import mpmath as mp
import numpy as np

mp.mp.dps = 40
HERE = os.path.dirname(os.path.abspath(__file__))


def ncdf(x):
    return mp.ncdf(x)


def tn_moments(mean, var, lo, hi):
    """Quadrature on a fine subdivision; narrow far-tail intervals need the breakpoints."""
    with mp.workdps(60):
        sd = mp.sqrt(var)
        dens = lambda x: mp.npdf(x, mean, sd)
        a = lo if mp.isfinite(lo) else mean - 40 * sd
        b = hi if mp.isfinite(hi) else mean + 40 * sd
        pts = mp.linspace(max(a, mean - 40 * sd) if mp.isfinite(lo) else a, b, 41)
        pts = [lo] + [p for p in pts if lo < p < hi] + [hi]
        z = mp.quad(dens, pts)
        m1 = mp.quad(lambda x: x * dens(x), pts) / z
        m2 = mp.quad(lambda x: (x - m1) ** 2 * dens(x), pts) / z
        return float(m1), float(m2)


def tn_cases():
    rnd = random.Random(20240601)
    cases = []
    for _ in range(20):
        mean = rnd.uniform(-3, 3)
        var = rnd.uniform(0.05, 4)
        lo = rnd.uniform(-4, 2)
        hi = lo + rnd.uniform(0.1, 4)
        if rnd.random() < 0.2:
            lo = -mp.inf
        if rnd.random() < 0.2:
            hi = mp.inf
        m, v = tn_moments(mean, var, lo, hi)
        cases.append({"mean": mean, "variance": var, "lower": float(lo), "upper": float(hi),
                      "tn_mean": m, "tn_variance": v})
    # far tails where the naive Mills ratio cancels
    for mean, var, lo, hi in [(0.0, 1.0, 8.0, 9.0), (0.0, 1.0, -30.0, -29.0), (5.0, 0.25, -1.0, 0.0)]:
        m, v = tn_moments(mean, var, mp.mpf(lo), mp.mpf(hi))
        cases.append({"mean": mean, "variance": var, "lower": lo, "upper": hi, "tn_mean": m, "tn_variance": v})
    return cases


def model1_posterior_tau(seed=1, n=1000):
    """E(tau | x) for the semi-conjugate model on a 400 x 400 grid."""
    x = np.random.default_rng(seed).normal(10.0, 10.0, size=n)
    s1, s2 = x.sum(), (x * x).sum()
    xbar = s1 / n
    shape = (n + 3) / 2
    tau0 = shape / (1 + 0.5 * (s2 - s1 * s1 / (n + 1)))
    vt = np.linspace(xbar - 3.0, xbar + 3.0, 400)
    tau = np.linspace(tau0 * 0.7, tau0 * 1.3, 400)
    V, T = np.meshgrid(vt, tau, indexing="ij")
    # log p(vartheta, tau, x): likelihood, N(0, 1/tau) prior on vartheta, Gamma(1, 1) on tau
    quad = s2 - 2 * V * s1 + n * V * V
    logp = (n + 1) / 2 * np.log(T) - T / 2 * (quad + V * V) - T
    w = np.exp(logp - logp.max())
    return float((w * T).sum() / w.sum())


def pair_block_oracle(resid, theta):
    """E(kappa), E(kappa^2), E(psi) of the (kappa, psi) inner-chain target."""
    prior_sd = mp.sqrt(10)

    def joint(k, p):
        z = ncdf(p / prior_sd) - ncdf(-p / prior_sd)
        return mp.exp(-k * k / 20 - theta / 2 * (resid - k) ** 2 - (p - mp.mpf("0.05")) ** 2 / 20) / z

    def over_kappa(fn):
        return lambda p: mp.quad(lambda k: fn(k, p) * joint(k, p), [-p, 0, p])

    norm = mp.quad(over_kappa(lambda k, p: 1), [0, 1, 2])
    ek = mp.quad(over_kappa(lambda k, p: k), [0, 1, 2]) / norm
    ek2 = mp.quad(over_kappa(lambda k, p: k * k), [0, 1, 2]) / norm
    ep = mp.quad(over_kappa(lambda k, p: p), [0, 1, 2]) / norm
    return {"resid": resid, "theta": theta, "E_kappa": float(ek), "E_kappa2": float(ek2), "E_psi": float(ep)}


def main():
    mp.mp.dps = 30
    out = {
        "normal_cdf_1_96": float(ncdf(mp.mpf("1.96"))),
        "tn_logpdf_0_var10_pm2": float(mp.log(mp.npdf(0) / mp.sqrt(10))
                                       - mp.log(ncdf(2 / mp.sqrt(10)) - ncdf(-2 / mp.sqrt(10)))),
        "tn_half_line_mean": float(mp.sqrt(2 / mp.pi)),
        "tn_cases": tn_cases(),
        "model1_seed1_posterior_E_tau": model1_posterior_tau(),
    }
    mp.mp.dps = 15
    out["pair_block"] = [pair_block_oracle(r, 3.0) for r in (0.3, -1.2, 1.9)]
    with open(os.path.join(HERE, "frozen.json"), "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
