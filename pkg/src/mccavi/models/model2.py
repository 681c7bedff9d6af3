"""Normal location model with bounded per-observation offsets.

    y_j | vartheta, kappa_j, theta ~ N(vartheta + kappa_j, 1/theta)
    vartheta      ~ N(0, 10)
    kappa_j | psi_j ~ TN(0, 10, -psi_j, psi_j)
    psi_j         ~ TN(0.05, 10, 0, 2)
    theta         ~ Gamma(1, 1)

The pair (kappa_j, psi_j) lives on |kappa_j| < psi_j < 2, so its variational
factor has no closed form and is handled by an inner Metropolis-within-Gibbs
chain (psi_j by an independent U(0, 2) proposal, kappa_j by exact truncated
normal draws).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..mcmc import ChainState, GibbsRule, MhProposal, MhRule, mwg_sweep
from ..stats import (LOG_2PI, as_generator, log_diff_normal_cdf, normal_log_pdf,
                     sample_truncated_normal, truncated_normal_moments)
from ..vi import ClosedFormBlock, ModelSpec, MonteCarloBlock, VariationalState

PRIOR_VAR = 10.0
PSI_PRIOR_MEAN = 0.05
PSI_MAX = 2.0
_SQRT_PRIOR_VAR = math.sqrt(PRIOR_VAR)

TRUE_VARTHETA = 6.0
TRUE_THETA = 3.0


def true_kappa(n: int) -> np.ndarray:
    j = np.arange(1, n + 1)
    return 1.5 * np.sin(-2.0 * np.pi + 4.0 * np.pi * (j - 1) / n)


def generate(n: int, rng) -> np.ndarray:
    rng = as_generator(rng)
    return TRUE_VARTHETA + true_kappa(n) + rng.normal(0.0, 1.0 / math.sqrt(TRUE_THETA), size=n)


def satisfies_constraints(kappa, psi) -> bool:
    kappa, psi = np.asarray(kappa), np.asarray(psi)
    return bool(np.all(np.abs(kappa) < psi) and np.all(psi < PSI_MAX))


def psi_log_target(kappa, psi):
    """Unnormalised log density of psi_j given kappa_j (prior terms only)."""
    psi = np.asarray(psi, dtype=float)
    z = _SQRT_PRIOR_VAR
    with np.errstate(divide="ignore", invalid="ignore"):
        out = normal_log_pdf((psi - PSI_PRIOR_MEAN) / z) - log_diff_normal_cdf(-psi / z, psi / z)
    inside = (np.abs(kappa) < psi) & (psi < PSI_MAX)
    return np.where(inside, out, -np.inf)


class Model2:
    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        self.n = self.y.size
        self.sum_y = float(self.y.sum())

    # -- full conditionals (MCMC) -------------------------------------------

    def vartheta_conditional(self, kappa, theta):
        prec = 1.0 / PRIOR_VAR + self.n * theta
        return float(np.sum(self.y - kappa) * theta / prec), 1.0 / prec

    def kappa_conditional(self, vartheta, theta):
        prec = 1.0 / PRIOR_VAR + theta
        return (self.y - vartheta) * theta / prec, 1.0 / prec

    def theta_conditional(self, vartheta, kappa):
        r = self.y - vartheta - kappa
        return 1.0 + self.n / 2.0, 1.0 + float(np.dot(r, r)) / 2.0

    def mcmc_rules(self):
        psi_proposal = MhProposal("uniform", 1.0, lower=0.0, upper=PSI_MAX)

        def draw_vartheta(v, rng):
            m, var = self.vartheta_conditional(v["kappa"], v["theta"])
            return rng.normal(m, math.sqrt(var))

        def draw_kappa(v, rng):
            m, var = self.kappa_conditional(v["vartheta"], v["theta"])
            return sample_truncated_normal(m, math.sqrt(var), -v["psi"], v["psi"], rng)

        def draw_theta(v, rng):
            shape, rate = self.theta_conditional(v["vartheta"], v["kappa"])
            return rng.gamma(shape, 1.0 / rate)

        return [GibbsRule("vartheta", draw_vartheta), GibbsRule("kappa", draw_kappa),
                GibbsRule("theta", draw_theta),
                MhRule("psi", psi_proposal, lambda v, cand: psi_log_target(v["kappa"], cand))]

    def mcmc_chain(self, vartheta=4.0, theta=1.0):
        return ChainState({"vartheta": vartheta, "theta": theta, "kappa": np.zeros(self.n),
                           "psi": np.ones(self.n)},
                          constraint=lambda v: satisfies_constraints(v["kappa"], v["psi"]))

    def run_mcmc(self, iters: int, rng, burn_in: int | None = None, chain=None,
                 budget_secs: float | None = None):
        """Returns a dict of per-sweep arrays (vartheta, theta, kappa, psi)."""
        import time
        rng = as_generator(rng)
        chain = self.mcmc_chain() if chain is None else chain
        rules = self.mcmc_rules()
        out = {"vartheta": [], "theta": [], "kappa": [], "psi": []}
        t0 = time.perf_counter()
        for k in range(iters):
            if budget_secs is not None and time.perf_counter() - t0 >= budget_secs:
                break
            if burn_in is not None and k >= burn_in:
                chain.freeze()
            mwg_sweep(chain, rules, rng)
            for key in out:
                out[key].append(np.copy(chain.values[key]))
        res = {k: np.array(v) for k, v in out.items()}
        if not len(res["kappa"]):
            res["kappa"] = res["psi"] = np.zeros((0, self.n))
        res["chain"] = chain
        return res

    # -- MC-CAVI -------------------------------------------------------------

    def initial_state(self):
        return VariationalState(moments={"E_theta": 1.0, "E_vartheta": 4.0, "E_vartheta2": 17.0})

    def pair_rules(self, state):
        """Inner-chain rules targeting q(kappa_j, psi_j) under the current moments."""
        m, var = self.kappa_conditional(state["E_vartheta"], state["E_theta"])
        sd = math.sqrt(var)
        psi_proposal = MhProposal("uniform", 1.0, lower=0.0, upper=PSI_MAX)

        def draw_kappa(v, rng):
            return sample_truncated_normal(m, sd, -v["psi"], v["psi"], rng)

        return [MhRule("psi", psi_proposal, lambda v, cand: psi_log_target(v["kappa"], cand)),
                GibbsRule("kappa", draw_kappa)]

    def pair_chain(self):
        return ChainState({"kappa": np.zeros(self.n), "psi": np.ones(self.n)},
                          constraint=lambda v: satisfies_constraints(v["kappa"], v["psi"]))

    def update_vartheta(self, state):
        e_theta = state["E_theta"]
        prec = 1.0 / PRIOR_VAR + self.n * e_theta
        mean = float(np.sum(self.y - state["E_kappa"]) * e_theta / prec)
        return ("normal", mean, 1.0 / prec), {"E_vartheta": mean, "E_vartheta2": mean**2 + 1.0 / prec}

    def expected_sq_residuals(self, state):
        """Sum over j of E (y_j - vartheta - kappa_j)^2 under independent factors."""
        y, ek, ek2 = self.y, state["E_kappa"], state["E_kappa2"]
        ev, ev2 = state["E_vartheta"], state["E_vartheta2"]
        return float(np.sum(y * y + ev2 + ek2 - 2 * y * ev - 2 * y * ek + 2 * ev * ek))

    def update_theta(self, state):
        shape = 1.0 + self.n / 2.0
        rate = 1.0 + self.expected_sq_residuals(state) / 2.0
        return ("gamma", shape, rate), {"E_theta": shape / rate}

    def monitor(self, state):
        return {"E_vartheta": state["E_vartheta"], "E_theta": state["E_theta"]}

    def mc_cavi_spec(self) -> ModelSpec:
        pair = MonteCarloBlock(
            "kappa_psi", init_chain=self.pair_chain, rules=self.pair_rules,
            statistics={"E_kappa": lambda v: v["kappa"], "E_kappa2": lambda v: v["kappa"] ** 2},
        )
        return ModelSpec(blocks=[pair, ClosedFormBlock("vartheta", self.update_vartheta),
                                 ClosedFormBlock("theta", self.update_theta)],
                         monitor=self.monitor, name="model2")

    # -- BBVI ----------------------------------------------------------------

    def bbvi_init(self):
        lam = np.zeros(4 + 4 * self.n)
        lam[0] = 4.0
        return lam

    def bbvi_factors(self, quadrature_nodes: int = 64):
        return model2_bbvi_factors(self, quadrature_nodes)


# ---------------------------------------------------------------------------
# BBVI factors: q(vartheta) = N(a, e^g), q(theta) = Gamma(e^a, e^g),
# q(kappa_j, psi_j) = TN(a_k, e^{2 g_k}, -psi, psi) x TN(a_p, e^{2 g_p}, 0, 2)
# ---------------------------------------------------------------------------

def normal_score(alpha, gamma, x):
    d = x - alpha
    return np.stack([d * np.exp(-gamma), -0.5 + 0.5 * d * d * np.exp(-gamma)], axis=-1)


def gamma_score(alpha, gamma, x):
    a = np.exp(alpha)
    return np.stack([a * (gamma - special.digamma(a) + np.log(x)), a - x * np.exp(gamma)], axis=-1)


def _tn_edge_terms(alpha, gamma, lower, upper):
    """(phi(b) - phi(a)) / Z and (b phi(b) - a phi(a)) / Z for standardised bounds."""
    s = np.exp(gamma)
    a = (lower - alpha) / s
    b = (upper - alpha) / s
    log_z = log_diff_normal_cdf(a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        fa = np.where(np.isfinite(a), np.exp(normal_log_pdf(np.where(np.isfinite(a), a, 0.0)) - log_z), 0.0)
        fb = np.where(np.isfinite(b), np.exp(normal_log_pdf(np.where(np.isfinite(b), b, 0.0)) - log_z), 0.0)
        afa = np.where(np.isfinite(a), a * fa, 0.0)
        bfb = np.where(np.isfinite(b), b * fb, 0.0)
    return fb - fa, bfb - afa, log_z


def truncated_normal_score(alpha, gamma, x, lower, upper):
    """Score of TN(alpha, exp(2 gamma), lower, upper) with respect to (alpha, gamma)."""
    s = np.exp(gamma)
    u = (x - alpha) / s
    edge, edge_w, _ = _tn_edge_terms(alpha, gamma, lower, upper)
    return np.stack([u / s + edge / s, -1.0 + u * u + edge_w], axis=-1)


def truncated_normal_logpdf(alpha, gamma, x, lower, upper):
    s = np.exp(gamma)
    _, _, log_z = _tn_edge_terms(alpha, gamma, lower, upper)
    return -0.5 * LOG_2PI - gamma - 0.5 * ((x - alpha) / s) ** 2 - log_z


def normal_logpdf(alpha, gamma, x):
    return -0.5 * (LOG_2PI + gamma + (x - alpha) ** 2 * np.exp(-gamma))


def gamma_logpdf(alpha, gamma, x):
    a, r = np.exp(alpha), np.exp(gamma)
    return a * gamma - special.gammaln(a) + (a - 1.0) * np.log(x) - r * x


def pair_kappa_moments(a_k, g_k, a_p, g_p, nodes: int = 64):
    """E kappa and E kappa^2 under the pair factor, by Gauss-Legendre over psi."""
    a_k, g_k, a_p, g_p = (np.atleast_1d(np.asarray(v, float)) for v in (a_k, g_k, a_p, g_p))
    s_p = np.exp(g_p)
    lo = np.clip(a_p - 12.0 * s_p, 0.0, PSI_MAX)
    hi = np.clip(a_p + 12.0 * s_p, 0.0, PSI_MAX)
    # factor mass sits outside [0, 2] entirely: fall back to the nearest edge
    degenerate = hi - lo < 1e-12
    hi = np.where(degenerate, np.minimum(lo + 1e-6, PSI_MAX), hi)
    lo = np.where(degenerate, hi - 1e-6, lo)
    t, w = np.polynomial.legendre.leggauss(nodes)
    psi = 0.5 * (hi - lo)[:, None] * (t[None, :] + 1.0) + lo[:, None]
    logw = truncated_normal_logpdf(a_p[:, None], g_p[:, None], psi, 0.0, PSI_MAX)
    wts = np.exp(logw - logw.max(axis=1, keepdims=True)) * w[None, :]
    wts /= wts.sum(axis=1, keepdims=True)
    m, v = truncated_normal_moments(np.broadcast_to(a_k[:, None], psi.shape),
                                    np.broadcast_to(np.exp(2 * g_k)[:, None], psi.shape), -psi, psi)
    m = np.asarray(m)
    v = np.asarray(v)
    return np.sum(wts * m, axis=1), np.sum(wts * (v + m * m), axis=1)


class Model2Bbvi:
    """Parameter layout and Rao-Blackwellised local terms for the Model-2 factors.

    ``lam = [a_vt, g_vt, a_th, g_th, a_k(n), g_k(n), a_p(n), g_p(n)]``.
    """

    def __init__(self, model: Model2, quadrature_nodes: int = 64):
        self.model = model
        self.n = model.n
        self.nodes = quadrature_nodes
        n = self.n
        self.idx_vartheta = np.array([[0, 1]])
        self.idx_theta = np.array([[2, 3]])
        j = np.arange(n)
        self.idx_pair = np.stack([4 + j, 4 + n + j, 4 + 2 * n + j, 4 + 3 * n + j], axis=1)

    @property
    def dim(self):
        return 4 + 4 * self.n

    def names(self):
        n = self.n
        return (["alpha_vartheta", "gamma_vartheta", "alpha_theta", "gamma_theta"]
                + [f"alpha_kappa_{j + 1}" for j in range(n)] + [f"gamma_kappa_{j + 1}" for j in range(n)]
                + [f"alpha_psi_{j + 1}" for j in range(n)] + [f"gamma_psi_{j + 1}" for j in range(n)])

    def context(self, lam):
        """Expectations under q(lam) that the local terms need."""
        p = lam[self.idx_pair]
        ek, ek2 = pair_kappa_moments(p[:, 0], p[:, 1], p[:, 2], p[:, 3], self.nodes)
        return {"E_vartheta": lam[0], "V_vartheta": math.exp(lam[1]),
                "E_theta": math.exp(lam[2] - lam[3]), "E_kappa": ek, "E_kappa2": ek2}

    # sampling: each returns an array whose leading axis is the sample index

    def sample_vartheta(self, params, size, rng):
        a, g = params[0]
        return rng.normal(a, math.exp(0.5 * g), size=(size, 1))

    def sample_theta(self, params, size, rng):
        a, g = params[0]
        return rng.gamma(math.exp(a), math.exp(-g), size=(size, 1))

    def sample_pair(self, params, size, rng):
        a_k, g_k, a_p, g_p = params.T
        shape = (size, params.shape[0])
        psi = np.asarray(sample_truncated_normal(np.broadcast_to(a_p, shape), np.broadcast_to(np.exp(g_p), shape),
                                                 0.0, PSI_MAX, rng))
        kappa = np.asarray(sample_truncated_normal(np.broadcast_to(a_k, shape), np.broadcast_to(np.exp(g_k), shape),
                                                   -psi, psi, rng))
        return np.stack([kappa, psi], axis=-1)

    # local log terms c_i and log q_i, shape (N, count)

    def log_c_vartheta(self, z, ctx):
        vt = z
        et = ctx["E_theta"]
        s = np.sum(self.model.y - ctx["E_kappa"])
        return -0.5 * et * (self.n * vt * vt - 2.0 * vt * s) - vt * vt / (2.0 * PRIOR_VAR)

    def log_c_theta(self, z, ctx):
        y, ek, ek2 = self.model.y, ctx["E_kappa"], ctx["E_kappa2"]
        ev, ev2 = ctx["E_vartheta"], ctx["E_vartheta"] ** 2 + ctx["V_vartheta"]
        ssr = np.sum(y * y + ev2 + ek2 - 2 * y * ev - 2 * y * ek + 2 * ev * ek)
        return self.n / 2.0 * np.log(z) - z * ssr / 2.0 - z

    def log_c_pair(self, z, ctx):
        kappa, psi = z[..., 0], z[..., 1]
        et = ctx["E_theta"]
        r = self.model.y - ctx["E_vartheta"]
        z_sd = _SQRT_PRIOR_VAR
        out = (-0.5 * et * (kappa * kappa - 2.0 * kappa * r)
               - (kappa * kappa + (psi - PSI_PRIOR_MEAN) ** 2) / (2.0 * PRIOR_VAR)
               - log_diff_normal_cdf(-psi / z_sd, psi / z_sd))
        return np.where((np.abs(kappa) < psi) & (psi < PSI_MAX), out, -np.inf)

    def log_q_vartheta(self, params, z):
        a, g = params[0]
        return normal_logpdf(a, g, z)

    def log_q_theta(self, params, z):
        a, g = params[0]
        return gamma_logpdf(a, g, z)

    def log_q_pair(self, params, z):
        a_k, g_k, a_p, g_p = params.T
        kappa, psi = z[..., 0], z[..., 1]
        return (truncated_normal_logpdf(a_p, g_p, psi, 0.0, PSI_MAX)
                + truncated_normal_logpdf(a_k, g_k, kappa, -psi, psi))

    def score_vartheta(self, params, z):
        a, g = params[0]
        return normal_score(a, g, z)

    def score_theta(self, params, z):
        a, g = params[0]
        return gamma_score(a, g, z)

    def score_pair(self, params, z):
        a_k, g_k, a_p, g_p = params.T
        kappa, psi = z[..., 0], z[..., 1]
        return np.concatenate([truncated_normal_score(a_k, g_k, kappa, -psi, psi),
                               truncated_normal_score(a_p, g_p, psi, 0.0, PSI_MAX)], axis=-1)

    def log_joint(self, vartheta, theta, kappa, psi):
        """Full log joint (up to a constant) for arrays with a leading sample axis."""
        vartheta = np.asarray(vartheta, float)[..., None]
        theta = np.asarray(theta, float)[..., None]
        r = self.model.y - vartheta - kappa
        z_sd = _SQRT_PRIOR_VAR
        ll = self.n / 2.0 * np.log(theta[..., 0]) - theta[..., 0] * np.sum(r * r, axis=-1) / 2.0
        prior = (-vartheta[..., 0] ** 2 / (2 * PRIOR_VAR) - theta[..., 0]
                 - np.sum((kappa * kappa + (psi - PSI_PRIOR_MEAN) ** 2) / (2 * PRIOR_VAR), axis=-1)
                 - np.sum(log_diff_normal_cdf(-psi / z_sd, psi / z_sd), axis=-1))
        return ll + prior

    def nested_log_c(self, factor: str, z, lam, m: int, rng):
        """Double Monte Carlo estimate of log c for the vartheta or theta factor.

        Used only to check the analytic local terms; differs from them by a
        constant in ``z`` plus Monte Carlo error.
        """
        rng = as_generator(rng)
        vt = self.sample_vartheta(lam[self.idx_vartheta], m, rng)[:, 0]
        th = self.sample_theta(lam[self.idx_theta], m, rng)[:, 0]
        pair = self.sample_pair(lam[self.idx_pair], m, rng)
        kappa, psi = pair[..., 0], pair[..., 1]
        z = np.asarray(z, float).ravel()
        out = np.empty(z.size)
        for i, zi in enumerate(z):
            if factor == "vartheta":
                out[i] = np.mean(self.log_joint(np.full(m, zi), th, kappa, psi))
            elif factor == "theta":
                out[i] = np.mean(self.log_joint(vt, np.full(m, zi), kappa, psi))
            else:
                raise ValueError(f"nested estimate not available for {factor!r}")
        return out


def model2_bbvi_factors(model: Model2, quadrature_nodes: int = 64):
    """The three factor groups of Model 2 as :class:`mccavi.bbvi.FactorFamily` objects."""
    from ..bbvi import BbviModel, FactorFamily

    b = Model2Bbvi(model, quadrature_nodes)
    factors = [
        FactorFamily("vartheta", b.idx_vartheta, b.sample_vartheta, b.score_vartheta, b.log_q_vartheta,
                     b.log_c_vartheta),
        FactorFamily("theta", b.idx_theta, b.sample_theta, b.score_theta, b.log_q_theta, b.log_c_theta),
        FactorFamily("pair", b.idx_pair, b.sample_pair, b.score_pair, b.log_q_pair, b.log_c_pair),
    ]
    return BbviModel(factors, dim=b.dim, context=b.context, names=b.names(), helper=b)
