"""Bayesian NMR deconvolution: Lorentzian metabolite templates plus a wavelet residual.

Data-domain form of the likelihood (the transform is orthonormal, so the
coefficient-domain residual norm equals the data-domain one)::

    y = T(gamma, delta) beta + B vartheta + eps,   eps ~ N(0, I / theta)

with shrinkage ``vartheta_k ~ N(0, 1/(theta psi_k))``, ``psi_k ~ Gamma(c + 1/2, d/2)``
and truncation limits ``tau`` enforcing ``B vartheta >= tau`` and ``tau <= h``.

Two engines share the conditional samplers: MC-CAVI (closed-form psi and
theta factors, inner chains for (beta, delta, gamma) and (vartheta, tau)) and
a plain Metropolis-within-Gibbs sampler over every parameter.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..mcmc import ChainState, GibbsRule, MhProposal, MhRule, mwg_sweep
from ..stats import (LOG_2PI, as_generator, sample_truncated_normal,
                     sample_truncated_normal_scalar)
from ..vi import ClosedFormBlock, ModelSpec, MonteCarloBlock, VariationalState
from .templates import Spectrum, multiplet_contributions, multiplet_owner
from .wavelets import DEFAULT_LEVEL, basis_matrix, padded_length

CONSTRAINT_TOL = 1e-12
CENTER_WINDOW = 0.03
CENTER_PRIOR_VAR = 1e-4


class TruncationBoundError(RuntimeError):
    """Lower truncation bound above the upper one: the slack bookkeeping is broken."""


@dataclass(frozen=True)
class NmrHyper:
    c: float = 0.05
    d: float = 1e-8
    h: float = -0.002
    r: float = 1e5
    a: float = 1e-9
    e: float = 1e-6
    beta_mean: float = 0.0
    beta_prec: float = 1e-3
    # "conjugate": a + n1 + n/2 (full conjugate update); "prior": a + (n + n1)/2
    theta_shape: str = "conjugate"


class NmrModel:
    def __init__(self, spectrum: Spectrum, catalog, level: int = DEFAULT_LEVEL,
                 hyper: NmrHyper | None = None, gamma_init: float = 0.01):
        self.spectrum = spectrum
        self.catalog = list(catalog)
        self.hyper = hyper or NmrHyper()
        if self.hyper.theta_shape not in ("conjugate", "prior"):
            raise ValueError("theta_shape must be 'conjugate' or 'prior'")
        self.level = level
        self.n = spectrum.n
        self.n_pad = padded_length(self.n, level)
        self.n1 = self.n_pad
        # padded points carry zero intensity and zero template rows
        self.y = np.zeros(self.n_pad)
        self.y[:self.n] = spectrum.y
        self.grid = spectrum.x
        self.B = basis_matrix(self.n_pad, level)
        self.wy = self.B.T @ self.y
        self.yy = float(self.y @ self.y)
        self.M = len(self.catalog)
        self.owner = multiplet_owner(self.catalog)
        self.center_hat = np.concatenate([t.centers for t in self.catalog])
        self.K = self.center_hat.size
        self.gamma_init = gamma_init
        cols = []
        for k in range(self.n1):
            col = self.B[:, k]
            rows = np.flatnonzero(np.abs(col) > 0)
            vals = col[rows]
            cols.append((rows, vals, vals > 0, vals < 0))
        self._cols = cols

    # -- templates ---------------------------------------------------------

    def template(self, gamma, centers) -> np.ndarray:
        """n_pad x M template matrix (padding rows are zero)."""
        parts = multiplet_contributions(self.catalog, gamma, centers, self.grid)
        T = np.zeros((self.n_pad, self.M))
        for j, m in enumerate(self.owner):
            T[:self.n, m] += parts[:, j]
        return T

    def theta_shape(self):
        h = self.hyper
        if h.theta_shape == "conjugate":
            return h.a + self.n1 + self.n_pad / 2.0
        return h.a + (self.n_pad + self.n1) / 2.0

    def satisfies_constraints(self, vartheta, tau, tol=CONSTRAINT_TOL) -> bool:
        tau = np.asarray(tau)
        return bool(np.all(self.B @ vartheta >= tau - tol) and np.all(tau <= self.hyper.h + tol))

    # -- conditional samplers shared by both engines -----------------------

    def _beta_log_lik(self, tb, theta, resid):
        return -0.5 * theta * (tb @ tb - 2.0 * tb @ resid)

    def beta_block_rules(self, theta_of, resid_of, prefix=""):
        """Rules for (beta, gamma, delta_1..K) given precision and data-domain target.

        ``theta_of(values)`` and ``resid_of(values)`` supply the precision and
        ``y - B vartheta`` (expected or current, depending on the engine).
        """
        hp = self.hyper

        def centers(v):
            return np.array([float(v[f"delta_{k}"]) for k in range(self.K)])

        def draw_beta(v, rng):
            T = self.template(float(v["gamma"]), centers(v))
            theta, resid = theta_of(v), resid_of(v)
            beta = np.array(v["beta"], dtype=float)
            tb = T @ beta
            for m in range(self.M):
                tm = T[:, m]
                tb -= tm * beta[m]
                prec = hp.beta_prec + theta * (tm @ tm)
                mean = (hp.beta_prec * hp.beta_mean + theta * tm @ (resid - tb)) / prec
                beta[m] = sample_truncated_normal_scalar(mean, 1.0 / math.sqrt(prec), 0.0, math.inf, rng)
                tb += tm * beta[m]
            return beta

        def gamma_target(v, cand):
            g = float(cand)
            if not g > 0:
                return -math.inf
            tb = self.template(g, centers(v)) @ v["beta"]
            log_prior = -math.log(g) - 0.5 * math.log(g) ** 2
            return self._beta_log_lik(tb, theta_of(v), resid_of(v)) + log_prior

        rules = [GibbsRule("beta", draw_beta),
                 MhRule("gamma", MhProposal("rw", 0.1, "log"), gamma_target)]
        for k in range(self.K):
            lo = self.center_hat[k] - CENTER_WINDOW
            hi = self.center_hat[k] + CENTER_WINDOW

            def delta_target(v, cand, k=k, lo=lo, hi=hi):
                c = float(cand)
                if not lo <= c <= hi:
                    return -math.inf
                cs = centers(v)
                cs[k] = c
                tb = self.template(float(v["gamma"]), cs) @ v["beta"]
                return (self._beta_log_lik(tb, theta_of(v), resid_of(v))
                        - 0.5 * (c - self.center_hat[k]) ** 2 / CENTER_PRIOR_VAR)

            rules.append(MhRule(f"delta_{k}", MhProposal("tn_rw", 0.002, lower=lo, upper=hi), delta_target))
        return rules

    def vartheta_tau_rules(self, theta_of, psi_of, wresid_of):
        """Rules for (vartheta, tau); ``wresid_of`` gives W(y - T beta)."""
        hp = self.hyper
        cols = self._cols

        def draw_vartheta(v, rng):
            theta, psi, wres = theta_of(v), psi_of(v), wresid_of(v)
            vt = np.array(v["vartheta"], dtype=float)
            slack = self.B @ vt - v["tau"]
            means = wres / (1.0 + psi)
            sds = 1.0 / np.sqrt(theta * (1.0 + psi))
            for k in range(self.n1):
                rows, vals, pos, neg = cols[k]
                cur = vt[k]
                ratio = cur - slack[rows] / vals
                lower = ratio[pos].max() if pos.any() else -math.inf
                upper = ratio[neg].min() if neg.any() else math.inf
                if lower > upper:
                    if lower - upper > 1e-9 * max(1.0, abs(cur)):
                        raise TruncationBoundError(f"coefficient {k}: lower bound {lower} > upper {upper}")
                    lower = upper = cur
                new = sample_truncated_normal_scalar(means[k], sds[k], lower, upper, rng) if lower < upper else cur
                if new != cur:
                    slack[rows] += vals * (new - cur)
                    vt[k] = new
            return vt

        def draw_tau(v, rng):
            theta = theta_of(v)
            bound = np.minimum(hp.h, self.B @ v["vartheta"])
            return sample_truncated_normal(hp.h, 1.0 / math.sqrt(theta * hp.r), -math.inf, bound, rng)

        return [GibbsRule("vartheta", draw_vartheta), GibbsRule("tau", draw_tau)]

    # -- chain initial values ----------------------------------------------

    def _beta_values(self):
        v = {"beta": np.zeros(self.M), "gamma": self.gamma_init}
        v.update({f"delta_{k}": self.center_hat[k] for k in range(self.K)})
        return v

    def _vartheta_values(self):
        return {"vartheta": np.zeros(self.n1), "tau": np.full(self.n_pad, self.hyper.h)}

    def _centers_from(self, v):
        return np.array([float(v[f"delta_{k}"]) for k in range(self.K)])

    # -- MC-CAVI -------------------------------------------------------------

    def initial_state(self):
        hp = self.hyper
        return VariationalState(moments={
            "E_theta": 2.0 * hp.a / hp.e,
            "E_vartheta": np.zeros(self.n1), "E_vartheta2": np.zeros(self.n1),
            "E_tau": np.zeros(self.n_pad), "E_tau2": np.zeros(self.n_pad),
            "E_Tbeta": self.y.copy(), "E_TbetaSq": self.yy,
        })

    def update_psi(self, state):
        hp = self.hyper
        shape = hp.c + 0.5
        rate = (state["E_theta"] * state["E_vartheta2"] + hp.d) / 2.0
        return ("gamma", shape, rate), {"E_psi": shape / rate}

    def expected_residual_sq(self, state):
        """E |y - T beta - B vartheta|^2 with the two blocks independent."""
        etb, ev = state["E_Tbeta"], state["E_vartheta"]
        return float(self.yy + state["E_TbetaSq"] + np.sum(state["E_vartheta2"])
                     - 2.0 * self.y @ etb - 2.0 * self.wy @ ev + 2.0 * (self.B.T @ etb) @ ev)

    def update_theta(self, state):
        hp = self.hyper
        e_tau_h2 = state["E_tau2"] - 2.0 * hp.h * state["E_tau"] + hp.h**2
        rate = 0.5 * (float(np.sum(state["E_psi"] * state["E_vartheta2"])) + self.expected_residual_sq(state)
                      + hp.r * float(np.sum(e_tau_h2)) + hp.e)
        shape = self.theta_shape()
        return ("gamma", shape, rate), {"E_theta": shape / rate}

    def _beta_stats(self):
        def tb(v):
            return self.template(float(v["gamma"]), self._centers_from(v)) @ v["beta"]

        stats = {"E_Tbeta": tb, "E_TbetaSq": lambda v: float(np.sum(tb(v) ** 2)),
                 "E_beta": lambda v: v["beta"], "E_beta2": lambda v: v["beta"] ** 2,
                 "E_gamma": lambda v: v["gamma"],
                 "E_delta": self._centers_from}
        return stats

    def mc_cavi_spec(self) -> ModelSpec:
        def beta_rules(state):
            theta = state["E_theta"]
            resid = self.y - self.B @ state["E_vartheta"]
            return self.beta_block_rules(lambda v: theta, lambda v: resid)

        def vt_rules(state):
            theta, psi = state["E_theta"], state["E_psi"]
            wres = self.wy - self.B.T @ state["E_Tbeta"]
            return self.vartheta_tau_rules(lambda v: theta, lambda v: psi, lambda v: wres)

        beta_block = MonteCarloBlock("beta_delta_gamma", init_chain=lambda: ChainState(self._beta_values()),
                                     rules=beta_rules, statistics=self._beta_stats())
        vt_block = MonteCarloBlock(
            "vartheta_tau",
            init_chain=lambda: ChainState(self._vartheta_values(),
                                          constraint=lambda v: self.satisfies_constraints(v["vartheta"], v["tau"])),
            rules=vt_rules,
            statistics={"E_vartheta": lambda v: v["vartheta"], "E_vartheta2": lambda v: v["vartheta"] ** 2,
                        "E_tau": lambda v: v["tau"], "E_tau2": lambda v: v["tau"] ** 2,
                        "min_slack": lambda v: float(np.min(self.B @ v["vartheta"] - v["tau"]))})
        return ModelSpec(blocks=[ClosedFormBlock("psi", self.update_psi),
                                 ClosedFormBlock("theta", self.update_theta), beta_block, vt_block],
                         monitor=self.monitor, name="nmr")

    def monitor(self, state):
        out = {"E_theta": state["E_theta"]}
        if "E_beta" in state.moments:
            for m in range(self.M):
                out[f"beta_{m + 1}"] = state["E_beta"][m]
                out[f"beta2_{m + 1}"] = state["E_beta2"][m]
            out["gamma"] = state["E_gamma"]
        if "min_slack" in state.moments:
            out["max_tau"] = float(np.max(state["E_tau"]))
        return out

    # -- plain MCMC ----------------------------------------------------------

    def mcmc_chain(self):
        v = self._beta_values()
        v.update(self._vartheta_values())
        v["psi"] = np.ones(self.n1)
        v["theta"] = 2.0 * self.hyper.a / self.hyper.e
        return ChainState(v, constraint=lambda s: self.satisfies_constraints(s["vartheta"], s["tau"]))

    def mcmc_rules(self):
        hp = self.hyper

        def tb(v):
            return self.template(float(v["gamma"]), self._centers_from(v)) @ v["beta"]

        def draw_psi(v, rng):
            return rng.gamma(hp.c + 0.5, 2.0 / (v["theta"] * v["vartheta"] ** 2 + hp.d))

        def draw_theta(v, rng):
            res = self.y - tb(v) - self.B @ v["vartheta"]
            rate = 0.5 * (float(np.sum(v["psi"] * v["vartheta"] ** 2)) + float(res @ res)
                          + hp.r * float(np.sum((v["tau"] - hp.h) ** 2)) + hp.e)
            return rng.gamma(self.theta_shape(), 1.0 / rate)

        rules = [GibbsRule("psi", draw_psi), GibbsRule("theta", draw_theta)]
        rules += self.beta_block_rules(lambda v: float(v["theta"]), lambda v: self.y - self.B @ v["vartheta"])
        rules += self.vartheta_tau_rules(lambda v: float(v["theta"]), lambda v: v["psi"],
                                         lambda v: self.wy - self.B.T @ tb(v))
        return rules

    def run_mcmc(self, iters: int, rng, burn_in: int | None = None, budget_secs: float | None = None,
                 on_sweep=None):
        """Returns per-sweep arrays of beta, gamma, theta, centers and the minimum slack."""
        rng = as_generator(rng)
        chain = self.mcmc_chain()
        rules = self.mcmc_rules()
        rec = {"beta": [], "gamma": [], "theta": [], "delta": [], "min_slack": [], "max_tau": []}
        t0 = time.perf_counter()
        for k in range(iters):
            if budget_secs is not None and time.perf_counter() - t0 >= budget_secs:
                break
            if burn_in is not None and k >= burn_in:
                chain.freeze()
            mwg_sweep(chain, rules, rng)
            v = chain.values
            rec["beta"].append(v["beta"].copy())
            rec["gamma"].append(float(v["gamma"]))
            rec["theta"].append(float(v["theta"]))
            rec["delta"].append(self._centers_from(v))
            rec["min_slack"].append(float(np.min(self.B @ v["vartheta"] - v["tau"])))
            rec["max_tau"].append(float(np.max(v["tau"])))
            if on_sweep is not None:
                on_sweep(chain)
        out = {k: np.array(x) for k, x in rec.items()}
        out["chain"] = chain
        return out

    def log_likelihood(self, beta, gamma, centers, vartheta, theta):
        res = self.y - self.template(gamma, centers) @ beta - self.B @ vartheta
        return 0.5 * self.n1 * (math.log(theta) - LOG_2PI) - 0.5 * theta * float(res @ res)


def mc_cavi_beta_summary(trace, M, burn_in):
    """Mean and sd of the post-burn-in trace of each E(beta_m)."""
    cols = np.column_stack([trace.column(f"beta_{m}")[burn_in:] for m in range(1, M + 1)])
    sd = cols.std(axis=0, ddof=1) if cols.shape[0] > 1 else np.zeros(M)
    return cols.mean(axis=0), sd


def mc_cavi_q_sd(trace, M, burn_in):
    """Variational sd of each beta_m from the post-burn-in averages of E(beta) and E(beta^2).

    Sweep-to-sweep noise in E(beta) inflates the estimate slightly, never deflates it.
    """
    mean = np.array([trace.column(f"beta_{m}")[burn_in:].mean() for m in range(1, M + 1)])
    second = np.array([trace.column(f"beta2_{m}")[burn_in:].mean() for m in range(1, M + 1)])
    return np.sqrt(np.maximum(second - mean**2, 0.0))
