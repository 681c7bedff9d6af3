"""Semi-conjugate normal model with unknown mean and precision.

    x_j | vartheta, tau ~ N(vartheta, 1/tau)
    vartheta | tau      ~ N(0, 1/tau)
    tau                 ~ Gamma(1, 1)

The mean-field factors are q(tau) = Gamma((n+3)/2, zeta) and
q(vartheta) = N(n*xbar/(1+n), 1/((1+n) E tau)). Convergence is monitored on
``zeta`` and ``theta = (1+n) E tau``.
"""
from __future__ import annotations

import math

import numpy as np

from ..mcmc import ChainState, GibbsRule
from ..stats import LOG_2PI, Gamma, Normal, as_generator
from ..vi import ClosedFormBlock, ModelSpec, MonteCarloBlock, VariationalState


def generate(n: int, rng, mean: float = 10.0, sd: float = 10.0) -> np.ndarray:
    """n draws from N(10, 100) by default."""
    return as_generator(rng).normal(mean, sd, size=int(n))


class Model1:
    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValueError("data must be a non-empty vector")
        self.n = self.x.size
        self.sum_x = float(self.x.sum())
        self.sum_x2 = float(np.dot(self.x, self.x))
        self.tau_shape = (self.n + 3) / 2.0

    @property
    def xbar(self):
        return self.sum_x / self.n

    # -- closed-form pieces -------------------------------------------------

    def zeta(self, e_vartheta, e_vartheta2):
        z = 1.0 + ((1 + self.n) * e_vartheta2 - 2.0 * self.sum_x * e_vartheta + self.sum_x2) / 2.0
        assert z > 0, "zeta must be positive for valid moments"
        return z

    def tau_factor(self, state):
        return Gamma(self.tau_shape, self.zeta(state["E_vartheta"], state["E_vartheta2"]))

    def update_tau(self, state):
        q = self.tau_factor(state)
        return q, {"E_tau": q.shape / q.rate, "E_log_tau": q.mean_log(),
                   "tau_shape": q.shape, "tau_rate": q.rate}

    def update_vartheta(self, state):
        q = Normal(self.sum_x / (1 + self.n), 1.0 / ((1 + self.n) * state["E_tau"]))
        return q, {"E_vartheta": q.mean, "E_vartheta2": q.mean**2 + q.variance,
                   "vartheta_mean": q.mean, "vartheta_var": q.variance}

    def monitor(self, state):
        return {"zeta": self.zeta(state["E_vartheta"], state["E_vartheta2"]),
                "theta": (1 + self.n) * state["E_tau"], "E_tau": state["E_tau"]}

    def initial_state(self, e_vartheta=0.0, e_vartheta2=0.0):
        return VariationalState(moments={"E_vartheta": e_vartheta, "E_vartheta2": e_vartheta2})

    # -- ELBO ---------------------------------------------------------------

    def elbo(self, state):
        """Analytic ELBO of Gamma(tau_shape, tau_rate) x N(vartheta_mean, vartheta_var)."""
        qt = Gamma(state["tau_shape"], state["tau_rate"])
        qv = Normal(state["vartheta_mean"], state["vartheta_var"])
        e_tau = qt.shape / qt.rate
        e_log_tau = qt.mean_log()
        m, v = qv.mean, qv.variance
        n = self.n
        quad = self.sum_x2 - 2.0 * self.sum_x * m + (n + 1) * (m * m + v)
        e_log_p = -(n + 1) / 2.0 * LOG_2PI + (n + 1) / 2.0 * e_log_tau - e_tau / 2.0 * quad - e_tau
        h_normal = 0.5 * (LOG_2PI + 1.0 + math.log(v))
        return e_log_p + h_normal + qt.entropy()

    def log_joint(self, z):
        vt = np.asarray(z["vartheta"], dtype=float)[..., None]
        tau = np.asarray(z["tau"], dtype=float)
        lt = tau[..., None]
        ll = np.sum(0.5 * np.log(lt) - 0.5 * LOG_2PI - 0.5 * lt * (self.x - vt) ** 2, axis=-1)
        vt = vt[..., 0]
        prior_v = 0.5 * np.log(tau) - 0.5 * LOG_2PI - 0.5 * tau * vt**2
        return ll + prior_v - tau

    def sample_q(self, state, size, rng):
        rng = as_generator(rng)
        return {"tau": rng.gamma(state["tau_shape"], 1.0 / state["tau_rate"], size=size),
                "vartheta": rng.normal(state["vartheta_mean"], math.sqrt(state["vartheta_var"]), size=size)}

    def log_q(self, state, z):
        qt = Gamma(state["tau_shape"], state["tau_rate"])
        qv = Normal(state["vartheta_mean"], state["vartheta_var"])
        return qt.log_pdf(z["tau"]) + qv.log_pdf(z["vartheta"])

    # -- model specs --------------------------------------------------------

    def _spec(self, tau_block, name):
        return ModelSpec(blocks=[tau_block, ClosedFormBlock("vartheta", self.update_vartheta)],
                         monitor=self.monitor, elbo=self.elbo, log_joint=self.log_joint,
                         sample_q=self.sample_q, log_q=self.log_q, name=name)

    def cavi_spec(self) -> ModelSpec:
        return self._spec(ClosedFormBlock("tau", self.update_tau), "model1")

    def mc_spec(self) -> ModelSpec:
        """The tau block is estimated from an exact Gibbs chain instead of its closed form."""

        def rules(state):
            q = self.tau_factor(state)
            scale = 1.0 / q.rate

            def draw(values, rng):
                return rng.gamma(q.shape, scale)

            def draw_many(values, m, rng):
                return rng.gamma(q.shape, scale, size=m)

            return [GibbsRule("tau", draw, draw_many)]

        def finish(state, averages):
            q = self.tau_factor(state)
            return {"E_tau": float(averages["tau"]), "E_log_tau": float(averages["log_tau"]),
                    "tau_shape": q.shape, "tau_rate": q.rate}

        block = MonteCarloBlock(
            "tau",
            init_chain=lambda: ChainState({"tau": 1.0}, constraint=lambda v: bool(v["tau"] > 0)),
            rules=rules,
            statistics={"tau": lambda v: v["tau"], "log_tau": lambda v: np.log(v["tau"])},
            finish=finish,
        )
        return self._spec(block, "model1-mc")
