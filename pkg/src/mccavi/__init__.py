"""Coordinate-ascent VI with Monte Carlo block updates, black-box VI and MCMC baselines."""
from .bbvi import AdaGradState, BbviDivergence, BbviModel, FactorFamily, adagrad_step, rb_gradient, run_bbvi
from .mc_cavi import McSchedule, delta_elbo_rule, first_plateau, plateau_detect, run_mc_cavi
from .mcmc import ChainState, GibbsRule, MhProposal, MhRule, mwg_sweep, run_chain
from .vi import (ClosedFormBlock, ConfigurationError, ConvergenceError, ModelSpec, MonteCarloBlock,
                 SweepTrace, VariationalState, elbo, run_cavi)

__version__ = "0.1.0"

__all__ = [
    "AdaGradState", "BbviDivergence", "BbviModel", "ChainState", "ClosedFormBlock", "ConfigurationError",
    "ConvergenceError", "FactorFamily", "GibbsRule", "McSchedule", "MhProposal", "MhRule", "ModelSpec",
    "MonteCarloBlock", "SweepTrace", "VariationalState", "adagrad_step", "delta_elbo_rule", "elbo",
    "first_plateau", "mwg_sweep", "plateau_detect", "rb_gradient", "run_bbvi", "run_cavi", "run_chain",
    "run_mc_cavi",
]
