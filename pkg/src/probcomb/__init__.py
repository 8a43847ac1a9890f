"""Composable probabilistic programs: traces, model and inference combinators, and gradient estimators."""

from .distributions import Binding, Categorical, Dirichlet, Factor, Normal, NormalDiag
from .errors import ProbCombError
from .estimators import Adam, ParameterStore, grad_phi, grad_theta, wake_sleep_epoch
from .inference import (Population, SMCOptions, SMCResult, ess, importance, move, move_mh, move_reweight,
                        resample, run_population, smc)
from .model import (EvalContext, Model, bind_last, chain, compose, fold, hmm, identity, map_combinator, mixture,
                    partial, primitive, reduce_combinator, score, ssm)
from .rng import RngStream
from .trace import Address, Role, RVRecord, Trace, WeightedSample

__version__ = "0.1.0"
