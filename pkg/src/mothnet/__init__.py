"""Firing-rate model of the insect olfactory network as a few-shot learner."""

from .classifiers import ResponseStats, fit_stats, loglik_predict, softmax_predict
from .network import NetworkInstance, NetworkTemplate, generate_instance, learner_template
from .sde import SdeParams, SigmoidParams, euler_maruyama_step, make_rng, sigmoid

__version__ = "0.1.0"

__all__ = [
    "NetworkInstance", "NetworkTemplate", "ResponseStats", "SdeParams", "SigmoidParams",
    "euler_maruyama_step", "fit_stats", "generate_instance", "learner_template",
    "loglik_predict", "make_rng", "sigmoid", "softmax_predict",
]
