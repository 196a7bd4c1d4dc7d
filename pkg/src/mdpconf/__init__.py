"""Estimating the state-observation confusion matrix of a Markov decision process."""
from ._accel import backend
from .bayes import (
    PosteriorOverC,
    filter_trajectory,
    first_order_step,
    init_posterior,
    posterior_summary,
    run_bayes,
    second_order_step,
)
from .core import (
    ConfusionMatrix,
    Mdp,
    ObservedTransitionMatrix,
    RandomPolicy,
    StateDistribution,
    Trajectory,
    empirical_observed_transition,
    exact_observed_transition,
    simulate,
    stationary_distribution,
)
from .errors import *  # noqa: F401,F403
from .harness import Scenario, frobenius_error, load_scenario, run_experiment
from .identifiability import Partition2, aggregate_partition, check_pairwise, check_subset_condition, reconstruct_symmetric
from .repetitive import (
    estimate_by_partitions,
    intersect_solutions,
    loss_gradient,
    loss_single,
    loss_total,
    minimize_loss,
    run_protocol,
    solve_two_state,
)

__version__ = "0.1.0"
