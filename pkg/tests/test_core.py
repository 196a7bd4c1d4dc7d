import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import C1, P_A, P_A1, random_stochastic
from mdpconf.core import (
    ConfusionMatrix,
    Mdp,
    ObservedTransitionMatrix,
    RandomPolicy,
    StateDistribution,
    chain_period,
    check_stochastic,
    empirical_observed_transition,
    exact_observed_transition,
    is_irreducible,
    mixing_burn_in,
    simulate,
    stationary_distribution,
)
from mdpconf.errors import (
    PeriodicChainWarning,
    ReducibleChain,
    RenormalizedWarning,
    UnreachableObservation,
    ValidationError,
)
from oracles import observed_transition_by_enumeration


def test_check_stochastic_names_bad_row():
    with pytest.raises(ValidationError, match="row 1 sums to 0.9"):
        check_stochastic([[0.5, 0.5], [0.4, 0.5]], "confusion")


def test_check_stochastic_renormalizes_tiny_errors():
    with pytest.warns(RenormalizedWarning):
        out = check_stochastic([[0.5, 0.5 + 5e-10], [1, 0]])
    assert abs(out[0].sum() - 1) < 1e-15


def test_negative_entry_rejected():
    with pytest.raises(ValidationError):
        ConfusionMatrix([[1.2, -0.2], [0, 1]])


def test_confusion_constructors():
    assert np.array_equal(ConfusionMatrix.identity(3).entries, np.eye(3))
    np.testing.assert_allclose(ConfusionMatrix.two_state(0.4, 0.2).entries, [[0.6, 0.4], [0.2, 0.8]])
    with pytest.raises(ValidationError):
        ConfusionMatrix([[0.9, 0.1], [0.3, 0.7]], symmetric=True)
    with pytest.raises(ValidationError):
        ConfusionMatrix([[0.5, 0.5]])


def test_types_are_immutable():
    C = ConfusionMatrix(C1)
    with pytest.raises(ValueError):
        C.entries[0, 0] = 0.5


def test_mdp_actions_by_name():
    mdp = Mdp([P_A, P_A1], ("a", "b"))
    assert mdp.action_index("b") == 1 and mdp.action_index(0) == 0
    np.testing.assert_array_equal(mdp.P(1), P_A1)
    with pytest.raises(ValidationError):
        mdp.action_index("zzz")


def test_stationary_simple():
    pi = stationary_distribution([[0.9, 0.1], [0.5, 0.5]]).probs
    np.testing.assert_allclose(pi, [5 / 6, 1 / 6], atol=1e-14)


def test_stationary_periodic_warns():
    with pytest.warns(PeriodicChainWarning):
        pi = stationary_distribution(P_A).probs
    np.testing.assert_allclose(pi, [0.5, 0.5])
    assert chain_period(P_A) == 2 and chain_period(P_A1) == 1


def test_stationary_reducible_raises():
    assert not is_irreducible(np.eye(2))
    with pytest.raises(ReducibleChain):
        stationary_distribution(np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_stationary_is_fixed_point(n, seed):
    P = random_stochastic(np.random.default_rng(seed), n)
    pi = stationary_distribution(P).probs
    np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
    assert abs(pi.sum() - 1) < 1e-12


def test_mixing_burn_in():
    assert mixing_burn_in(P_A) == 1000  # |lambda_2| = 1
    b = mixing_burn_in(P_A1)  # lambda_2 = -0.4
    assert b == int(np.ceil(np.log(1e3) / 0.6))


def test_exact_q_worked_example_values():
    Q = exact_observed_transition(C1, [0.5, 0.5], P_A)
    np.testing.assert_allclose(Q.entries, [[0.45, 0.55], [0.825, 0.175]], atol=1e-12)
    assert Q.defined.all() and Q.counts is None


def test_exact_q_unreachable_observation():
    C = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(UnreachableObservation) as exc:
        exact_observed_transition(C, [0.5, 0.5], P_A1)
    assert exc.value.index == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**31))
def test_exact_q_matches_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    C, P = random_stochastic(rng, n), random_stochastic(rng, n)
    pi = stationary_distribution(P).probs
    Q = exact_observed_transition(C, pi, P).entries
    np.testing.assert_allclose(Q, observed_transition_by_enumeration(C, pi, P), atol=1e-12)


def test_identity_confusion_gives_p():
    P = np.array([[0.2, 0.8, 0.0], [0.1, 0.1, 0.8], [0.5, 0.0, 0.5]])
    pi = stationary_distribution(P).probs
    np.testing.assert_allclose(exact_observed_transition(np.eye(3), pi, P).entries, P, atol=1e-14)


def test_observed_transition_undefined_rows():
    Q = ObservedTransitionMatrix([[0.5, 0.5], [0, 0]], counts=[4, 0])
    assert Q.defined.tolist() == [True, False]
    assert np.isnan(Q.entries[1]).all()


def test_simulate_deterministic_and_shapes():
    mdp = Mdp([P_A1, P_A])
    t1 = simulate(mdp, C1, RandomPolicy.uniform(2), 500, seed=7)
    t2 = simulate(mdp, C1, RandomPolicy.uniform(2), 500, seed=7)
    t3 = simulate(mdp, C1, RandomPolicy.uniform(2), 500, seed=8)
    assert np.array_equal(t1.observations, t2.observations) and np.array_equal(t1.actions, t2.actions)
    assert not np.array_equal(t1.observations, t3.observations)
    assert t1.T == 500 and len(t1) == 501
    steps = list(t1.steps)
    assert steps[-1].a == -1 and steps[0].t == 0


def test_simulate_prefix_stable():
    """A shorter run is a prefix of a longer one (the stream is indexed by step)."""
    mdp = Mdp([P_A1])
    short = simulate(mdp, C1, 0, 100, seed=3)
    long = simulate(mdp, C1, 0, 1000, seed=3)
    assert np.array_equal(short.states, long.states[:101])
    assert np.array_equal(short.observations, long.observations[:101])


def test_simulate_identity_confusion_observes_truth():
    traj = simulate(Mdp([P_A1]), np.eye(2), 0, 200, seed=1)
    assert np.array_equal(traj.states, traj.observations)


def test_simulate_point_initial():
    traj = simulate(Mdp([P_A]), np.eye(2), 0, 10, initial=StateDistribution.point(2, 1))
    assert traj.states.tolist() == [1, 0] * 5 + [1]


def test_simulate_validation():
    mdp = Mdp([P_A1])
    with pytest.raises(ValidationError):
        simulate(mdp, np.eye(3), 0, 10)
    with pytest.raises(ValidationError):
        simulate(mdp, C1, [0, 0], 10)
    with pytest.raises(ValidationError):
        simulate(mdp, C1, 3, 10)


def test_empirical_q_converges():
    mdp = Mdp([P_A1])
    traj = simulate(mdp, C1, 0, 200_000, seed=0)
    Q = empirical_observed_transition(traj)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        exact = exact_observed_transition(C1, stationary_distribution(P_A1), P_A1)
    np.testing.assert_allclose(Q.entries, exact.entries, atol=0.01)
    assert Q.counts.sum() == 200_000


def test_empirical_q_action_filter_and_window():
    mdp = Mdp([P_A1, P_A])
    traj = simulate(mdp, C1, [0] * 50 + [1] * 50, 100, seed=0)
    assert empirical_observed_transition(traj, action=1).counts.sum() == 50
    assert empirical_observed_transition(traj, window=(10, 20)).counts.sum() == 10
    with pytest.raises(ValidationError):
        empirical_observed_transition(traj, window=(0, 101))
