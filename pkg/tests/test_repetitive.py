import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import C1, C2, P_A, P_A1, P_A2, random_stochastic
from mdpconf.core import ConfusionMatrix, Mdp, exact_observed_transition, stationary_distribution
from mdpconf.errors import IdentifiabilityError, NoConsistentSolution, Underdetermined, ValidationError
from mdpconf.identifiability import Partition2
from mdpconf.repetitive import (
    ActionData,
    RepetitiveProtocolConfig,
    TwoStateSolutionSet,
    estimate_by_partitions,
    exact_aggregated_transition,
    exact_protocol_data,
    intersect_solutions,
    loss_gradient,
    loss_single,
    loss_total,
    minimize_loss,
    residual_jacobian,
    run_protocol,
    solve_two_state,
    spurious_solution,
)

EXAMPLE = Mdp([P_A, P_A1, P_A2], ("a", "a1", "a2"))


def _pi(P):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return stationary_distribution(P).probs


def _data(Ps, C):
    out = {}
    for i, P in enumerate(Ps):
        pi = _pi(P)
        out[i] = ActionData(pi, np.asarray(P), exact_observed_transition(C, pi, P))
    return out


def test_loss_zero_at_truth_and_both_example_solutions():
    data = exact_protocol_data(EXAMPLE, C1, [0, 1])
    assert loss_total(C1, data) <= 1e-20
    assert loss_total(C2, data) <= 1e-20
    assert loss_total(np.full((2, 2), 0.5), data) > 1e-3


def test_loss_ignores_undefined_rows():
    from mdpconf.core import ObservedTransitionMatrix

    pi, P = np.array([0.5, 0.5]), P_A1
    Q = exact_observed_transition(C1, pi, P)
    partial = ObservedTransitionMatrix(Q.entries, defined=[True, False])
    assert loss_single(C1, pi, P, partial) <= 1e-30
    assert loss_single(C2, pi, P, partial) <= loss_single(C2, pi, P, Q) + 1e-30


@pytest.mark.parametrize("n", [2, 3, 4])
def test_gradient_and_jacobian_consistent(n):
    rng = np.random.default_rng(n)
    C_true = random_stochastic(rng, n)
    data = _data([random_stochastic(rng, n) for _ in range(2)], C_true)
    C = random_stochastic(rng, n)
    G = loss_gradient(C, data)
    # 2 J^T r averaged over actions
    G2 = np.zeros(n * n)
    from mdpconf.repetitive import _residual

    for d in data.values():
        r = _residual(C, d.pi, d.P, d.Q).ravel()
        G2 += 2 * residual_jacobian(C, d.pi, d.P, d.Q).T @ r
    np.testing.assert_allclose(G.ravel(), G2 / len(data), rtol=1e-10, atol=1e-14)


def test_minimize_worked_example_finds_both():
    res = minimize_loss(exact_protocol_data(EXAMPLE, C1, [0, 1]))
    feas = res.feasible
    assert len(feas) == 2 and res.selected is None and res.non_unique
    got = sorted(tuple(np.round(c.C.ravel(), 6)) for c in feas)
    want = sorted(tuple(m.ravel()) for m in (C1, C2))
    np.testing.assert_allclose(got, want, atol=1e-6)
    assert not res.diagnostics["identifiability"].satisfied


def test_minimize_unique_with_distinct_stationaries():
    res = minimize_loss(exact_protocol_data(EXAMPLE, C1, [0, 2]))
    assert len(res.feasible) == 1 and res.selected == 0
    np.testing.assert_allclose(res.estimate, C1, atol=1e-6)
    assert res.diagnostics["identifiability"].satisfied


def test_minimize_is_deterministic():
    data = exact_protocol_data(EXAMPLE, C1, [0, 2])
    a, b = minimize_loss(data, starts=4), minimize_loss(data, starts=4)
    assert [c.C.tolist() for c in a.candidates] == [c.C.tolist() for c in b.candidates]


def test_minimize_rejects_empty():
    with pytest.raises(ValidationError):
        minimize_loss({})


def test_identity_confusion_mirror_ambiguity():
    """Two actions with a shared stationary law cannot tell C from its row swap."""
    res = minimize_loss(exact_protocol_data(EXAMPLE, np.eye(2), [0, 1]))
    got = sorted(np.round(c.C, 6).tolist() for c in res.feasible)
    assert got == [[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]]


def test_run_protocol_windows():
    cfg = RepetitiveProtocolConfig(("a1", "a2"), 2000, burn_in=50, seed=1)
    data = run_protocol(EXAMPLE, C1, cfg)
    assert set(data) == {1, 2}
    for d in data.values():
        assert d.Q.counts.sum() == 2000 and d.observed.size == 2001
    with pytest.raises(ValidationError):
        RepetitiveProtocolConfig((), 10)


def test_solve_two_state_worked_example():
    for P in (P_A, P_A1):
        pi = _pi(P)
        s = solve_two_state(pi, P, exact_observed_transition(C1, pi, P))
        np.testing.assert_allclose(s.solutions, [(0.3, 0.9), (0.9, 0.3)], atol=1e-10)
    pi = _pi(P_A2)
    s = solve_two_state(pi, P_A2, exact_observed_transition(C1, pi, P_A2))
    np.testing.assert_allclose(s.solutions, [(0.9, 0.3)], atol=1e-10)
    np.testing.assert_allclose(s.infeasible, [(0.7, 1.3)], atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(0.02, 0.98), st.floats(0.1, 0.9), st.floats(0.05, 0.95))
def test_solve_two_state_matches_closed_form(c, d, alpha, p):
    q = alpha / (1 - alpha) * (1 - p)
    if abs(c - d) < 1e-3 or q > 1 or abs(p - alpha) < 1e-3:
        return  # coincident roots, invalid P, or rank-1 P (tested separately)
    P = np.array([[p, 1 - p], [q, 1 - q]])
    pi = np.array([alpha, 1 - alpha])
    C = np.array([[c, 1 - c], [d, 1 - d]])
    s = solve_two_state(pi, P, exact_observed_transition(C, pi, P))
    pts = sorted(s.solutions + s.infeasible)
    want = sorted([(c, d), spurious_solution(c, d, alpha)])
    np.testing.assert_allclose(pts, want, atol=1e-8)


def test_solve_two_state_validation():
    with pytest.raises(ValidationError):
        solve_two_state([1 / 3] * 3, np.eye(3), np.eye(3))
    with pytest.raises(ValidationError):
        solve_two_state([0.5, 0.5], P_A1, [[np.nan, np.nan], [0.5, 0.5]])


def test_solve_two_state_rank_one_dynamics_underdetermined():
    pi = np.array([0.5, 0.5])
    P = np.full((2, 2), 0.5)
    with pytest.raises(Underdetermined):
        solve_two_state(pi, P, exact_observed_transition(C1, pi, P))


def test_solve_two_state_double_root_when_rows_equal():
    pi = np.array([0.5, 0.5])
    C = np.array([[0.7, 0.3], [0.7, 0.3]])
    s = solve_two_state(pi, P_A1, exact_observed_transition(C, pi, P_A1))
    assert s.degenerate and len(s) == 1
    np.testing.assert_allclose(s.solutions[0], (0.7, 0.7), atol=1e-9)


def test_intersect_solutions():
    a = TwoStateSolutionSet(((0.3, 0.9), (0.9, 0.3)))
    b = TwoStateSolutionSet(((0.9, 0.3 + 1e-9),))
    out = intersect_solutions([a, b])
    assert len(out) == 1 and out.solutions[0] == pytest.approx((0.9, 0.3), abs=1e-8)
    with pytest.raises(NoConsistentSolution):
        intersect_solutions([a, TwoStateSolutionSet(((0.5, 0.5),))])


def _three_state_mdp():
    pi2 = np.array([0.5, 0.3, 0.2])
    P1 = 0.5 * np.eye(3) + 0.5 * np.full((3, 3), 1 / 3)
    P2 = 0.5 * np.eye(3) + 0.5 * np.outer(np.ones(3), pi2)
    return Mdp([P1, P2], ("u", "v"))


C3 = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])


def test_exact_aggregated_transition_rows_sum_to_one():
    mdp = _three_state_mdp()
    pi = _pi(mdp.P(1))
    Qb = exact_aggregated_transition(C3, pi, mdp.P(1), Partition2((0, 2), 3))
    np.testing.assert_allclose(Qb.sum(axis=1), 1)


def test_partitions_exact_recovery():
    res = estimate_by_partitions(_three_state_mdp(), ["u", "v"], confusion=C3)
    assert res.selected == 0
    np.testing.assert_allclose(res.estimate, C3, atol=1e-8)


def test_partitions_abort_when_unidentifiable():
    mdp = Mdp([P_A, P_A1])
    with pytest.raises(IdentifiabilityError):
        estimate_by_partitions(mdp, [0, 1], confusion=[[0.8, 0.2], [0.2, 0.8]], on_unidentifiable="abort")


def test_partitions_argument_checks():
    with pytest.raises(ValidationError):
        estimate_by_partitions(_three_state_mdp(), [0, 1])
