"""Second-order repetitive-actions estimator.

Each action in the protocol is repeated long enough for the true-state
distribution to settle at the action's stationary distribution; the observed
pair statistics then satisfy a quadratic matrix equation in C, which is solved
either by multi-start least squares (any n), in closed form (n = 2), or by
two-superstate aggregation (symmetric C).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .core import (
    ConfusionMatrix,
    Mdp,
    ObservedTransitionMatrix,
    PeriodicChainWarning,
    _entries,
    counts_to_transition,
    empirical_observed_transition,
    exact_observed_transition,
    mixing_burn_in,
    simulate,
    stationary_distribution,
)
from .errors import (
    IdentifiabilityError,
    IdentifiabilityWarning,
    NoConsistentSolution,
    NoConvergence,
    Underdetermined,
    ValidationError,
)
from .identifiability import (
    IdentifiabilityReport,
    Partition2,
    aggregate_transition,
    canonical_subsets,
    check_subset_condition,
    reconstruct_symmetric,
)

DEDUP_RADIUS = 1e-3
EXACT_TOL_LOSS = 1e-10


@dataclass(frozen=True)
class RepetitiveProtocolConfig:
    actions: tuple
    T: int
    burn_in: int | None = None  # None: per-action mixing-time estimate
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValidationError("protocol needs at least one action")
        if self.T < 1:
            raise ValidationError("T must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")


@dataclass(frozen=True)
class ActionData:
    """Everything the losses need for one action; ``observed`` is the raw
    observed-state run of the counted window (empirical protocols only)."""

    pi: np.ndarray
    P: np.ndarray
    Q: ObservedTransitionMatrix
    observed: np.ndarray | None = None


@dataclass
class Candidate:
    C: np.ndarray
    residual: float
    feasible: bool


@dataclass
class EstimationResult:
    candidates: list
    selected: int | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimate(self) -> np.ndarray | None:
        return None if self.selected is None else self.candidates[self.selected].C

    @property
    def feasible(self) -> list:
        return [c for c in self.candidates if c.feasible]

    @property
    def non_unique(self) -> bool:
        return bool(self.diagnostics.get("non_unique", False))


# ---------------------------------------------------------------------------
# data collection

def default_burn_in(P) -> int:
    return mixing_burn_in(P, eps=1e-3, fallback=1000)


def run_protocol(mdp: Mdp, C_true, cfg: RepetitiveProtocolConfig) -> dict[int, ActionData]:
    """Simulate one trajectory that repeats each action for burn_in + T steps.

    Q-hat per action is counted over the T steps after that action's burn-in.
    The stationary distribution is computed from the known P(a).
    """
    actions = [mdp.action_index(a) for a in cfg.actions]
    pis = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicChainWarning)
        for a in actions:
            pis[a] = stationary_distribution(mdp.P(a)).probs
    burn = {a: default_burn_in(mdp.P(a)) if cfg.burn_in is None else cfg.burn_in for a in actions}
    schedule, windows, start = [], {}, 0
    for a in actions:
        schedule.extend([a] * (burn[a] + cfg.T))
        windows[a] = (start + burn[a], start + burn[a] + cfg.T)
        start += burn[a] + cfg.T
    traj = simulate(mdp, C_true, np.array(schedule, dtype=np.int64), len(schedule), seed=cfg.seed)
    out = {}
    for a in actions:
        lo, hi = windows[a]
        Q = empirical_observed_transition(traj, a, (lo, hi))
        out[a] = ActionData(pis[a], mdp.P(a), Q, observed=traj.observations[lo : hi + 1])
    return out


def exact_protocol_data(mdp: Mdp, C, actions: Sequence) -> dict[int, ActionData]:
    """Oracle data: Q-hat replaced by the exact observed transition matrix."""
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicChainWarning)
        for a in actions:
            a = mdp.action_index(a)
            pi = stationary_distribution(mdp.P(a)).probs
            out[a] = ActionData(pi, mdp.P(a), exact_observed_transition(C, pi, mdp.P(a)))
    return out


# ---------------------------------------------------------------------------
# losses

def _residual(C, pi, P, Q: ObservedTransitionMatrix):
    Qe = np.nan_to_num(Q.entries, nan=0.0)
    R = C.T @ (pi[:, None] * P) @ C - (C.T @ pi)[:, None] * Qe
    R[~Q.defined] = 0.0
    return R


def loss_single(C, pi, P, Q: ObservedTransitionMatrix) -> float:
    """Squared Frobenius norm of C^T diag(pi) P C - diag(C^T pi) Q over defined rows of Q."""
    R = _residual(_entries(C), _entries(pi), _entries(P), Q)
    return float(np.sum(R * R))


def _unpack(d):
    if isinstance(d, ActionData):
        return d.pi, d.P, d.Q
    return d


def loss_total(C, data: Mapping) -> float:
    C = _entries(C)
    return sum(loss_single(C, *_unpack(d)) for d in data.values()) / len(data)


def loss_gradient(C, data: Mapping) -> np.ndarray:
    """Gradient of :func:`loss_total` with respect to the entries of C.

    With M the masked residual and r_i = sum_j M_ij Q_ij:
    dL/dC = 2 (diag(pi) P C M^T + P^T diag(pi) C M - pi r^T), averaged over actions.
    """
    C = _entries(C)
    G = np.zeros_like(C)
    for d in data.values():
        pi, P, Q = _unpack(d)
        M = _residual(C, pi, P, Q)
        DP = pi[:, None] * P
        r = np.sum(M * np.nan_to_num(Q.entries, nan=0.0), axis=1)
        G += 2.0 * (DP @ C @ M.T + DP.T @ C @ M - np.outer(pi, r))
    return G / len(data)


def residual_jacobian(C, pi, P, Q: ObservedTransitionMatrix) -> np.ndarray:
    """d vec(R) / d vec(C), shape (n*n, n*n), row-major vec."""
    n = C.shape[0]
    A = pi[:, None] * P
    AC, CtA = A @ C, C.T @ A
    Qe = np.nan_to_num(Q.entries, nan=0.0)
    J = np.zeros((n, n, n, n))
    for i in range(n):
        # d R_ij / d C_k,i  (l == i)
        J[i, :, :, i] += AC.T - np.outer(Qe[i], pi)
        # d R_ij / d C_k,j  (l == j)
        for j in range(n):
            J[i, j, :, j] += CtA[i]
    J[~Q.defined] = 0.0
    return J.reshape(n * n, n * n)


# ---------------------------------------------------------------------------
# multi-start minimization

def _softmax_rows(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _default_tol_loss(data, n) -> float:
    counts = [d.Q.counts for d in map(_as_action_data, data.values())]
    if any(c is None for c in counts):
        return EXACT_TOL_LOSS
    T = min(int(c.sum()) for c in counts)
    return 10.0 * n * n / max(T, 1)


def _as_action_data(d):
    return d if isinstance(d, ActionData) else ActionData(*d)


def _polish(C0, data):
    """Bounded Gauss-Newton on the free columns 0..n-2 (last column = 1 - rest)."""
    n = C0.shape[0]
    items = [_unpack(d) for d in data.values()]
    scale = 1.0 / np.sqrt(len(items))

    def full(v):
        F = v.reshape(n, n - 1)
        return np.hstack([F, 1.0 - F.sum(axis=1, keepdims=True)])

    def fun(v):
        C = full(v)
        return scale * np.concatenate([_residual(C, *it).ravel() for it in items])

    def jac(v):
        C = full(v)
        Js = []
        for it in items:
            J = residual_jacobian(C, *it).reshape(n * n, n, n)
            Js.append((J[:, :, :-1] - J[:, :, -1:]).reshape(n * n, n * (n - 1)))
        return scale * np.vstack(Js)

    v0 = np.clip(C0[:, :-1], 0.0, 1.0).ravel()
    res = least_squares(fun, v0, jac=jac, bounds=(0.0, 1.0), method="trf",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    C = np.clip(full(res.x), 0.0, 1.0)
    return C / C.sum(axis=1, keepdims=True)


def _local_minimize(Z0, data, max_iters, tol_grad):
    n = Z0.shape[0]

    def f(z):
        Z = z.reshape(n, n)
        C = _softmax_rows(Z)
        G = loss_gradient(C, data)
        gz = C * (G - np.sum(G * C, axis=1, keepdims=True))
        return loss_total(C, data), gz.ravel()

    res = minimize(f, Z0.ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "gtol": tol_grad, "ftol": 0.0})
    C = _softmax_rows(res.x.reshape(n, n))
    try:
        C2 = _polish(C, data)
        if loss_total(C2, data) <= loss_total(C, data):
            C = C2
    except (ValueError, np.linalg.LinAlgError):
        pass
    return C


def _candidate_key(c: Candidate):
    n = c.C.shape[0]
    return (c.residual, float(np.max(np.abs(c.C - 1.0 / n))), tuple(c.C.ravel()))


def minimize_loss(data: Mapping, starts: int = 32, max_iters: int = 500, tol_grad: float = 1e-14,
                  tol_loss: float | None = None, seed: int = 0) -> EstimationResult:
    """Multi-start minimization of :func:`loss_total` over row-stochastic C.

    Starts: ``starts`` random matrices (uniform rows on the simplex), plus the
    identity and the uniform matrix. Rows are optimized through a softmax map,
    then polished with bounded Gauss-Newton directly on C. Local minima closer
    than 1e-3 (inf-norm) are merged. A single feasible candidate
    (residual <= tol_loss) is selected; several feasible candidates mean the
    data do not identify C and nothing is selected.
    """
    if not data:
        raise ValidationError("data must be non-empty")
    first = _as_action_data(next(iter(data.values())))
    n = first.P.shape[0]
    if tol_loss is None:
        tol_loss = _default_tol_loss(data, n)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    inits = [np.log(np.clip(np.eye(n), 1e-6, None)), np.zeros((n, n))]
    inits += [np.log(rng.dirichlet(np.ones(n), size=n)) for _ in range(starts)]

    found = []
    for Z0 in inits:
        C = _local_minimize(Z0, data, max_iters, tol_grad)
        if np.all(np.isfinite(C)):
            found.append(Candidate(C, loss_total(C, data), False))
    if not found:
        raise NoConvergence("no optimizer start produced a finite minimum")
    found.sort(key=_candidate_key)
    kept: list[Candidate] = []
    for c in found:
        if all(np.max(np.abs(c.C - k.C)) > DEDUP_RADIUS for k in kept):
            c.feasible = c.residual <= tol_loss
            kept.append(c)
    n_feasible = sum(c.feasible for c in kept)
    selected = 0 if n_feasible == 1 else None
    diag = {
        "tol_loss": tol_loss,
        "n_feasible": n_feasible,
        "non_unique": n_feasible > 1,
        "per_action_loss": {},
    }
    if selected is not None:
        diag["per_action_loss"] = {a: loss_single(kept[0].C, *_unpack(d)) for a, d in data.items()}
    if len(data) >= 2:
        diag["identifiability"] = check_subset_condition({a: _unpack(d)[0] for a, d in data.items()})
    return EstimationResult(kept, selected, diag)


# ---------------------------------------------------------------------------
# n = 2 closed form

@dataclass(frozen=True)
class TwoStateSolutionSet:
    """Solutions (x, y) of the two-state system, X = [[x, 1-x], [y, 1-y]]."""

    solutions: tuple
    infeasible: tuple = ()
    degenerate: bool = False

    def matrices(self) -> list[np.ndarray]:
        return [np.array([[x, 1 - x], [y, 1 - y]]) for x, y in self.solutions]

    def __len__(self):
        return len(self.solutions)


def spurious_solution(c: float, d: float, alpha: float) -> tuple:
    """The second root of the two-state system generated by C = [[c, 1-c], [d, 1-d]]."""
    return (2 * d - c + 2 * alpha * c - 2 * alpha * d, d + 2 * alpha * c - 2 * alpha * d)


def _conic_coefficients(pi, P, Q):
    """Coefficients [xx, yy, xy, x, y, 1] of entries (0,0) and (1,0) of
    X^T diag(pi) P X - diag(X^T pi) Q."""
    A = pi[:, None] * P
    X0 = np.array([[0.0, 1.0], [0.0, 1.0]])
    Ex = np.array([[1.0, -1.0], [0.0, 0.0]])
    Ey = np.array([[0.0, 0.0], [1.0, -1.0]])

    def lin(E):
        return E.T @ A @ X0 + X0.T @ A @ E - np.diag(E.T @ pi) @ Q

    mats = [
        Ex.T @ A @ Ex,
        Ey.T @ A @ Ey,
        Ex.T @ A @ Ey + Ey.T @ A @ Ex,
        lin(Ex),
        lin(Ey),
        X0.T @ A @ X0 - np.diag(X0.T @ pi) @ Q,
    ]
    f = np.array([M[0, 0] for M in mats])
    g = np.array([M[1, 0] for M in mats])
    return f, g


def _quadratic_roots(a, b, c, rel=1e-10):
    scale = max(abs(a), abs(b), abs(c))
    if scale == 0:
        return None
    if abs(a) <= 1e-14 * scale:
        if abs(b) <= 1e-14 * scale:
            return [] if abs(c) > 1e-14 * scale else None
        return [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        if disc < -rel * max(b * b, abs(4 * a * c)):
            return []
        disc = 0.0
    if disc <= rel * b * b:
        disc = 0.0
    sq = np.sqrt(disc)
    q = -0.5 * (b + np.copysign(sq, b)) if b != 0 else -0.5 * sq
    if q == 0:
        return [0.0]
    r1, r2 = q / a, c / q
    return [r1] if r1 == r2 else [r1, r2]


def solve_two_state(pi_a, P_a, Q_a, feas_tol: float = 1e-9) -> TwoStateSolutionSet:
    """All real (x, y) with X = [[x, 1-x], [y, 1-y]] solving the stationary identity.

    The two quadratic equations share their quadratic part up to sign, so their
    sum is a line; substituting the line into the first equation leaves one
    univariate quadratic.
    """
    pi, P = _entries(pi_a), _entries(P_a)
    Q = Q_a.entries if isinstance(Q_a, ObservedTransitionMatrix) else np.asarray(Q_a, float)
    if pi.shape != (2,) or P.shape != (2, 2) or Q.shape != (2, 2):
        raise ValidationError("solve_two_state expects a 2-state system")
    if np.any(pi <= 0):
        raise ValidationError("pi must be strictly positive")
    if not np.all(np.isfinite(Q)):
        raise ValidationError("Q has undefined rows")
    if abs(np.linalg.det(P)) < 1e-12:
        raise Underdetermined("P(a) has rank 1, so consecutive states are independent and Q carries no information on C")
    f, g = _conic_coefficients(pi, P, Q)
    k = int(np.argmax(np.abs(f[:3])))
    if abs(f[k]) < 1e-14:
        raise Underdetermined("no quadratic terms in the conic system")
    line = g - (g[k] / f[k]) * f
    lx, ly, l0 = line[3], line[4], line[5]
    scale = np.max(np.abs(np.concatenate([f, g])))
    if max(abs(lx), abs(ly)) <= 1e-13 * scale:
        raise Underdetermined("the two conics coincide")
    fxx, fyy, fxy, fx, fy, f0 = f
    pts = []
    if abs(ly) >= abs(lx):
        m, c0 = -lx / ly, -l0 / ly  # y = m x + c0
        roots = _quadratic_roots(fxx + fyy * m * m + fxy * m,
                                 2 * fyy * m * c0 + fxy * c0 + fx + fy * m,
                                 fyy * c0 * c0 + fy * c0 + f0)
        if roots is None:
            raise Underdetermined("conic restricted to the line vanishes identically")
        pts = [(x, m * x + c0) for x in roots]
    else:
        m, c0 = -ly / lx, -l0 / lx  # x = m y + c0
        roots = _quadratic_roots(fyy + fxx * m * m + fxy * m,
                                 2 * fxx * m * c0 + fxy * c0 + fy + fx * m,
                                 fxx * c0 * c0 + fx * c0 + f0)
        if roots is None:
            raise Underdetermined("conic restricted to the line vanishes identically")
        pts = [(m * y + c0, y) for y in roots]
    if len(pts) == 2 and max(abs(pts[0][0] - pts[1][0]), abs(pts[0][1] - pts[1][1])) <= 1e-9:
        pts = [tuple(0.5 * (np.asarray(pts[0]) + np.asarray(pts[1])))]  # double root
    feas, infeas = [], []
    for x, y in pts:
        if -feas_tol <= x <= 1 + feas_tol and -feas_tol <= y <= 1 + feas_tol:
            feas.append((float(min(max(x, 0.0), 1.0)), float(min(max(y, 0.0), 1.0))))
        else:
            infeas.append((float(x), float(y)))
    degenerate = len(pts) == 1
    return TwoStateSolutionSet(tuple(sorted(feas)), tuple(sorted(infeas)), degenerate)


def intersect_solutions(sets: Sequence[TwoStateSolutionSet], tol: float = 1e-6) -> TwoStateSolutionSet:
    """Points present (within ``tol``, inf-norm) in every set, averaged across sets."""
    if not sets:
        raise ValidationError("need at least one solution set")
    if len(sets) == 1:
        return sets[0]
    out = []
    for p in sets[0].solutions:
        matched = [np.asarray(p)]
        for s in sets[1:]:
            near = [q for q in s.solutions if max(abs(q[0] - p[0]), abs(q[1] - p[1])) <= tol]
            if not near:
                break
            matched.append(np.asarray(min(near, key=lambda q: max(abs(q[0] - p[0]), abs(q[1] - p[1])))))
        else:
            out.append(tuple(float(v) for v in np.mean(matched, axis=0)))
    if not out:
        raise NoConsistentSolution("no solution is shared by every action")
    return TwoStateSolutionSet(tuple(sorted(out)), (), len(out) == 1 and all(s.degenerate for s in sets))


# ---------------------------------------------------------------------------
# symmetric C by superstate aggregation

def exact_aggregated_transition(C, pi, P, part: Partition2) -> np.ndarray:
    """Observed superstate transition matrix at stationarity, from the full joint law."""
    C, pi, P = _entries(C), _entries(pi), _entries(P)
    joint = C.T @ (pi[:, None] * P) @ C
    lab = part.labels()
    agg = np.array([[joint[np.ix_(lab == I, lab == J)].sum() for J in range(2)] for I in range(2)])
    return agg / agg.sum(axis=1, keepdims=True)


def empirical_aggregated_transition(observed: np.ndarray, part: Partition2) -> ObservedTransitionMatrix:
    s = part.labels()[np.asarray(observed)]
    counts = np.bincount(s[:-1] * 2 + s[1:], minlength=4).reshape(2, 2)
    return counts_to_transition(counts)


def _partitions(n):
    singles = [Partition2((i,), n) for i in range(n)]
    pairs = [Partition2(p, n) for p in combinations(range(n), 2)] if n >= 3 else []
    return singles, pairs


def estimate_by_partitions(mdp: Mdp, actions: Sequence, *, observed: Mapping | None = None,
                           confusion=None, match_tol: float | None = None,
                           row_tol: float | None = None,
                           on_unidentifiable: str = "warn") -> EstimationResult:
    """Recover a symmetric C from two-state problems on singleton and pair partitions.

    Provide either ``observed`` (action -> observed-state run recorded while
    repeating that action at stationarity) or ``confusion`` (oracle mode: the
    superstate transitions are computed exactly from that C).

    The superstate chain obeys the two-state identity with an action-independent
    C-bar only when every state's observation mass in each block is constant
    within its block (e.g. C = a I + b 11^T); other symmetric C give biased
    estimates or no consistent solution.
    """
    if (observed is None) == (confusion is None):
        raise ValidationError("pass exactly one of observed= or confusion=")
    exact = confusion is not None
    match_tol = (1e-6 if exact else 0.05) if match_tol is None else match_tol
    row_tol = (1e-6 if exact else 0.1) if row_tol is None else row_tol
    acts = [mdp.action_index(a) for a in actions]
    if exact:
        data = exact_protocol_data(mdp, confusion, acts)
    else:
        data = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PeriodicChainWarning)
            for a in acts:
                seq = np.asarray(observed[a])
                counts = np.bincount(seq[:-1] * mdp.n + seq[1:], minlength=mdp.n ** 2).reshape(mdp.n, mdp.n)
                data[a] = ActionData(stationary_distribution(mdp.P(a)).probs, mdp.P(a),
                                     counts_to_transition(counts), observed=seq)
    pis = {a: d.pi for a, d in data.items()}
    n = mdp.n
    if len(acts) >= 2:
        report = check_subset_condition(pis)
    else:
        report = IdentifiabilityReport(False, [Partition2(b, n) for b in canonical_subsets(n)], 0.0)
    if not report.satisfied:
        msg = f"subset condition fails for {[p.block for p in report.violating_subsets]}"
        if on_unidentifiable == "abort":
            raise IdentifiabilityError(msg)
        warnings.warn(msg, IdentifiabilityWarning, stacklevel=2)

    singles, pairs = _partitions(n)
    per_partition = {}
    non_unique = False
    chosen = {}
    for part in singles + pairs:
        sets = []
        for a in acts:
            d = data[a]
            pi_bar = np.array([d.pi[part.mask()].sum(), d.pi[~part.mask()].sum()])
            P_bar = aggregate_transition(d.P, d.pi, part)
            if exact:
                Q_bar = exact_aggregated_transition(confusion, d.pi, d.P, part)
            else:
                Qo = empirical_aggregated_transition(d.observed, part)
                if not Qo.defined.all():
                    raise NoConsistentSolution(f"partition {part.block}: a superstate was never observed")
                Q_bar = Qo.entries
            sets.append(solve_two_state(pi_bar, P_bar, Q_bar))
        common = intersect_solutions(sets, match_tol)
        if len(common) > 1:
            non_unique = True
        chosen[part.block] = common.solutions[0]
        per_partition[part.block] = {"solutions": [list(p) for p in common.solutions]}

    diag_sol = {}
    for i in range(n):
        x, y = chosen[(i,)]
        diag_sol[i] = x
        if n == 2 and i == 0:
            diag_sol[1] = 1.0 - y
            break
    pair_sol = {p.block: chosen[p.block][0] for p in pairs}
    candidates = []
    try:
        C_hat = reconstruct_symmetric(diag_sol, pair_sol, data[acts[0]].pi, tol=row_tol)
        candidates.append(Candidate(C_hat.entries.copy(), loss_total(C_hat, data), True))
    except ValidationError as exc:
        per_partition["reconstruction_error"] = str(exc)
    diag = {
        "identifiability": report,
        "non_unique": non_unique or not report.satisfied,
        "per_partition": per_partition,
    }
    selected = 0 if candidates and not diag["non_unique"] else None
    return EstimationResult(candidates, selected, diag)

