"""Domain types, stationary distributions, the observed-transition identity and
seeded trajectory simulation.

States, observations and actions are 0-based integers throughout.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from . import kernels
from .errors import (
    PeriodicChainWarning,
    ReducibleChain,
    RenormalizedWarning,
    UnreachableObservation,
    ValidationError,
)

STOCHASTIC_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def check_stochastic(rows, name: str = "matrix") -> np.ndarray:
    """Validate a probability vector (1-D) or row-stochastic matrix (2-D).

    Rows off by at most 1e-9 are renormalized with a warning; anything worse
    raises :class:`ValidationError` naming the offending row.
    """
    a = np.array(rows, dtype=np.float64)
    if a.ndim not in (1, 2) or a.size == 0:
        raise ValidationError(f"{name}: expected a non-empty vector or matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: contains non-finite entries")
    rows2 = a.reshape(-1, a.shape[-1])
    for i, row in enumerate(rows2):
        label = name if a.ndim == 1 else f"{name} row {i}"
        if row.min() < -RENORMALIZE_TOL or row.max() > 1 + RENORMALIZE_TOL:
            raise ValidationError(f"{label}: entries must lie in [0, 1], got {row.tolist()}")
        s = row.sum()
        err = abs(s - 1.0)
        if err > RENORMALIZE_TOL:
            raise ValidationError(f"{label} sums to {s:.12g}, expected 1")
        if err > STOCHASTIC_TOL or row.min() < 0:
            warnings.warn(f"{label} renormalized (sum {s!r})", RenormalizedWarning, stacklevel=3)
            row = np.clip(row, 0.0, None)
            rows2[i] = row / row.sum()
    return rows2.reshape(a.shape)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic matrix; ``entries[i, j]`` is P(observe j | true state i)."""

    entries: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        e = check_stochastic(self.entries, "confusion")
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValidationError(f"confusion: expected a square matrix, got shape {e.shape}")
        if self.symmetric and not np.allclose(e, e.T, rtol=0, atol=STOCHASTIC_TOL):
            raise ValidationError("confusion: flagged symmetric but C != C^T")
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> "ConfusionMatrix":
        return cls(np.eye(n), symmetric=True)

    @classmethod
    def two_state(cls, alpha: float, beta: float) -> "ConfusionMatrix":
        """The family ``[[1 - alpha, alpha], [beta, 1 - beta]]``."""
        return cls(np.array([[1 - alpha, alpha], [beta, 1 - beta]]))


@dataclass(frozen=True)
class StateDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = check_stochastic(self.probs, "distribution")
        if p.ndim != 1:
            raise ValidationError(f"distribution: expected a vector, got shape {p.shape}")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "StateDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point(cls, n: int, i: int) -> "StateDistribution":
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)


@dataclass(frozen=True)
class Mdp:
    """Known dynamics: one row-stochastic ``n x n`` matrix per action."""

    transitions: np.ndarray
    action_names: tuple = ()

    def __post_init__(self):
        P = np.array(self.transitions, dtype=np.float64)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValidationError(f"transitions: expected shape (m, n, n), got {P.shape}")
        if P.shape[1] < 2:
            raise ValidationError("an MDP needs at least 2 states")
        names = tuple(self.action_names) or tuple(str(a) for a in range(P.shape[0]))
        if len(names) != P.shape[0]:
            raise ValidationError("action_names length does not match the number of actions")
        P = np.stack([check_stochastic(P[a], f"actions.{names[a]}") for a in range(P.shape[0])])
        object.__setattr__(self, "transitions", _frozen(P))
        object.__setattr__(self, "action_names", names)

    @property
    def n(self) -> int:
        return self.transitions.shape[1]

    @property
    def m(self) -> int:
        return self.transitions.shape[0]

    def P(self, a: int) -> np.ndarray:
        if not 0 <= a < self.m:
            raise ValidationError(f"action index {a} out of range [0, {self.m})")
        return self.transitions[a]

    def action_index(self, a) -> int:
        if isinstance(a, (int, np.integer)):
            self.P(int(a))
            return int(a)
        try:
            return self.action_names.index(a)
        except ValueError:
            raise ValidationError(f"unknown action {a!r}") from None


class Step(NamedTuple):
    t: int
    s: int
    s_tilde: int
    a: int  # -1 on the final record, where no action is applied


@dataclass(frozen=True)
class Trajectory:
    """``states``/``observations`` have length T+1; ``actions`` has length T."""

    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    seed: int | None = None
    n: int | None = None

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", int(np.max(self.states, initial=0)) + 1)
        for name in ("states", "observations", "actions"):
            a = np.array(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.states.shape != self.observations.shape or self.actions.size != self.states.size - 1:
            raise ValidationError("trajectory arrays have inconsistent lengths")

    @property
    def T(self) -> int:
        return self.actions.size

    def __len__(self) -> int:
        return self.states.size

    @property
    def steps(self) -> Iterator[Step]:
        for t in range(self.states.size):
            a = int(self.actions[t]) if t < self.T else -1
            yield Step(t, int(self.states[t]), int(self.observations[t]), a)


@dataclass(frozen=True)
class ObservedTransitionMatrix:
    """Observed-state transition matrix.

    Rows never visited (``counts[i] == 0``) are NaN and reported through
    :attr:`defined`; exact matrices carry ``counts=None`` and are fully defined.
    """

    entries: np.ndarray
    counts: np.ndarray | None = None
    defined: np.ndarray = field(default=None)

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if self.defined is None:
            d = np.ones(e.shape[0], bool) if self.counts is None else np.asarray(self.counts) > 0
        else:
            d = np.asarray(self.defined, bool)
        e[~d] = np.nan
        rs = e[d].sum(axis=1)
        if rs.size and np.max(np.abs(rs - 1.0)) > 1e-9:
            raise ValidationError("observed transition rows must sum to 1")
        object.__setattr__(self, "entries", _frozen(e))
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "defined", d)
        if self.counts is not None:
            c = np.array(self.counts, dtype=np.int64)
            c.setflags(write=False)
            object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


# ---------------------------------------------------------------------------
# stationary distributions

def _as_stochastic(P) -> np.ndarray:
    if isinstance(P, np.ndarray) and not P.flags.writeable:
        return P
    P = check_stochastic(P, "transition")
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"transition: expected a square matrix, got shape {P.shape}")
    return P


def is_irreducible(P) -> bool:
    n_comp, _ = connected_components(np.asarray(P) > 0, directed=True, connection="strong")
    return n_comp == 1


def chain_period(P) -> int:
    """Period of an irreducible chain (gcd of level differences along edges)."""
    adj = np.asarray(P) > 0
    order, pred = breadth_first_order(adj, 0, directed=True)
    level = np.full(adj.shape[0], -1)
    level[0] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g


def stationary_distribution(P) -> StateDistribution:
    """Unique stationary distribution of an irreducible chain, via a linear solve.

    Periodic chains are accepted (with :class:`PeriodicChainWarning`) since
    time-averaged statistics still converge for them.
    """
    P = _as_stochastic(P)
    if not is_irreducible(P):
        raise ReducibleChain("transition graph is not strongly connected")
    period = chain_period(P)
    if period > 1:
        warnings.warn(f"chain has period {period}", PeriodicChainWarning, stacklevel=2)
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    pi = np.clip(pi, 0.0, None)
    return StateDistribution(pi / pi.sum())


def mixing_burn_in(P, eps: float = 1e-3, fallback: int = 1000) -> int:
    """ceil(log(1/eps) / (1 - |lambda_2|)), or ``fallback`` if |lambda_2| ~ 1."""
    mods = np.sort(np.abs(np.linalg.eigvals(np.asarray(P))))[::-1]
    lam2 = mods[1] if mods.size > 1 else 0.0
    if lam2 >= 1 - 1e-9:
        return fallback
    return int(math.ceil(math.log(1 / eps) / (1 - lam2)))


# ---------------------------------------------------------------------------
# observed transitions

def _entries(x) -> np.ndarray:
    if isinstance(x, (ConfusionMatrix,)):
        return x.entries
    if isinstance(x, StateDistribution):
        return x.probs
    return np.asarray(x, dtype=np.float64)


def exact_observed_transition(C, pi, P) -> ObservedTransitionMatrix:
    """Q = diag(C^T pi)^-1 C^T diag(pi) P C."""
    C, pi, P = _entries(C), _entries(pi), _entries(P)
    marg = C.T @ pi
    zero = np.flatnonzero(marg <= 0)
    if zero.size:
        raise UnreachableObservation(zero[0])
    joint = C.T @ (pi[:, None] * P) @ C
    return ObservedTransitionMatrix(joint / marg[:, None])


def empirical_observed_transition(traj: Trajectory, action=None, window=None) -> ObservedTransitionMatrix:
    """Count observed pairs (s~_t, s~_{t+1}) with a_t == action, t in [start, end).

    ``action=None`` counts every step; ``window=None`` means the whole trajectory.
    """
    n_pairs = traj.T
    start, end = (0, n_pairs) if window is None else window
    if not 0 <= start <= end <= n_pairs:
        raise ValidationError(f"window {window} outside [0, {n_pairs}]")
    obs = traj.observations
    src, dst = obs[start:end], obs[start + 1 : end + 1]
    if action is not None:
        keep = traj.actions[start:end] == action
        src, dst = src[keep], dst[keep]
    n = max(traj.n, int(obs.max(initial=0)) + 1)
    return counts_to_transition(np.bincount(src * n + dst, minlength=n * n).reshape(n, n))


def counts_to_transition(counts: np.ndarray) -> ObservedTransitionMatrix:
    counts = np.asarray(counts)
    row = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        Q = counts / row[:, None]
    return ObservedTransitionMatrix(Q, counts=row)


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class RandomPolicy:
    """Memoryless stochastic policy: draws a_t ~ ``probs`` independently each step."""

    probs: np.ndarray

    @classmethod
    def uniform(cls, m: int) -> "RandomPolicy":
        return cls(np.full(m, 1.0 / m))


def make_rng_stream(seed: int, T: int) -> np.ndarray:
    """All uniforms a trajectory of length T consumes, shape (T+1, 3).

    Row t holds, in order, the draws for s_t, s~_t and a_t (Philox, a
    counter-based generator, so the stream depends on the seed alone).
    """
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return rng.random((T + 1, 3))


def simulate(mdp: Mdp, C, action_source, T: int, initial=None, seed: int = 0) -> Trajectory:
    """Sample a trajectory of T transitions.

    ``action_source`` is an action index (repeated), a sequence of at least T
    action indices, or a :class:`RandomPolicy`. ``initial`` defaults to uniform.
    """
    if T < 0:
        raise ValidationError("T must be >= 0")
    C = C if isinstance(C, ConfusionMatrix) else ConfusionMatrix(C)
    if C.n != mdp.n:
        raise ValidationError("confusion matrix and MDP disagree on n")
    if initial is None:
        initial = StateDistribution.uniform(mdp.n)
    elif not isinstance(initial, StateDistribution):
        initial = StateDistribution(initial)
    if initial.n != mdp.n:
        raise ValidationError("initial distribution has the wrong length")

    cdf_policy = np.ones(1)
    if isinstance(action_source, RandomPolicy):
        probs = check_stochastic(action_source.probs, "policy")
        if probs.size != mdp.m:
            raise ValidationError("policy length does not match the number of actions")
        schedule = np.full(T, -1, dtype=np.int64)
        cdf_policy = kernels.sampling_cdf(probs)
    elif isinstance(action_source, (int, np.integer)):
        schedule = np.full(T, int(action_source), dtype=np.int64)
    else:
        schedule = np.asarray(action_source, dtype=np.int64)[:T]
        if schedule.size < T:
            raise ValidationError(f"action schedule shorter than T={T}")
    if schedule.size and (schedule.max() >= mdp.m or (schedule.min() < 0 and not isinstance(action_source, RandomPolicy))):
        raise ValidationError(f"action index out of range [0, {mdp.m})")

    u = make_rng_stream(seed, T)
    states, obs, actions = kernels.sample_chain(
        kernels.sampling_cdf(initial.probs),
        kernels.sampling_cdf(mdp.transitions),
        kernels.sampling_cdf(C.entries),
        np.ascontiguousarray(schedule),
        cdf_policy,
        u,
    )
    return Trajectory(states, obs, actions, seed=seed, n=mdp.n)
