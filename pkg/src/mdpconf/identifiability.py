"""When can C be recovered? Stationary-distribution conditions across actions,
plus the two-superstate aggregation used to reconstruct a symmetric C.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

import numpy as np

from .core import ConfusionMatrix, StateDistribution, _entries
from .errors import ValidationError

DISTINCT_TOL = 1e-6
MAX_SUBSET_STATES = 15


@dataclass(frozen=True, order=True)
class Partition2:
    """Two-block partition of the states; ``block`` is the first superstate."""

    block: tuple
    n: int

    def __post_init__(self):
        b = tuple(sorted(set(int(i) for i in self.block)))
        if not 1 <= len(b) <= self.n - 1 or b[0] < 0 or b[-1] >= self.n:
            raise ValidationError(f"block {self.block} is not a non-empty strict subset of range({self.n})")
        object.__setattr__(self, "block", b)

    @property
    def complement(self) -> tuple:
        return tuple(i for i in range(self.n) if i not in self.block)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, bool)
        m[list(self.block)] = True
        return m

    def labels(self) -> np.ndarray:
        """Superstate index (0 for the block, 1 for the complement) of every state."""
        return np.where(self.mask(), 0, 1)


@dataclass(frozen=True)
class AggregatedSystem:
    pi_bar: np.ndarray
    c_bar_11: float
    c_bar_22: float

    @property
    def confusion(self) -> np.ndarray:
        return np.array([[self.c_bar_11, 1 - self.c_bar_11], [1 - self.c_bar_22, self.c_bar_22]])


@dataclass(frozen=True)
class IdentifiabilityReport:
    satisfied: bool
    violating_subsets: list
    tol: float

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "violating_subsets": [list(p.block) for p in self.violating_subsets],
            "tol": self.tol,
        }


def check_pairwise(pi_a, pi_b, tol: float = DISTINCT_TOL) -> bool:
    """True iff the two stationary distributions differ by more than ``tol`` (inf-norm)."""
    a, b = _entries(pi_a), _entries(pi_b)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.max(np.abs(a - b)) > tol)


def canonical_subsets(n: int) -> list[tuple]:
    """One representative of each {B, complement} pair, ordered by size then lexicographically."""
    out = []
    for size in range(1, n // 2 + 1):
        for b in combinations(range(n), size):
            if 2 * size == n and 0 not in b:
                continue
            out.append(b)
    return out


def subset_spread(stationaries: np.ndarray, block) -> float:
    """max over action pairs of |sum_B pi^a - sum_B pi^a'| (rows are actions)."""
    sums = np.asarray(stationaries)[:, list(block)].sum(axis=1)
    return float(sums.max() - sums.min())


def check_subset_condition(stationaries: Mapping, tol: float = DISTINCT_TOL,
                           max_states: int = MAX_SUBSET_STATES) -> IdentifiabilityReport:
    """Report every subset B whose stationary mass is the same (within tol) for all actions."""
    if len(stationaries) < 2:
        raise ValidationError("need at least two actions")
    S = np.stack([_entries(p) for p in stationaries.values()])
    n = S.shape[1]
    if n > max_states:
        raise ValidationError(f"subset enumeration capped at n={max_states}, got n={n}")
    subsets = canonical_subsets(n)
    member = np.zeros((len(subsets), n))
    for r, b in enumerate(subsets):
        member[r, list(b)] = 1.0
    sums = member @ S.T
    spread = sums.max(axis=1) - sums.min(axis=1)
    bad = [Partition2(subsets[r], n) for r in np.flatnonzero(spread <= tol)]
    return IdentifiabilityReport(not bad, bad, tol)


def aggregate_partition(C, pi, part: Partition2) -> AggregatedSystem:
    C, pi = _entries(C), _entries(pi)
    m = part.mask()
    mass = pi[m].sum()
    rest = pi[~m].sum()
    if mass <= 0 or rest <= 0:
        raise ValidationError(f"partition {part.block} has a zero-mass block")
    c11 = pi[m] @ C[np.ix_(m, m)].sum(axis=1) / mass
    c22 = pi[~m] @ C[np.ix_(~m, ~m)].sum(axis=1) / rest
    return AggregatedSystem(np.array([mass, rest]), float(c11), float(c22))


def aggregate_transition(P, pi, part: Partition2) -> np.ndarray:
    """Stationary one-step superstate transition matrix P-bar."""
    P, pi = _entries(P), _entries(pi)
    lab = part.labels()
    agg = np.zeros((2, 2))
    flow = pi[:, None] * P
    for I in range(2):
        for J in range(2):
            agg[I, J] = flow[np.ix_(lab == I, lab == J)].sum()
    return agg / agg.sum(axis=1, keepdims=True)


def reconstruct_symmetric(diag_solutions: Mapping, pair_solutions: Mapping, pi,
                          tol: float = 1e-6) -> ConfusionMatrix:
    """Rebuild a symmetric C from singleton diagonals and pair-block C-bar values.

    For the block {i, j}: C-bar_11 (pi_i + pi_j) = pi_i (C_ii + x) + pi_j (x + C_jj)
    with x = C_ij = C_ji. The diagonal is then reset to 1 - (off-diagonal row
    sum), which keeps the result exactly symmetric and row-stochastic; the
    pre-reset row sums must already be within ``tol`` of 1.
    """
    pi = _entries(pi)
    n = pi.size
    if np.any(pi <= 0):
        raise ValidationError("pi must be strictly positive")
    d = np.array([float(diag_solutions[i]) for i in range(n)])
    if n == 2:
        C = np.array([[d[0], 1 - d[0]], [1 - d[1], d[1]]])
        if abs(C[0, 1] - C[1, 0]) > tol:
            raise ValidationError(f"diagonals {d.tolist()} are inconsistent with a symmetric 2x2 C")
        x = 0.5 * (C[0, 1] + C[1, 0])
        return ConfusionMatrix(np.array([[1 - x, x], [x, 1 - x]]), symmetric=True)
    C = np.diag(d)
    for i, j in combinations(range(n), 2):
        key = (i, j) if (i, j) in pair_solutions else frozenset((i, j))
        cbar = float(pair_solutions[key])
        C[i, j] = C[j, i] = cbar - (pi[i] * d[i] + pi[j] * d[j]) / (pi[i] + pi[j])
    if C.min() < -tol or C.max() > 1 + tol:
        raise ValidationError(f"reconstructed entries fall outside [0, 1]: {C.round(6).tolist()}")
    dev = np.abs(C.sum(axis=1) - 1)
    if dev.max() > tol:
        i = int(dev.argmax())
        raise ValidationError(f"reconstructed row {i} sums to {C[i].sum():.9g}, tolerance {tol}")
    off = np.clip(C, 0.0, 1.0)
    np.fill_diagonal(off, 0.0)
    C = off + np.diag(1.0 - off.sum(axis=1))
    if C.min() < 0:
        raise ValidationError("off-diagonal mass exceeds 1 after clamping")
    return ConfusionMatrix(C, symmetric=True)
