"""First- and second-order Bayesian estimation of C over a fixed weighted support.

The posterior density over confusion matrices is represented by K fixed
support points with log-weights; integrals over C become weighted sums.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .core import ConfusionMatrix, Mdp, RandomPolicy, _entries, simulate
from .errors import InconsistentObservation, ValidationError


@dataclass(frozen=True)
class PosteriorOverC:
    """Weighted support of candidate confusion matrices.

    ``support`` has shape (K, n, n) and never changes; ``log_weights`` are
    normalized so that ``weights`` sums to one. Grid posteriors also carry
    ``params`` (K, 2), the (alpha, beta) coordinates of each support point, and
    ``grid_shape``.
    """

    support: np.ndarray
    log_weights: np.ndarray
    kind: str = "ensemble"
    params: np.ndarray | None = None
    grid_shape: tuple | None = None

    def __post_init__(self):
        s = np.ascontiguousarray(self.support, dtype=np.float64)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ValidationError(f"support must have shape (K, n, n), got {s.shape}")
        lw = np.array(self.log_weights, dtype=np.float64)
        if lw.shape != (s.shape[0],):
            raise ValidationError("one log-weight per support point is required")
        if not np.isfinite(lw).any():
            raise ValidationError("all weights are zero")
        lw = lw - _logsumexp(lw)
        s.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "log_weights", lw)

    @property
    def K(self) -> int:
        return self.support.shape[0]

    @property
    def n(self) -> int:
        return self.support.shape[1]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w / w.sum()

    def with_log_weights(self, log_weights) -> "PosteriorOverC":
        return PosteriorOverC(self.support, log_weights, self.kind, self.params, self.grid_shape)

    def mass_within(self, eps: float, point) -> float:
        """Posterior mass in the inf-norm ball of radius ``eps`` around ``point``.

        ``point`` is an (alpha, beta) pair for grid posteriors, or a matrix.
        """
        point = np.asarray(point, dtype=np.float64)
        if self.params is not None and point.shape == (self.params.shape[1],):
            d = np.max(np.abs(self.params - point), axis=1)
        else:
            d = np.max(np.abs(self.support - point).reshape(self.K, -1), axis=1)
        return float(self.weights[d <= eps + 1e-12].sum())


@dataclass(frozen=True)
class BeliefState:
    """b_t: distribution of s_t given observations up to and including s~_t."""

    probs: np.ndarray


@dataclass(frozen=True)
class ModifiedBeliefState:
    """b~_t: distribution of s_t given observations up to s~_{t-1}."""

    probs: np.ndarray


@dataclass(frozen=True)
class BayesSnapshot:
    t: int
    weights: np.ndarray
    belief: np.ndarray
    mode_index: int
    mean: np.ndarray
    entropy: float


def _logsumexp(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


# ---------------------------------------------------------------------------
# priors

def grid_centers(resolution: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    return lo + (hi - lo) * (np.arange(resolution) + 0.5) / resolution


def init_posterior(kind: str = "grid", resolution: int = 101, K: int | None = None, n: int = 2,
                   parameterization: str = "alpha_beta", bounds=((0.0, 1.0), (0.0, 1.0)),
                   seed: int = 0) -> PosteriorOverC:
    """Uniform prior on a grid or an i.i.d. ensemble.

    grid: cell centers of a ``resolution x resolution`` lattice over
    (alpha, beta), mapped to C = [[1 - alpha, alpha], [beta, 1 - beta]];
    index k = i_alpha * resolution + i_beta.
    ensemble: K matrices whose rows are independent uniform draws on the simplex.
    """
    if kind == "grid":
        if parameterization != "alpha_beta" or n != 2:
            raise ValidationError("grid posteriors support the 2-state alpha_beta family only")
        if resolution < 2:
            raise ValidationError("grid resolution must be >= 2")
        a = grid_centers(resolution, *bounds[0])
        b = grid_centers(resolution, *bounds[1])
        A, B = np.meshgrid(a, b, indexing="ij")
        params = np.column_stack([A.ravel(), B.ravel()])
        support = np.empty((params.shape[0], 2, 2))
        support[:, 0, 0] = 1 - params[:, 0]
        support[:, 0, 1] = params[:, 0]
        support[:, 1, 0] = params[:, 1]
        support[:, 1, 1] = 1 - params[:, 1]
        K = params.shape[0]
        return PosteriorOverC(support, np.full(K, -np.log(K)), "grid", params, (resolution, resolution))
    if kind == "ensemble":
        if K is None or K < 1:
            raise ValidationError("ensemble posteriors need K >= 1")
        rng = np.random.Generator(np.random.Philox(int(seed)))
        support = rng.dirichlet(np.ones(n), size=(K, n))
        return PosteriorOverC(support, np.full(K, -np.log(K)), "ensemble")
    raise ValidationError(f"unknown posterior kind {kind!r}")


def from_matrices(matrices: Sequence, weights=None) -> PosteriorOverC:
    """Ensemble posterior over explicit candidate matrices."""
    S = np.stack([_entries(m) for m in matrices])
    for k in range(S.shape[0]):
        ConfusionMatrix(S[k])
    w = np.full(S.shape[0], 1.0 / S.shape[0]) if weights is None else np.asarray(weights, float)
    with np.errstate(divide="ignore"):
        return PosteriorOverC(S, np.log(w), "ensemble")


# ---------------------------------------------------------------------------
# single steps

def _run(order, post, belief, P_stack, actions, obs, snap_mask):
    kern = kernels.bayes_first_order if order == 1 else kernels.bayes_second_order
    logw, b, snap_lw, snap_b, bad = kern(
        post.support,
        np.ascontiguousarray(post.log_weights),
        np.ascontiguousarray(belief, dtype=np.float64),
        np.ascontiguousarray(P_stack, dtype=np.float64),
        np.ascontiguousarray(actions, dtype=np.int64),
        np.ascontiguousarray(obs, dtype=np.int64),
        np.ascontiguousarray(snap_mask, dtype=np.bool_),
    )
    if bad >= 0:
        raise InconsistentObservation(
            f"observation at step {bad + 1} has zero likelihood under every weighted support point; "
            "increase the support resolution"
        )
    return logw, b, snap_lw, snap_b


def _check_obs(post, *obs):
    for o in obs:
        if not 0 <= o < post.n:
            raise ValidationError(f"observation {o} out of range [0, {post.n})")


def first_order_step(post: PosteriorOverC, belief, P_a, s_tilde_next: int):
    """One first-order update: reweight by b^T P C[:, s~_{t+1}], then update b."""
    _check_obs(post, s_tilde_next)
    b = _entries(belief.probs if isinstance(belief, BeliefState) else belief)
    logw, nb, _, _ = _run(1, post, b, np.asarray(P_a, float)[None], [0], [0, s_tilde_next],
                          np.zeros(2, bool))
    return post.with_log_weights(logw), BeliefState(nb)


def second_order_step(post: PosteriorOverC, mbelief, P_a, s_tilde_t: int, s_tilde_next: int):
    """One second-order update: reweight by Q(C)[s~_t, s~_{t+1}] computed at b~_t, then update b~."""
    _check_obs(post, s_tilde_t, s_tilde_next)
    b = _entries(mbelief.probs if isinstance(mbelief, ModifiedBeliefState) else mbelief)
    logw, nb, _, _ = _run(2, post, b, np.asarray(P_a, float)[None], [0], [s_tilde_t, s_tilde_next],
                          np.zeros(2, bool))
    return post.with_log_weights(logw), ModifiedBeliefState(nb)


def observed_transition_at(C, b, P) -> np.ndarray:
    """Q(C) = diag(C^T b)^-1 C^T diag(b) P C (rows with zero mass are NaN)."""
    C, b, P = _entries(C), _entries(b), _entries(P)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (C.T @ (b[:, None] * P) @ C) / (C.T @ b)[:, None]


def initial_belief(post: PosteriorOverC, s_tilde_0: int) -> np.ndarray:
    """Uniform state prior refined by the first observation through each support point's C."""
    col = post.support[:, :, s_tilde_0]
    den = col.sum(axis=1)
    w = post.weights
    ok = (den > 0) & (w > 0)
    if not ok.any():
        raise InconsistentObservation("first observation impossible under every support point")
    b = (w[ok] / den[ok]) @ col[ok]
    return b / b.sum()


# ---------------------------------------------------------------------------
# summaries

@dataclass(frozen=True)
class PosteriorSummary:
    mode_index: int
    mode: np.ndarray
    mean: np.ndarray
    entropy: float
    local_modes: list
    posterior: PosteriorOverC

    def mass_within(self, eps: float, point) -> float:
        return self.posterior.mass_within(eps, point)


def entropy(w) -> float:
    w = np.asarray(w)
    nz = w[w > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def grid_local_modes(post: PosteriorOverC) -> list[int]:
    """Indices whose weight is >= every 8-neighbour's and > at least one, heaviest first.

    The strictness requirement keeps flat plateaus from counting as modes.
    """
    r, c = post.grid_shape
    W = post.weights.reshape(r, c)
    pad = np.pad(W, 1, constant_values=np.nan)
    ok = W > 0
    strict = np.zeros_like(ok)
    with np.errstate(invalid="ignore"):
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di or dj:
                    nb = pad[1 + di : 1 + di + r, 1 + dj : 1 + dj + c]
                    ok &= ~(W < nb)
                    strict |= W > nb
    idx = np.flatnonzero((ok & strict).ravel())
    return sorted(idx.tolist(), key=lambda k: (-post.weights[k], k))


def posterior_summary(post: PosteriorOverC, top_k: int = 2) -> PosteriorSummary:
    w = post.weights
    mode = int(np.argmax(w))  # first maximum = lowest index on ties
    mean = np.tensordot(w, post.support, axes=1)
    if post.grid_shape is not None:
        modes = grid_local_modes(post)[:top_k]
    else:
        modes = np.argsort(-w, kind="stable")[:top_k].tolist()
    return PosteriorSummary(mode, post.support[mode].copy(), mean, entropy(w), modes, post)


def snapshot(t, post: PosteriorOverC, belief) -> BayesSnapshot:
    w = post.weights
    return BayesSnapshot(int(t), w, np.asarray(belief).copy(), int(np.argmax(w)),
                         np.tensordot(w, post.support, axes=1), entropy(w))


# ---------------------------------------------------------------------------
# full runs

@dataclass
class BayesRun:
    snapshots: list
    posterior: PosteriorOverC
    belief: np.ndarray
    trajectory: object


def run_bayes(mdp: Mdp, C_true, order: int, T: int, post: PosteriorOverC | None = None,
              policy=None, snapshot_every: int | None = None, seed: int = 0,
              initial=None) -> BayesRun:
    """Simulate T steps under ``policy`` (default uniform random) and filter them.

    Snapshots are taken at t = 0, every ``snapshot_every`` steps, and at t = T.
    """
    if order not in (1, 2):
        raise ValidationError("order must be 1 or 2")
    if T < 1:
        raise ValidationError("T must be >= 1")
    if post is None:
        post = init_posterior("grid", 101)
    if post.n != mdp.n:
        raise ValidationError("posterior and MDP disagree on n")
    policy = RandomPolicy.uniform(mdp.m) if policy is None else policy
    traj = simulate(mdp, C_true, policy, T, initial=initial, seed=seed)
    return filter_trajectory(mdp, traj, order, post, snapshot_every)


def filter_trajectory(mdp: Mdp, traj, order: int, post: PosteriorOverC,
                      snapshot_every: int | None = None) -> BayesRun:
    T = traj.T
    mask = np.zeros(T + 1, bool)
    mask[0] = mask[T] = True
    if snapshot_every:
        mask[::snapshot_every] = True
    obs = traj.observations
    if order == 1:
        b0 = initial_belief(post, int(obs[0]))
    else:
        b0 = np.full(mdp.n, 1.0 / mdp.n)
    logw, b, snap_lw, snap_b = _run(order, post, b0, mdp.transitions, traj.actions, obs, mask)
    snaps = [snapshot(t, post.with_log_weights(lw), sb)
             for t, lw, sb in zip(np.flatnonzero(mask), snap_lw, snap_b)]
    return BayesRun(snaps, post.with_log_weights(logw), b, traj)
