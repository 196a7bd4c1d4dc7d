"""Hot inner loops: trajectory sampling and the Bayesian weight recursions.

Every kernel exists twice: a numba-compiled loop (``*_nb``) and a numpy
implementation (``*_np``). The public names (``sample_chain``,
``bayes_first_order``, ``bayes_second_order``) point at one of them depending
on :data:`mdpconf._accel.USE_NUMBA`.

Sampling is inverse-CDF against pre-drawn uniforms, so both backends consume
the same random numbers in the same order and return identical integers.
"""
from bisect import bisect_right

import numpy as np

from ._accel import USE_NUMBA, njit

# Normalizing constants at or below this are treated as "impossible observation".
LIKELIHOOD_FLOOR = 1e-300


def sampling_cdf(probs):
    """Cumulative sums along the last axis, made safe for inverse-CDF lookup.

    The entry at the last positive probability is set to +inf so that a
    uniform draw that lands above a rounded-down total still maps to a state
    with non-zero probability.
    """
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    flat_p = probs.reshape(-1, probs.shape[-1])
    flat_c = cdf.reshape(-1, probs.shape[-1])
    for row in range(flat_p.shape[0]):
        pos = np.flatnonzero(flat_p[row] > 0)
        if pos.size:
            flat_c[row, pos[-1]:] = np.inf
    return flat_c.reshape(probs.shape)


# ---------------------------------------------------------------------------
# trajectory sampling

@njit(cache=True)
def _draw(cdf_row, u):
    k = 0
    while u >= cdf_row[k]:
        k += 1
    return k


@njit(cache=True)
def sample_chain_nb(cdf_init, cdf_P, cdf_C, schedule, cdf_policy, u):
    T = schedule.shape[0]
    states = np.empty(T + 1, dtype=np.int64)
    obs = np.empty(T + 1, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    s = _draw(cdf_init, u[0, 0])
    for t in range(T + 1):
        states[t] = s
        obs[t] = _draw(cdf_C[s], u[t, 1])
        if t == T:
            break
        a = schedule[t]
        if a < 0:
            a = _draw(cdf_policy, u[t, 2])
        actions[t] = a
        s = _draw(cdf_P[a, s], u[t + 1, 0])
    return states, obs, actions


def sample_chain_np(cdf_init, cdf_P, cdf_C, schedule, cdf_policy, u):
    T = schedule.shape[0]
    # first index with u < cdf  ==  number of cdf entries <= u
    actions = schedule.astype(np.int64)
    drawn = actions < 0
    if drawn.any():
        actions[drawn] = np.searchsorted(cdf_policy, u[:T, 2][drawn], side="right")
    states = np.empty(T + 1, dtype=np.int64)
    s = int(np.searchsorted(cdf_init, u[0, 0], side="right"))
    states[0] = s
    # the state recursion is inherently sequential; bisect on python lists is
    # several times faster than per-step np.searchsorted
    rows = cdf_P.tolist()
    u_state = u[1:, 0].tolist()
    act = actions.tolist()
    out = [s] * (T + 1)
    for t in range(T):
        s = bisect_right(rows[act[t]][s], u_state[t])
        out[t + 1] = s
    states[:] = out
    obs = (cdf_C[states] <= u[:, 1, None]).sum(axis=1).astype(np.int64)
    return states, obs, actions


# ---------------------------------------------------------------------------
# Bayesian recursions over a fixed support
#
# All kernels take normalized log-weights and return
# (final_logw, final_belief, snap_logw, snap_belief, bad_step); bad_step is the
# index of the first step whose observation was impossible, or -1.

@njit(cache=True)
def _reweight_nb(logw, lik, w):
    """logw += log(lik), renormalized; ``w`` receives the normalized weights.

    Returns False when the normalizing constant is at or below the floor.
    """
    K = logw.shape[0]
    m = -np.inf
    for k in range(K):
        if lik[k] > 0.0 and logw[k] > -np.inf:
            logw[k] = logw[k] + np.log(lik[k])
            if logw[k] > m:
                m = logw[k]
        else:
            logw[k] = -np.inf
    if m == -np.inf:
        return False
    s = 0.0
    for k in range(K):
        e = np.exp(logw[k] - m)
        w[k] = e
        s += e
    logz = m + np.log(s)
    if logz <= np.log(1e-300):
        return False
    for k in range(K):
        logw[k] -= logz
        w[k] /= s
    return True


@njit(cache=True)
def _count_snaps(snap_mask):
    c = 0
    for t in range(snap_mask.shape[0]):
        if snap_mask[t]:
            c += 1
    return c


@njit(cache=True)
def bayes_first_order_nb(support, logw0, belief0, P_stack, actions, obs, snap_mask):
    K, n = support.shape[0], support.shape[1]
    T = actions.shape[0]
    logw = logw0.copy()
    b = belief0.copy()
    n_snap = _count_snaps(snap_mask)
    snap_logw = np.empty((n_snap, K))
    snap_b = np.empty((n_snap, n))
    lik = np.empty(K)
    w = np.empty(K)
    pred = np.empty(n)
    nb_new = np.empty(n)
    j_snap = 0
    if snap_mask[0]:
        snap_logw[0] = logw
        snap_b[0] = b
        j_snap = 1
    for t in range(T):
        P = P_stack[actions[t]]
        o = obs[t + 1]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += P[j, i] * b[j]
            pred[i] = acc
        for k in range(K):
            acc = 0.0
            for i in range(n):
                acc += pred[i] * support[k, i, o]
            lik[k] = acc
        if not _reweight_nb(logw, lik, w):
            return logw0, belief0, snap_logw[:j_snap], snap_b[:j_snap], t
        for i in range(n):
            nb_new[i] = 0.0
        for k in range(K):
            if w[k] == 0.0:
                continue
            r = w[k] / lik[k]
            for i in range(n):
                nb_new[i] += r * support[k, i, o] * pred[i]
        s = 0.0
        for i in range(n):
            s += nb_new[i]
        for i in range(n):
            b[i] = nb_new[i] / s
        if snap_mask[t + 1]:
            snap_logw[j_snap] = logw
            snap_b[j_snap] = b
            j_snap += 1
    return logw, b, snap_logw, snap_b, -1


@njit(cache=True)
def bayes_second_order_nb(support, logw0, belief0, P_stack, actions, obs, snap_mask):
    K, n = support.shape[0], support.shape[1]
    T = actions.shape[0]
    logw = logw0.copy()
    b = belief0.copy()
    n_snap = _count_snaps(snap_mask)
    snap_logw = np.empty((n_snap, K))
    snap_b = np.empty((n_snap, n))
    lik = np.empty(K)
    den = np.empty(K)
    w = np.empty(K)
    pc = np.empty(n)
    nb_new = np.empty(n)
    j_snap = 0
    if snap_mask[0]:
        snap_logw[0] = logw
        snap_b[0] = b
        j_snap = 1
    for t in range(T):
        P = P_stack[actions[t]]
        o0 = obs[t]
        o1 = obs[t + 1]
        for k in range(K):
            d = 0.0
            for j in range(n):
                d += support[k, j, o0] * b[j]
            den[k] = d
            if d <= 0.0:
                lik[k] = 0.0
                continue
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += P[j, l] * support[k, l, o1]
                pc[j] = acc
            acc = 0.0
            for j in range(n):
                acc += support[k, j, o0] * b[j] * pc[j]
            lik[k] = acc / d
        if not _reweight_nb(logw, lik, w):
            return logw0, belief0, snap_logw[:j_snap], snap_b[:j_snap], t
        for i in range(n):
            nb_new[i] = 0.0
        for k in range(K):
            if w[k] == 0.0:
                continue
            r0 = w[k] / den[k]
            for j in range(n):
                r = r0 * support[k, j, o0] * b[j]
                for i in range(n):
                    nb_new[i] += r * P[j, i]
        s = 0.0
        for i in range(n):
            s += nb_new[i]
        for i in range(n):
            b[i] = nb_new[i] / s
        if snap_mask[t + 1]:
            snap_logw[j_snap] = logw
            snap_b[j_snap] = b
            j_snap += 1
    return logw, b, snap_logw, snap_b, -1


def _np_reweight(logw, lik):
    ok = np.isfinite(logw) & (lik > 0)
    if not ok.any():
        return None
    new = np.full_like(logw, -np.inf)
    new[ok] = logw[ok] + np.log(lik[ok])
    m = new[ok].max()
    e = np.exp(new - m)
    s = e.sum()
    logz = m + np.log(s)
    if logz <= np.log(LIKELIHOOD_FLOOR):
        return None
    return new - logz, e / s


def _np_driver(step, support, logw0, belief0, P_stack, actions, obs, snap_mask):
    logw = np.array(logw0, dtype=np.float64)
    b = np.array(belief0, dtype=np.float64)
    snap_logw, snap_b = [], []
    if snap_mask[0]:
        snap_logw.append(logw.copy())
        snap_b.append(b.copy())
    for t in range(actions.shape[0]):
        out = step(support, logw, b, P_stack[actions[t]], obs[t], obs[t + 1])
        if out is None:
            return logw0, belief0, _stack(snap_logw, logw.size), _stack(snap_b, b.size), t
        logw, b = out
        if snap_mask[t + 1]:
            snap_logw.append(logw.copy())
            snap_b.append(b.copy())
    return logw, b, _stack(snap_logw, logw.size), _stack(snap_b, b.size), -1


def _stack(rows, width):
    return np.array(rows).reshape(len(rows), width)


def _first_order_np_step(support, logw, b, P, o_prev, o):
    pred = b @ P
    col = support[:, :, o]
    lik = col @ pred
    out = _np_reweight(logw, lik)
    if out is None:
        return None
    new, w = out
    live = w > 0
    nb = ((w[live] / lik[live]) @ col[live]) * pred
    return new, nb / nb.sum()


def _second_order_np_step(support, logw, b, P, o_prev, o):
    col0 = support[:, :, o_prev]
    joint = col0 * b
    den = joint.sum(axis=1)
    lik = np.zeros_like(den)
    pos = den > 0
    lik[pos] = np.einsum("kj,kj->k", joint[pos], support[pos][:, :, o] @ P.T) / den[pos]
    out = _np_reweight(logw, lik)
    if out is None:
        return None
    new, w = out
    live = w > 0
    r = joint[live] * (w[live] / den[live])[:, None]
    nb = r.sum(axis=0) @ P
    return new, nb / nb.sum()


def bayes_first_order_np(support, logw0, belief0, P_stack, actions, obs, snap_mask):
    return _np_driver(_first_order_np_step, support, logw0, belief0, P_stack, actions, obs, snap_mask)


def bayes_second_order_np(support, logw0, belief0, P_stack, actions, obs, snap_mask):
    return _np_driver(_second_order_np_step, support, logw0, belief0, P_stack, actions, obs, snap_mask)


if USE_NUMBA:
    sample_chain = sample_chain_nb
    bayes_first_order = bayes_first_order_nb
    bayes_second_order = bayes_second_order_nb
else:
    sample_chain = sample_chain_np
    bayes_first_order = bayes_first_order_np
    bayes_second_order = bayes_second_order_np
