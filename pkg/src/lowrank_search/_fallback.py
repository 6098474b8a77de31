"""Pure-Python implementations of the numerical kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
the same floating-point operation order, so both backends agree bit for bit on
sampling and fitting (importance-sampling sums may differ in the last ulp
because numpy uses pairwise summation).
"""
import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0

BACKEND = "python"


def mix64(z):
    """splitmix64 finalizer on a Python int."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = z + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _uniform(keys, counter):
    bits = _mix64_array(keys + np.uint64(counter))
    return (bits >> np.uint64(11)).astype(np.float64) * _INV53


def _draw(cdf_rows, u):
    # index of the first cdf entry strictly above u; the last column is never compared
    return (cdf_rows[:, :-1] <= u[:, None]).sum(axis=1)


def sample_episodes(mu0_cdf, trans_cdf, reward_mean, bernoulli, policy_cdf,
                    seed, first_episode, n, horizon):
    """Roll out ``n`` episodes with indices ``first_episode .. first_episode+n-1``.

    ``trans_cdf`` has shape (obs, action, next_obs); ``policy_cdf`` (obs, action).
    Episode ``t`` draws all randomness from the counter stream keyed by
    ``mix64(mix64(seed) ^ t)``, so any split of the index range gives the same data.
    """
    base = np.uint64(mix64(int(seed) & MASK64))
    idx = np.arange(first_episode, first_episode + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        keys = _mix64_array(base ^ idx)
        obs = np.empty((n, horizon), dtype=np.int64)
        act = np.empty((n, horizon), dtype=np.int64)
        rew = np.empty((n, horizon), dtype=np.float64)
        if n == 0:
            return obs, act, rew
        x = _draw(np.broadcast_to(mu0_cdf, (n, mu0_cdf.shape[0])), _uniform(keys, 0))
        for h in range(horizon):
            a = _draw(policy_cdf[x], _uniform(keys, 4 * h + 1))
            mean = reward_mean[x, a]
            if bernoulli:
                r = (_uniform(keys, 4 * h + 2) < mean).astype(np.float64)
            else:
                r = mean
            obs[:, h] = x
            act[:, h] = a
            rew[:, h] = r
            if h + 1 < horizon:
                x = _draw(trans_cdf[x, a], _uniform(keys, 4 * h + 4))
    return obs, act, rew


def is_estimates(obs, act, rew, policy, num_actions, steps):
    n = obs.shape[0]
    match = np.cumprod(policy[obs[:, :steps]] == act[:, :steps], axis=1)
    acc = (rew[:, :steps] * match).sum(axis=0)
    scale = float(num_actions) ** np.arange(1, steps + 1)
    return acc * scale / n


# ---------------------------------------------------------------------------
# pattern search over unit-disk root parameterizations

def _evaluate(u, values, d, n_real, n_pair, fix_unit_root, objective, horizon):
    coef = [0.0] * (d + 1)
    coef[0] = 1.0
    deg = 0
    prod = 1.0
    if fix_unit_root:
        coef[1] = -1.0
        deg = 1
    for i in range(n_real):
        x = 2.0 * u[i] - 1.0
        for k in range(deg + 1, 0, -1):
            coef[k] = coef[k] - x * coef[k - 1]
        deg += 1
        if objective == 1:
            prod = prod * _geo(abs(x), horizon)
    for j in range(n_pair):
        rho = u[n_real + 2 * j]
        phi = math.pi * u[n_real + 2 * j + 1]
        b = -2.0 * rho * math.cos(phi)
        c = rho * rho
        for k in range(deg + 2, 1, -1):
            coef[k] = coef[k] + b * coef[k - 1] + c * coef[k - 2]
        coef[1] = coef[1] + b * coef[0]
        deg += 2
        if objective == 1:
            g = _geo(rho, horizon)
            prod = prod * g * g
    resid = 0.0
    for h in range(d, len(values)):
        pred = 0.0
        for k in range(1, d + 1):
            pred = pred - coef[k] * values[h - k]
        r = abs(pred - values[h])
        if r > resid:
            resid = r
    return resid, prod


def _geo(rho, horizon):
    s = 0.0
    t = 1.0
    for _ in range(horizon):
        s = s + t
        t = t * rho
    return s


def _better(r_new, o_new, r_cur, o_cur, objective, cap):
    if objective == 0:
        return r_new < r_cur
    e_new = r_new - cap if r_new > cap else 0.0
    e_cur = r_cur - cap if r_cur > cap else 0.0
    if e_new < e_cur:
        return True
    return e_new == e_cur and o_new < o_cur


def pattern_search(values, d, n_real, n_pair, fix_unit_root, starts, iterations,
                   step_tol, objective, cap, horizon):
    """Compass search from each row of ``starts`` (coordinates in [0, 1]).

    Returns ``(best_u, best_residual, best_objective, best_start)``; ties keep
    the earliest start.
    """
    values = [float(v) for v in values]
    p = n_real + 2 * n_pair
    best_u = None
    best_r = math.inf
    best_o = math.inf
    best_s = -1
    for s_idx in range(starts.shape[0]):
        u = [float(v) for v in starts[s_idx]]
        r, o = _evaluate(u, values, d, n_real, n_pair, fix_unit_root, objective, horizon)
        step = 0.25
        for _ in range(iterations):
            improved = False
            for i in range(p):
                old = u[i]
                for sign in (1.0, -1.0):
                    trial = old + sign * step
                    if trial > 1.0:
                        trial = 1.0
                    elif trial < 0.0:
                        trial = 0.0
                    if trial == old:
                        continue
                    u[i] = trial
                    r2, o2 = _evaluate(u, values, d, n_real, n_pair, fix_unit_root,
                                       objective, horizon)
                    if _better(r2, o2, r, o, objective, cap):
                        r, o = r2, o2
                        improved = True
                        break
                    u[i] = old
            if not improved:
                step = step * 0.5
                if step < step_tol:
                    break
        if best_s < 0 or _better(r, o, best_r, best_o, objective, cap):
            best_u, best_r, best_o, best_s = list(u), r, o, s_idx
    return np.array(best_u, dtype=np.float64), best_r, best_o, best_s
