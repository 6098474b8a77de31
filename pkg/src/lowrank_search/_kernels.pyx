# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; mirror ``_fallback`` operation for operation."""
import numpy as np

from libc.math cimport cos, fabs, M_PI
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport malloc, free

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = z + GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    return <double>(_mix(key + counter) >> 11) * INV53


cdef inline int64_t _draw(const double* cdf, int64_t size, double u) noexcept nogil:
    cdef int64_t j = 0
    cdef int64_t count = 0
    for j in range(size - 1):
        if cdf[j] <= u:
            count += 1
    return count


def mix64(z):
    return int(_mix(<uint64_t>(int(z) & 0xFFFFFFFFFFFFFFFF)))


def sample_episodes(const double[::1] mu0_cdf, const double[:, :, ::1] trans_cdf,
                    const double[:, ::1] reward_mean, bint bernoulli,
                    const double[:, ::1] policy_cdf, seed, int64_t first_episode,
                    int64_t n, int64_t horizon):
    cdef int64_t nx = mu0_cdf.shape[0]
    cdef int64_t nk = policy_cdf.shape[1]
    obs_arr = np.empty((n, horizon), dtype=np.int64)
    act_arr = np.empty((n, horizon), dtype=np.int64)
    rew_arr = np.empty((n, horizon), dtype=np.float64)
    cdef int64_t[:, ::1] obs = obs_arr
    cdef int64_t[:, ::1] act = act_arr
    cdef double[:, ::1] rew = rew_arr
    cdef uint64_t base = _mix(<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF))
    cdef uint64_t key
    cdef int64_t t, h, x, a
    cdef double mean
    with nogil:
        for t in range(n):
            key = _mix(base ^ <uint64_t>(first_episode + t))
            x = _draw(&mu0_cdf[0], nx, _uniform(key, 0))
            for h in range(horizon):
                a = _draw(&policy_cdf[x, 0], nk, _uniform(key, 4 * h + 1))
                mean = reward_mean[x, a]
                obs[t, h] = x
                act[t, h] = a
                if bernoulli:
                    rew[t, h] = 1.0 if _uniform(key, 4 * h + 2) < mean else 0.0
                else:
                    rew[t, h] = mean
                if h + 1 < horizon:
                    x = _draw(&trans_cdf[x, a, 0], nx, _uniform(key, 4 * h + 4))
    return obs_arr, act_arr, rew_arr


def is_estimates(const int64_t[:, ::1] obs, const int64_t[:, ::1] act,
                 const double[:, ::1] rew, const int64_t[::1] policy,
                 int64_t num_actions, int64_t steps):
    cdef int64_t n = obs.shape[0]
    out = np.zeros(steps, dtype=np.float64)
    cdef double[::1] acc = out
    cdef int64_t t, h
    cdef double scale = 1.0
    with nogil:
        for t in range(n):
            for h in range(steps):
                if policy[obs[t, h]] != act[t, h]:
                    break
                acc[h] += rew[t, h]
        for h in range(steps):
            scale = scale * num_actions
            acc[h] = acc[h] * scale / n
    return out


cdef double _geo(double rho, int64_t horizon) noexcept nogil:
    cdef double s = 0.0
    cdef double t = 1.0
    cdef int64_t h
    for h in range(horizon):
        s = s + t
        t = t * rho
    return s


cdef void _evaluate(const double* u, const double* values, int64_t nv, int64_t d,
                    int64_t n_real, int64_t n_pair, bint fix_unit_root, int objective,
                    int64_t horizon, double* coef, double* out_r, double* out_o) noexcept nogil:
    cdef int64_t i, j, k, h, deg = 0
    cdef double x, rho, phi, b, c, g, pred, r, resid = 0.0, prod = 1.0
    for k in range(d + 1):
        coef[k] = 0.0
    coef[0] = 1.0
    if fix_unit_root:
        coef[1] = -1.0
        deg = 1
    for i in range(n_real):
        x = 2.0 * u[i] - 1.0
        k = deg + 1
        while k > 0:
            coef[k] = coef[k] - x * coef[k - 1]
            k -= 1
        deg += 1
        if objective == 1:
            prod = prod * _geo(fabs(x), horizon)
    for j in range(n_pair):
        rho = u[n_real + 2 * j]
        phi = M_PI * u[n_real + 2 * j + 1]
        b = -2.0 * rho * cos(phi)
        c = rho * rho
        k = deg + 2
        while k > 1:
            coef[k] = coef[k] + b * coef[k - 1] + c * coef[k - 2]
            k -= 1
        coef[1] = coef[1] + b * coef[0]
        deg += 2
        if objective == 1:
            g = _geo(rho, horizon)
            prod = prod * g * g
    for h in range(d, nv):
        pred = 0.0
        for k in range(1, d + 1):
            pred = pred - coef[k] * values[h - k]
        r = fabs(pred - values[h])
        if r > resid:
            resid = r
    out_r[0] = resid
    out_o[0] = prod


cdef inline bint _better(double r_new, double o_new, double r_cur, double o_cur,
                         int objective, double cap) noexcept nogil:
    cdef double e_new, e_cur
    if objective == 0:
        return r_new < r_cur
    e_new = r_new - cap if r_new > cap else 0.0
    e_cur = r_cur - cap if r_cur > cap else 0.0
    if e_new < e_cur:
        return True
    return e_new == e_cur and o_new < o_cur


def pattern_search(const double[::1] values, int64_t d, int64_t n_real, int64_t n_pair,
                   bint fix_unit_root, const double[:, ::1] starts, int64_t iterations,
                   double step_tol, int objective, double cap, int64_t horizon):
    cdef int64_t p = n_real + 2 * n_pair
    cdef int64_t nv = values.shape[0]
    cdef int64_t ns = starts.shape[0]
    cdef int64_t s_idx, it, i, best_s = -1
    cdef double r = 0.0, o = 0.0, r2 = 0.0, o2 = 0.0, step, old, trial, sign
    cdef double best_r = 0.0, best_o = 0.0
    cdef bint improved
    cdef int si
    best_arr = np.zeros(p, dtype=np.float64)
    cdef double[::1] best_u = best_arr
    cdef double* u = <double*> malloc((p + 1) * sizeof(double))
    cdef double* coef = <double*> malloc((d + 2) * sizeof(double))
    if u == NULL or coef == NULL:
        free(u)
        free(coef)
        raise MemoryError()
    try:
        with nogil:
            for s_idx in range(ns):
                for i in range(p):
                    u[i] = starts[s_idx, i]
                _evaluate(u, &values[0], nv, d, n_real, n_pair, fix_unit_root,
                          objective, horizon, coef, &r, &o)
                step = 0.25
                for it in range(iterations):
                    improved = False
                    for i in range(p):
                        old = u[i]
                        for si in range(2):
                            sign = 1.0 if si == 0 else -1.0
                            trial = old + sign * step
                            if trial > 1.0:
                                trial = 1.0
                            elif trial < 0.0:
                                trial = 0.0
                            if trial == old:
                                continue
                            u[i] = trial
                            _evaluate(u, &values[0], nv, d, n_real, n_pair, fix_unit_root,
                                      objective, horizon, coef, &r2, &o2)
                            if _better(r2, o2, r, o, objective, cap):
                                r = r2
                                o = o2
                                improved = True
                                break
                            u[i] = old
                    if not improved:
                        step = step * 0.5
                        if step < step_tol:
                            break
                if best_s < 0 or _better(r, o, best_r, best_o, objective, cap):
                    for i in range(p):
                        best_u[i] = u[i]
                    best_r = r
                    best_o = o
                    best_s = s_idx
    finally:
        free(u)
        free(coef)
    return best_arr, best_r, best_o, best_s
