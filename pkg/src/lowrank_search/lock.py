"""Contextual combination-lock MDPs and distinct binary policy classes.

Latent states are indexed in the order ``(1,g)..(d,g), (1,b)..(d,b), +, -``;
each owns ``cells_per_state`` observations. Actions are binary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import nbinom

from .mdp import (DEFAULT_RANK_TOL, Policy, PolicyClass, TabularMdp, exact_value,
                  induced_transition, spectrum_of)

NUM_ACTIONS = 2


class GVConstructionError(RuntimeError):
    """Rejection sampling ran out of draws before filling the class."""


@dataclass(frozen=True)
class LockParams:
    d: int
    H: int
    epsilon: float = 0.1
    progress_probs: Optional[tuple] = None
    cells_per_state: int = 8

    def __post_init__(self):
        if self.d < 1 or self.H < self.d:
            raise ValueError("need 1 <= d <= H")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 1/2)")
        if self.cells_per_state < 1:
            raise ValueError("cells_per_state must be positive")
        probs = self.progress_probs
        if probs is None:
            probs = (self.d / self.H,) * (self.d - 1)
        probs = tuple(float(p) for p in probs)
        if len(probs) != self.d - 1:
            raise ValueError(f"need {self.d - 1} progress probabilities")
        if any(not 0.0 < p <= 1.0 for p in probs):
            raise ValueError("progress probabilities must lie in (0, 1]")
        object.__setattr__(self, "progress_probs", probs)
        if 8 * self.d * math.log(self.H / self.d) > self.N:
            raise ValueError(f"N = {self.N} too small for a distinct policy class "
                             f"(need >= {8 * self.d * math.log(self.H / self.d):.1f})")

    @property
    def num_latent(self) -> int:
        return 2 * self.d + 2

    @property
    def N(self) -> int:
        return self.num_latent * self.cells_per_state

    def good(self, i: int) -> int:
        return i - 1

    def bad(self, i: int) -> int:
        return self.d + i - 1

    @property
    def plus(self) -> int:
        return 2 * self.d

    @property
    def minus(self) -> int:
        return 2 * self.d + 1

    def latent_labels(self) -> list:
        d = self.d
        return ([f"({i},g)" for i in range(1, d + 1)] + [f"({i},b)" for i in range(1, d + 1)]
                + ["+", "-"])


@dataclass(frozen=True)
class LatentMap:
    phi: np.ndarray
    num_latent: int
    cells: tuple = field(init=False, repr=False)

    def __post_init__(self):
        phi = np.ascontiguousarray(self.phi, dtype=np.int64)
        if phi.ndim != 1 or phi.min() < 0 or phi.max() >= self.num_latent:
            raise ValueError("phi must map observations into range(num_latent)")
        sizes = np.bincount(phi, minlength=self.num_latent)
        if np.any(sizes != sizes[0]) or sizes[0] == 0:
            raise ValueError("every latent state needs the same positive number of cells")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "cells", tuple(np.flatnonzero(phi == s)
                                                for s in range(self.num_latent)))

    @property
    def cells_per_state(self) -> int:
        return len(self.cells[0])


def random_latent_map(params: LockParams, seed: int) -> LatentMap:
    rng = np.random.default_rng(seed)
    phi = np.repeat(np.arange(params.num_latent), params.cells_per_state)
    return LatentMap(rng.permutation(phi), params.num_latent)


def _check_map(phi: LatentMap, params: LockParams):
    if phi.num_latent != params.num_latent or len(phi.phi) != params.N:
        raise ValueError("latent map does not fit the lock parameters")


# ---------------------------------------------------------------------------
# policy classes

def min_pairwise_disagreement(tables: np.ndarray) -> int:
    tables = np.asarray(tables)
    if len(tables) < 2:
        return tables.shape[1] if tables.ndim == 2 else 0
    x = tables.astype(np.int64)
    dist = (x[:, None, :] != x[None, :, :]).sum(axis=2)
    dist[np.diag_indices(len(x))] = x.shape[1]
    return int(dist.min())


def gv_policy_class(N: int, class_size: int, seed: int, max_draws: Optional[int] = None
                    ) -> PolicyClass:
    """Binary policies on ``N`` observations, pairwise disagreeing on ``>= N/4`` of them."""
    if class_size < 1:
        raise ValueError("class_size must be at least 1")
    if class_size > math.exp(N / 8):
        raise ValueError(f"class_size {class_size} exceeds exp(N/8)")
    rng = np.random.default_rng(seed)
    budget = max_draws if max_draws is not None else 100 * class_size
    need = N / 4
    accepted = []
    for _ in range(budget):
        cand = rng.integers(0, 2, size=N)
        if all(np.count_nonzero(cand != t) >= need for t in accepted):
            accepted.append(cand)
            if len(accepted) == class_size:
                break
    if len(accepted) < class_size:
        raise GVConstructionError(f"found {len(accepted)} of {class_size} policies "
                                  f"in {budget} draws")
    tables = np.array(accepted)
    if class_size > 1 and min_pairwise_disagreement(tables) < need:
        raise GVConstructionError("pairwise verification failed")
    return PolicyClass.from_tables(tables)


# ---------------------------------------------------------------------------
# latent kernels, stored as [next, current]

def _latent_kernels(params: LockParams):
    d, S = params.d, params.num_latent
    good = np.zeros((S, S))
    bad = np.zeros((S, S))
    for i in range(1, d):
        p = params.progress_probs[i - 1]
        g, b = params.good(i), params.bad(i)
        good[params.good(i + 1), g] = p
        good[g, g] = 1 - p
        bad[params.bad(i + 1), g] = p
        bad[b, g] = 1 - p
        for k in (good, bad):
            k[params.bad(i + 1), b] = p
            k[b, b] = 1 - p
    for k in (good, bad):
        k[params.plus, params.good(d)] = 0.5 + params.epsilon
        k[params.minus, params.good(d)] = 0.5 - params.epsilon
        k[params.plus, params.bad(d)] = 0.5
        k[params.minus, params.bad(d)] = 0.5
        k[params.minus, params.plus] = 1.0
        k[params.minus, params.minus] = 1.0
    return good, bad


def _null_kernel(params: LockParams):
    d, S = params.d, params.num_latent
    k = np.zeros((S, S))
    for i in range(1, d):
        p = params.progress_probs[i - 1]
        for src in (params.good(i), params.bad(i)):
            k[params.good(i + 1), src] = p / 2
            k[params.bad(i + 1), src] = p / 2
            k[params.good(i), src] = (1 - p) / 2
            k[params.bad(i), src] = (1 - p) / 2
    for src in (params.good(d), params.bad(d)):
        k[params.plus, src] = 0.5
        k[params.minus, src] = 0.5
    k[params.minus, params.plus] = 1.0
    k[params.minus, params.minus] = 1.0
    return k


def _lift(latent_cols: np.ndarray, phi: LatentMap) -> np.ndarray:
    """Observation kernel from per-observation latent next-state laws (S x N)."""
    return latent_cols[phi.phi] / phi.cells_per_state


def _finish(transition, phi: LatentMap, params: LockParams) -> TabularMdp:
    reward = np.zeros((params.N, NUM_ACTIONS))
    reward[phi.cells[params.plus]] = 1.0
    mu0 = np.zeros(params.N)
    mu0[phi.cells[params.good(1)]] = 1.0 / phi.cells_per_state
    return TabularMdp(transition, reward, mu0, params.H)


def build_lock_mdp(pi_star: Policy, phi: LatentMap, params: LockParams) -> TabularMdp:
    _check_map(phi, params)
    if not pi_star.is_deterministic or len(pi_star.table) != params.N:
        raise ValueError("pi_star must be a deterministic policy on N observations")
    good, bad = _latent_kernels(params)
    transition = np.empty((params.N, params.N, NUM_ACTIONS))
    for a in range(NUM_ACTIONS):
        match = pi_star.table == a
        cols = np.where(match[None, :], good[:, phi.phi], bad[:, phi.phi])
        transition[:, :, a] = _lift(cols, phi)
    return _finish(transition, phi, params)


def build_null_lock(phi: LatentMap, params: LockParams) -> TabularMdp:
    _check_map(phi, params)
    cols = _lift(_null_kernel(params)[:, phi.phi], phi)
    transition = np.repeat(cols[:, :, None], NUM_ACTIONS, axis=2)
    return _finish(transition, phi, params)


# ---------------------------------------------------------------------------
# spectrum

def match_fractions(policy: Policy, pi_star: Policy, phi: LatentMap, params: LockParams):
    """``Pr_{x ~ Unif(X_(i,g))}(pi(x) = pi_star(x))`` for ``i = 1..d``."""
    return np.array([np.mean(policy.table[phi.cells[params.good(i)]]
                             == pi_star.table[phi.cells[params.good(i)]])
                     for i in range(1, params.d + 1)])


def lock_eigenvalues(policy: Policy, pi_star: Optional[Policy], phi: LatentMap,
                     params: LockParams) -> np.ndarray:
    """Closed-form latent eigenvalues of ``T^pi`` (one per latent state, in latent order).

    With ``pi_star=None`` the values for the action-independent lock are returned:
    each level's good/bad pair contributes ``1 - p_i`` and ``0``.
    """
    d = params.d
    vals = np.zeros(params.num_latent)
    vals[params.minus] = 1.0
    m = None if pi_star is None else match_fractions(policy, pi_star, phi, params)
    for i in range(1, d):
        p = params.progress_probs[i - 1]
        vals[params.bad(i)] = 1 - p
        vals[params.good(i)] = 0.0 if m is None else (1 - p) * m[i - 1]
    return vals


@dataclass(frozen=True)
class LockSpectrumReport:
    expected: np.ndarray  # nonzero closed-form eigenvalues
    observed: np.ndarray  # numerical eigenvalues matched to ``expected``
    max_error: float
    residual_modulus: float  # largest unmatched numerical eigenvalue
    rank: int
    rank_bound: int
    nonzero_count: int
    tol: float

    @property
    def spectrum_ok(self) -> bool:
        return self.max_error <= self.tol and self.residual_modulus <= math.sqrt(self.tol)

    @property
    def rank_ok(self) -> bool:
        return self.rank <= self.rank_bound

    @property
    def ok(self) -> bool:
        return self.spectrum_ok and self.rank_ok

    def diff(self) -> str:
        lines = [f"rank {self.rank} (bound {self.rank_bound}); nonzero eigenvalues "
                 f"{self.nonzero_count}; unmatched modulus {self.residual_modulus:.3g}"]
        for e, o in zip(self.expected, self.observed):
            flag = "" if abs(e - o) <= self.tol else "  <-- mismatch"
            lines.append(f"  expected {e:.12f}  observed {o:.12f}{flag}")
        return "\n".join(lines)


def verify_lock_spectrum(mdp: TabularMdp, policy: Policy, pi_star: Optional[Policy],
                         phi: LatentMap, params: LockParams, tol: float = 1e-8,
                         rank_tol: float = DEFAULT_RANK_TOL) -> LockSpectrumReport:
    """Compare the numerical spectrum of ``T^pi`` with the closed-form list.

    Nonzero closed-form values are matched one-to-one (minimum total distance);
    the remaining numerical eigenvalues should vanish. Zero eigenvalues sit in
    nilpotent blocks, so they are only resolved to about ``sqrt(machine eps)``.
    """
    spec, rank = spectrum_of(induced_transition(mdp, policy), rank_tol)
    closed = lock_eigenvalues(policy, pi_star, phi, params)
    expected = np.sort(closed[closed > 0])[::-1]
    obs = spec.values
    cost = np.abs(expected[:, None] - obs[None, :])
    rows, cols = linear_sum_assignment(cost)
    matched = obs[cols[np.argsort(rows)]]
    rest = np.delete(obs, cols)
    err = float(np.max(np.abs(matched - expected))) if expected.size else 0.0
    resid = float(np.max(np.abs(rest))) if rest.size else 0.0
    return LockSpectrumReport(expected, matched, err, resid, rank, 2 * params.d - 1,
                              int(expected.size), tol)


# ---------------------------------------------------------------------------
# goal time

@dataclass(frozen=True)
class GoalTimeStats:
    samples: np.ndarray
    params: LockParams

    def cdf(self, h) -> float:
        return float(np.mean(self.samples <= h))

    def stderr(self, prob: float) -> float:
        return math.sqrt(max(prob * (1 - prob), 0.0) / len(self.samples))

    def upper_bound_check(self, delta: float, slack: float = 3.0):
        """``Pr(G <= (2d/p) ln(1/delta)) >= 1 - delta``: returns (empirical, target, ok)."""
        p = _equal_p(self.params)
        t = 2 * self.params.d / p * math.log(1 / delta)
        emp = self.cdf(t)
        return emp, 1 - delta, emp >= 1 - delta - slack * self.stderr(1 - delta)

    def lower_bound_check(self, h: int, slack: float = 3.0):
        """``Pr(G <= h) <= (h-d+1)(2peh/d)^(d-1)``: returns (empirical, bound, ok)."""
        p = _equal_p(self.params)
        d = self.params.d
        bound = (h - d + 1) * (2 * p * math.e * h / d) ** (d - 1)
        emp = self.cdf(h)
        return emp, bound, emp <= bound + slack * self.stderr(emp)


def _equal_p(params: LockParams) -> float:
    probs = set(params.progress_probs)
    if len(probs) > 1:
        raise ValueError("closed-form goal-time bounds need equal progress probabilities")
    return probs.pop() if probs else 1.0


def goal_time_stats(params: LockParams, num_samples: int, seed: int) -> GoalTimeStats:
    """Samples of the first step ``G`` spent in ``(d,g)`` or ``(d,b)``.

    ``G = 1 + sum_{i<d} Geometric(p_i)``; the episode horizon does not truncate it.
    """
    rng = np.random.default_rng(seed)
    g = np.ones(num_samples, dtype=np.int64)
    for p in params.progress_probs:
        g += rng.geometric(p, size=num_samples)
    return GoalTimeStats(g, params)


def goal_time_cdf(params: LockParams, h) -> float:
    """Exact ``Pr(G <= h)``: ``G - 1`` counts trials up to the ``(d-1)``-th progression."""
    d = params.d
    if d == 1:
        return float(h >= 1)
    p = _equal_p(params)
    if p == 1.0:
        return float(h >= d)
    # failures before the (d-1)-th success is G - d
    return float(nbinom.cdf(math.floor(h) - d, d - 1, p)) if h >= d else 0.0


# ---------------------------------------------------------------------------
# suboptimality gap

def _reach_probs(params: LockParams, match):
    """``Pr(G <= H-1)`` and ``Pr(G <= H-1, pi agrees with pi_star before G)``."""
    d = params.d
    if d == 1:
        return (1.0, 1.0) if params.H >= 2 else (0.0, 0.0)
    reach = np.zeros(d + 1)
    agree = np.zeros(d + 1)
    reach[1] = agree[1] = 1.0
    total_reach = total_agree = 0.0
    for _ in range(params.H - 2):  # arrivals at steps 2..H-1
        nr = np.zeros(d + 1)
        na = np.zeros(d + 1)
        for i in range(1, d):
            p = params.progress_probs[i - 1]
            nr[i + 1] += reach[i] * p
            nr[i] += reach[i] * (1 - p)
            na[i + 1] += agree[i] * match[i - 1] * p
            na[i] += agree[i] * match[i - 1] * (1 - p)
        total_reach += nr[d]
        total_agree += na[d]
        nr[d] = na[d] = 0.0
        reach, agree = nr, na
    return total_reach, total_agree


@dataclass(frozen=True)
class GapReport:
    lhs: float  # V(pi_star) - V(pi) by dynamic programming
    rhs: float  # eps * Pr(G <= H-1) * Pr(mismatch before G | G <= H-1)
    reach_prob: float
    mismatch_prob: float

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)


def suboptimality_gap(mdp: TabularMdp, policy: Policy, pi_star: Policy, phi: LatentMap,
                      params: LockParams) -> GapReport:
    lhs = exact_value(mdp, pi_star) - exact_value(mdp, policy)
    m = match_fractions(policy, pi_star, phi, params)
    reach, agree = _reach_probs(params, m)
    mismatch = 1.0 - agree / reach if reach > 0 else 0.0
    return GapReport(lhs, params.epsilon * reach * mismatch, reach, mismatch)
