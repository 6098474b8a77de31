"""Finite episodic MDPs: sampling, induced kernels and exact DP oracles."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from ._backend import kernels

DETERMINISTIC = "deterministic"
BERNOULLI = "bernoulli"
STOCHASTIC_TOL = 1e-12
DEFAULT_RANK_TOL = 1e-9


class EigenSolverError(RuntimeError):
    """The eigenvalue solver failed to converge."""


def _cdf(probs, axis=-1):
    c = np.cumsum(probs, axis=axis)
    last = np.take(c, [-1], axis=axis)
    return np.ascontiguousarray(c / last)


def derive_seed(seed: int, *tags: int) -> int:
    """Child seed mixed from ``seed`` and integer tags (64-bit, order-sensitive)."""
    z = kernels.mix64(int(seed))
    for t in tags:
        z = kernels.mix64(z ^ (int(t) & 0xFFFFFFFFFFFFFFFF))
    return z


@dataclass(frozen=True)
class TabularMdp:
    """Episodic MDP with ``transition[next_obs, obs, action]``.

    The first observation of an episode is drawn from ``initial_dist``.
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    reward_noise: str = DETERMINISTIC

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward_mean, dtype=np.float64)
        mu = np.asarray(self.initial_dist, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[1]:
            raise ValueError(f"transition must have shape (X, X, K), got {t.shape}")
        nx, _, nk = t.shape
        if nx < 1 or nk < 1:
            raise ValueError("need at least one observation and one action")
        if r.shape != (nx, nk):
            raise ValueError(f"reward_mean must have shape {(nx, nk)}, got {r.shape}")
        if mu.shape != (nx,):
            raise ValueError(f"initial_dist must have shape {(nx,)}, got {mu.shape}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be positive")
        if np.any(t < 0) or np.max(np.abs(t.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("every transition column must be a probability vector")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("initial_dist must be a probability vector")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("reward_mean entries must lie in [0, 1]")
        if self.reward_noise not in (DETERMINISTIC, BERNOULLI):
            raise ValueError(f"unknown reward_noise {self.reward_noise!r}")
        for name, arr in (("transition", t), ("reward_mean", r), ("initial_dist", mu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def num_observations(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[2]

    @cached_property
    def _trans_cdf(self):
        # (obs, action, next_obs)
        return _cdf(np.transpose(self.transition, (1, 2, 0)))

    @cached_property
    def _mu0_cdf(self):
        return _cdf(self.initial_dist)


@dataclass(frozen=True)
class Policy:
    """Map from observations to actions (``table`` of ints) or action distributions."""

    table: np.ndarray
    kind: str = "deterministic"

    def __post_init__(self):
        if self.kind == "deterministic":
            tab = np.asarray(self.table, dtype=np.int64)
            if tab.ndim != 1 or np.any(tab < 0):
                raise ValueError("deterministic policy needs a 1-d table of actions")
        elif self.kind == "stochastic":
            tab = np.asarray(self.table, dtype=np.float64)
            if tab.ndim != 2 or np.any(tab < 0):
                raise ValueError("stochastic policy needs an (X, K) table")
            if np.max(np.abs(tab.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
                raise ValueError("stochastic policy rows must sum to 1")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        tab.setflags(write=False)
        object.__setattr__(self, "table", tab)

    @classmethod
    def deterministic(cls, actions) -> "Policy":
        return cls(np.asarray(actions, dtype=np.int64), "deterministic")

    @classmethod
    def stochastic(cls, probs) -> "Policy":
        return cls(np.asarray(probs, dtype=np.float64), "stochastic")

    @classmethod
    def uniform(cls, num_observations: int, num_actions: int) -> "Policy":
        return cls.stochastic(np.full((num_observations, num_actions), 1.0 / num_actions))

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "deterministic"

    @property
    def num_observations(self) -> int:
        return self.table.shape[0]

    def probabilities(self, num_actions: int) -> np.ndarray:
        """(X, K) matrix of action probabilities."""
        if self.is_deterministic:
            if np.any(self.table >= num_actions):
                raise ValueError("policy action out of range")
            out = np.zeros((self.table.shape[0], num_actions))
            out[np.arange(self.table.shape[0]), self.table] = 1.0
            return out
        if self.table.shape[1] != num_actions:
            raise ValueError("policy action dimension does not match the MDP")
        return np.array(self.table)

    def check(self, mdp: TabularMdp) -> None:
        if self.num_observations != mdp.num_observations:
            raise ValueError("policy is not defined on every observation of the MDP")
        self.probabilities(mdp.num_actions)


@dataclass(frozen=True)
class PolicyClass:
    policies: tuple

    def __post_init__(self):
        pols = tuple(self.policies)
        if not pols:
            raise ValueError("policy class must contain at least one policy")
        object.__setattr__(self, "policies", pols)

    def __len__(self) -> int:
        return len(self.policies)

    def __getitem__(self, i) -> Policy:
        return self.policies[i]

    def __iter__(self) -> Iterator[Policy]:
        return iter(self.policies)

    @classmethod
    def from_tables(cls, tables) -> "PolicyClass":
        return cls(tuple(Policy.deterministic(t) for t in tables))


def random_policy_class(num_observations: int, num_actions: int, size: int,
                        seed: int) -> PolicyClass:
    rng = np.random.default_rng(seed)
    tables = rng.integers(0, num_actions, size=(size, num_observations))
    return PolicyClass.from_tables(tables)


@dataclass(frozen=True)
class Episode:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if not (len(self.observations) == len(self.actions) == len(self.rewards)):
            raise ValueError("episode sequences must share one length")

    @property
    def horizon(self) -> int:
        return len(self.observations)

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))


@dataclass(frozen=True)
class Dataset:
    """``n`` episodes stored as (n, H) arrays."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int
    num_actions: int

    def __post_init__(self):
        obs = np.ascontiguousarray(self.observations, dtype=np.int64)
        act = np.ascontiguousarray(self.actions, dtype=np.int64)
        rew = np.ascontiguousarray(self.rewards, dtype=np.float64)
        if obs.ndim != 2 or obs.shape != act.shape or obs.shape != rew.shape:
            raise ValueError("dataset arrays must share one (n, H) shape")
        if obs.shape[0] < 1:
            raise ValueError("dataset needs at least one episode")
        for name, arr in (("observations", obs), ("actions", act), ("rewards", rew)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.observations.shape[1]

    def __len__(self) -> int:
        return self.observations.shape[0]

    def episode(self, t: int) -> Episode:
        return Episode(self.observations[t], self.actions[t], self.rewards[t])

    @property
    def episodes(self) -> list:
        return [self.episode(t) for t in range(len(self))]

    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def _rollout(mdp: TabularMdp, policy_cdf, seed, first, n, threads=1):
    k = kernels
    bern = mdp.reward_noise == BERNOULLI
    args = (mdp._mu0_cdf, mdp._trans_cdf, np.ascontiguousarray(mdp.reward_mean), bern,
            policy_cdf)
    if threads <= 1 or n < 2 * threads:
        return k.sample_episodes(*args, seed, first, n, mdp.horizon)
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(
            lambda lo_hi: k.sample_episodes(*args, seed, first + lo_hi[0],
                                            lo_hi[1] - lo_hi[0], mdp.horizon),
            zip(bounds[:-1], bounds[1:])))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def sample_dataset(mdp: TabularMdp, policy: Policy, n: int, seed: int,
                   first_episode: int = 0, threads: int = 1) -> Dataset:
    """Roll out ``n`` episodes of ``policy``; episode ``t`` depends only on (seed, t)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    policy.check(mdp)
    pcdf = _cdf(policy.probabilities(mdp.num_actions))
    obs, act, rew = _rollout(mdp, pcdf, seed, first_episode, n, threads)
    return Dataset(obs, act, rew, seed, mdp.num_actions)


def sample_episode(mdp: TabularMdp, policy: Policy, seed: int) -> Episode:
    return sample_dataset(mdp, policy, 1, seed).episode(0)


def sample_uniform_dataset(mdp: TabularMdp, n: int, seed: int, threads: int = 1) -> Dataset:
    """Episodes with actions drawn uniformly at random at every step."""
    return sample_dataset(mdp, Policy.uniform(mdp.num_observations, mdp.num_actions),
                          n, seed, threads=threads)


def induced_transition(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Column-stochastic ``T^pi[x', x] = E_{a~pi(x)} T(x'|x, a)``."""
    policy.check(mdp)
    if policy.is_deterministic:
        nx = mdp.num_observations
        return mdp.transition[:, np.arange(nx), policy.table].copy()
    return np.einsum("yxa,xa->yx", mdp.transition, policy.probabilities(mdp.num_actions))


def expected_reward_vector(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    return (mdp.reward_mean * policy.probabilities(mdp.num_actions)).sum(axis=1)


@dataclass(frozen=True)
class RewardProfile:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def value(self) -> float:
        return float(np.sum(self.values))


def exact_reward_profile(mdp: TabularMdp, policy: Policy) -> RewardProfile:
    """Expected reward at each step by forward propagation of the observation law."""
    tp = induced_transition(mdp, policy)
    nu = expected_reward_vector(mdp, policy)
    mu = np.array(mdp.initial_dist)
    out = np.empty(mdp.horizon)
    for h in range(mdp.horizon):
        out[h] = nu @ mu
        mu = tp @ mu
    return RewardProfile(out, "exact")


def exact_value(mdp: TabularMdp, policy: Policy) -> float:
    return exact_reward_profile(mdp, policy).value


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by modulus, then real part, then imaginary part (all descending)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128).ravel()
        order = np.lexsort((-vals.imag, -vals.real, -np.abs(vals)))
        vals = vals[order]
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.values)

    def top(self, d: int) -> "Spectrum":
        return Spectrum(self.values[:d])

    def is_conjugate_closed(self, tol: float = 1e-9) -> bool:
        vals = list(self.values)
        while vals:
            v = vals.pop(0)
            if abs(v.imag) <= tol:
                continue
            dist = [abs(w - v.conjugate()) for w in vals]
            if not dist or min(dist) > tol:
                return False
            vals.pop(int(np.argmin(dist)))
        return True


def spectrum_of(matrix, rank_tol: float = DEFAULT_RANK_TOL):
    """All eigenvalues of a square matrix and its numerical rank.

    The rank counts singular values above ``rank_tol * sigma_max``.
    """
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("spectrum_of needs a square matrix")
    try:
        vals = np.linalg.eigvals(a)
        sv = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    rank = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return Spectrum(vals), rank


def random_lowrank_mdp(num_observations: int, num_actions: int, rank: int, horizon: int,
                       seed: int, concentration: float = 1.0,
                       reward_noise: str = DETERMINISTIC,
                       reward_scale: float = 1.0) -> TabularMdp:
    """Random MDP with ``T(.|x, a) = Psi @ Phi_a[:, x]``.

    ``Psi`` (X x d) holds next-observation laws and each ``Phi_a`` (d x X) holds
    latent mixtures, so every induced matrix factors through ``Psi`` and has rank
    at most ``rank``. The initial law is itself a mixture of ``Psi`` columns.
    Small ``concentration`` gives sticky latent dynamics (eigenvalues near 1).
    """
    if rank < 1 or rank > num_observations:
        raise ValueError("rank must lie in [1, num_observations]")
    rng = np.random.default_rng(seed)
    psi = rng.dirichlet(np.full(num_observations, 1.0), size=rank).T
    phi = np.empty((num_actions, rank, num_observations))
    for a in range(num_actions):
        # each observation leans towards one latent component
        pref = rng.integers(0, rank, size=num_observations)
        alpha = np.full((num_observations, rank), concentration)
        alpha[np.arange(num_observations), pref] += 1.0
        phi[a] = np.array([rng.dirichlet(row) for row in alpha]).T
    transition = np.einsum("yl,alx->yxa", psi, phi)
    transition /= transition.sum(axis=0, keepdims=True)
    mu0 = psi @ rng.dirichlet(np.ones(rank))
    mu0 /= mu0.sum()
    reward = reward_scale * rng.uniform(size=(num_observations, num_actions))
    return TabularMdp(transition, reward, mu0, horizon, reward_noise)


def constant_reward_mdp(mdp: TabularMdp, value: float) -> TabularMdp:
    return TabularMdp(mdp.transition, np.full(mdp.reward_mean.shape, value),
                      mdp.initial_dist, mdp.horizon, mdp.reward_noise)


def as_policy_class(policies: Sequence) -> PolicyClass:
    if isinstance(policies, PolicyClass):
        return policies
    return PolicyClass(tuple(p if isinstance(p, Policy) else Policy.deterministic(p)
                             for p in policies))
