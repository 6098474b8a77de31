"""Policy-value estimation by autoregressive extrapolation and policy search."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import coeffs
from ._backend import kernels
from .mdp import (Dataset, Policy, PolicyClass, RewardProfile, Spectrum, TabularMdp,
                  as_policy_class, derive_seed, sample_dataset, sample_uniform_dataset)

BASIC = "basic_minimax_residual"
ADAPTIVE = "adaptive_geometric_product"
_MODES = {"basic": BASIC, "adaptive": ADAPTIVE, BASIC: BASIC, ADAPTIVE: ADAPTIVE}


@dataclass(frozen=True)
class FitConfig:
    d: int = 1
    restarts: int = 16
    iterations: int = 400
    seed: int = 0
    objective: str = BASIC
    residual_cap: Optional[float] = None
    horizon: Optional[int] = None
    delta: float = 0.1
    num_policies: int = 1
    step_tol: float = 1e-12
    warm_starts: tuple = ()

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.objective not in (BASIC, ADAPTIVE):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.residual_cap is not None and self.residual_cap < 0:
            raise ValueError("residual cap must be non-negative")


@dataclass(frozen=True)
class FitResult:
    lambda_hat: Spectrum
    delta_hat: float
    objective_value: float
    feasible: bool = True
    fallback: bool = False
    partition: tuple = ()


class InfeasibleFit(Exception):
    """No candidate met the residual cap; ``best`` carries the closest one."""

    def __init__(self, best: FitResult, cap: float):
        super().__init__(f"best residual {best.delta_hat:.3g} exceeds cap {cap:.3g}")
        self.best = best
        self.cap = cap


# ---------------------------------------------------------------------------
# importance sampling

def is_reward_estimates(dataset: Dataset, policy: Policy, steps: int) -> RewardProfile:
    """``(1/n) sum_t r_h prod_{h'<=h} K 1{pi(x_h') = a_h'}`` for ``h = 1..steps``."""
    if not policy.is_deterministic:
        raise ValueError("importance-sampling estimates need a deterministic policy")
    if not 1 <= steps <= dataset.horizon:
        raise ValueError(f"steps must lie in [1, {dataset.horizon}]")
    if policy.table.shape[0] <= int(dataset.observations.max()):
        raise ValueError("policy is not defined on every observation in the dataset")
    est = kernels.is_estimates(dataset.observations, dataset.actions, dataset.rewards,
                               np.ascontiguousarray(policy.table, dtype=np.int64),
                               dataset.num_actions, steps)
    return RewardProfile(est, "estimated")


def is_error_bound(n: int, num_actions: int, d: int, num_policies: int, delta: float) -> float:
    """Uniform deviation bound of the first ``3d`` importance-sampling estimates."""
    log_term = math.log(6 * d * num_policies / delta)
    k3d = float(num_actions) ** (3 * d)
    return math.sqrt(2 * k3d * log_term / n) + 2 * k3d * log_term / n


def adaptive_cap(n: int, num_actions: int, d: int, num_policies: int, delta: float) -> float:
    log_term = math.log(6 * d * num_policies / delta)
    k3d = float(num_actions) ** (3 * d)
    return 2 * d * 4.0 ** d * min(math.sqrt(8 * k3d * log_term / n), 4 * k3d * log_term / n)


# ---------------------------------------------------------------------------
# eigenvalue fitting

def _partitions(p: int):
    return [(r, (p - r) // 2) for r in range(p, -1, -2)]


def _ls_roots(values, d):
    v = np.asarray(values, dtype=np.float64)
    rows = len(v) - d
    if d == 0:
        return np.zeros(0, dtype=complex)
    if rows < 1:
        return None
    a = np.array([[v[h - k] for k in range(1, d + 1)] for h in range(d, len(v))])
    c, *_ = np.linalg.lstsq(a, v[d:], rcond=None)
    if not np.all(np.isfinite(c)):
        return None
    return np.roots(np.concatenate([[1.0], -c]))


def _project(roots):
    roots = np.asarray(roots, dtype=complex)
    mod = np.abs(roots)
    return np.where(mod > 1.0, roots / np.where(mod > 0, mod, 1.0), roots)


def _roots_to_params(roots, n_real, n_pair):
    """Normalized coordinates of ``roots`` in the (n_real, n_pair) layout, or None."""
    roots = _project(roots)
    reals = sorted(float(z.real) for z in roots if z.imag == 0.0)
    pairs = [(abs(z), math.atan2(z.imag, z.real)) for z in roots if z.imag > 0.0]
    if len(reals) + 2 * len(pairs) != n_real + 2 * n_pair:
        return None
    while len(reals) > n_real:
        x1, x2 = reals.pop(0), reals.pop(0)
        rho = math.sqrt(abs(x1 * x2))
        cos_phi = (x1 + x2) / (2 * rho) if rho > 0 else 1.0
        pairs.append((rho, math.acos(min(1.0, max(-1.0, cos_phi)))))
    while len(reals) < n_real:
        rho, phi = pairs.pop()
        reals.extend([rho * math.cos(phi)] * 2)
    u = [(x + 1.0) / 2.0 for x in reals]
    for rho, phi in pairs:
        u.extend([min(rho, 1.0), min(max(phi / math.pi, 0.0), 1.0)])
    return np.clip(np.array(u, dtype=np.float64), 0.0, 1.0)


def _params_to_roots(u, n_real, n_pair):
    roots = [complex(2.0 * u[i] - 1.0, 0.0) for i in range(n_real)]
    for j in range(n_pair):
        rho = u[n_real + 2 * j]
        phi = math.pi * u[n_real + 2 * j + 1]
        z = complex(rho * math.cos(phi), rho * math.sin(phi))
        roots.extend([z, z.conjugate()])
    return roots


def _geometric_sum(rho, horizon):
    s, t = 0.0, 1.0
    for _ in range(horizon):
        s += t
        t *= rho
    return s


def _lexi_better(a, b, adaptive, cap):
    if not adaptive:
        return a[0] < b[0]
    ea, eb = max(a[0] - cap, 0.0), max(b[0] - cap, 0.0)
    return ea < eb or (ea == eb and a[1] < b[1])


def _remove_unit_root(roots):
    roots = list(_project(roots))
    reals = [i for i, z in enumerate(roots) if z.imag == 0.0]
    if reals:
        i = min(reals, key=lambda i: abs(roots[i] - 1.0))
        roots.pop(i)
        return roots
    i = max(range(len(roots)), key=lambda i: roots[i].real)
    z = roots[i]
    rest = [w for j, w in enumerate(roots) if j != i]
    rest.remove(min(rest, key=lambda w: abs(w - z.conjugate())))
    return rest + [complex(z.real, 0.0)]


def _fit(values, config: FitConfig, adaptive: bool, cap: float, horizon: int) -> FitResult:
    d = config.d
    if d < 1:
        raise ValueError("d must be at least 1")
    values = np.ascontiguousarray(values, dtype=np.float64)
    if len(values) < d + 1:
        raise ValueError(f"need at least {d + 1} estimates, got {len(values)}")
    free = d - 1 if adaptive else d
    seeds = []
    if adaptive:
        diffs = np.diff(values)
        ls = _ls_roots(diffs, free) if free > 0 else np.zeros(0, dtype=complex)
        if ls is not None:
            seeds.append(ls)
        seeds.append(np.zeros(free, dtype=complex))
        for w in config.warm_starts:
            seeds.append(_remove_unit_root(np.asarray(w.values if isinstance(w, Spectrum) else w,
                                                      dtype=complex)))
    else:
        ls = _ls_roots(values, d)
        if ls is not None:
            seeds.append(ls)
        for w in config.warm_starts:
            seeds.append(np.asarray(w.values if isinstance(w, Spectrum) else w, dtype=complex))
    objective = 1 if adaptive else 0
    # with d = 1 in adaptive mode the spectrum is pinned to (1,): nothing to search
    best = (None, np.zeros(0), (0, 0)) if free == 0 else None
    for p_idx, (n_real, n_pair) in enumerate(_partitions(free) if free else ()):
        starts = [u for u in (_roots_to_params(s, n_real, n_pair) for s in seeds) if u is not None]
        rng = np.random.default_rng([config.seed & 0xFFFFFFFF, p_idx])
        extra = max(config.restarts - len(starts), 0)
        rand = rng.uniform(size=(extra, free))
        mat = np.ascontiguousarray(np.vstack([np.array(starts).reshape(-1, free), rand]))
        u, r, o, _ = kernels.pattern_search(values, d, n_real, n_pair, adaptive, mat,
                                            config.iterations, config.step_tol, objective,
                                            cap, horizon)
        if best is None or _lexi_better((r, o), best[0], adaptive, cap):
            best = ((r, o), u, (n_real, n_pair))
    _, u, part = best
    roots = _params_to_roots(u, *part)
    if adaptive:
        obj = 1.0
        for z in roots:
            obj *= _geometric_sum(abs(z), horizon)
        roots = [complex(1.0, 0.0)] + roots
    lam = Spectrum(np.array(roots, dtype=complex))
    delta_hat = coeffs.max_recurrence_residual(lam, values)
    if not adaptive:
        obj = delta_hat
    feasible = (not adaptive) or delta_hat <= cap + 1e-12
    return FitResult(lam, delta_hat, obj, feasible, False, part)


def fit_basic(estimates, config: FitConfig) -> FitResult:
    """Unit-disk, conjugate-closed spectrum minimizing the largest recurrence residual."""
    vals = estimates.values if isinstance(estimates, RewardProfile) else estimates
    return _fit(vals, config, False, 0.0, 0)


def fit_adaptive(estimates, config: FitConfig) -> FitResult:
    """Spectrum with ``lambda_1 = 1`` minimizing ``prod_{k>=2} sum_{h<H} |lambda_k|^h``
    subject to all residuals at most ``config.residual_cap``.

    Raises :class:`InfeasibleFit` when no candidate meets the cap.
    """
    if config.residual_cap is None or config.horizon is None:
        raise ValueError("adaptive fit needs residual_cap and horizon")
    vals = estimates.values if isinstance(estimates, RewardProfile) else estimates
    res = _fit(vals, config, True, float(config.residual_cap), int(config.horizon))
    if not res.feasible:
        raise InfeasibleFit(res, config.residual_cap)
    return res


# ---------------------------------------------------------------------------
# value prediction

def value_from_estimates(estimates, d: int, horizon: int, mode: str = "basic",
                         config: Optional[FitConfig] = None, n: Optional[int] = None,
                         num_actions: int = 2):
    """Fit a spectrum to the estimates and sum the extrapolated profile.

    Returns ``(value, FitResult, predicted RewardProfile)``. When ``d >= horizon``
    the estimates are summed directly.
    """
    vals = np.asarray(estimates.values if isinstance(estimates, RewardProfile) else estimates,
                      dtype=np.float64)
    if horizon < d and len(vals) < horizon:
        raise ValueError("horizon must be at least d")
    config = replace(config or FitConfig(), d=d, horizon=horizon, objective=_MODES[mode])
    if d >= horizon:
        profile = RewardProfile(vals[:horizon], "predicted")
        fit = FitResult(Spectrum(np.zeros(d)), 0.0, 0.0, True, False, ())
        return profile.value, fit, profile
    if config.objective == ADAPTIVE:
        if config.residual_cap is None:
            if n is None:
                raise ValueError("adaptive mode needs the episode count for its residual cap")
            config = replace(config, residual_cap=adaptive_cap(n, num_actions, d,
                                                               config.num_policies,
                                                               config.delta))
        try:
            fit = fit_adaptive(vals, config)
        except InfeasibleFit:
            fit = replace(fit_basic(vals, replace(config, objective=BASIC)), fallback=True)
    else:
        fit = fit_basic(vals, config)
    profile = coeffs.extrapolate(fit.lambda_hat, vals[:d], horizon)
    return profile.value, fit, profile


def estimate_policy_value(dataset: Dataset, policy: Policy, d: int, horizon: int,
                          mode: str = "basic", config: Optional[FitConfig] = None):
    steps = min(3 * d, horizon, dataset.horizon)
    est = is_reward_estimates(dataset, policy, steps)
    return value_from_estimates(est, d, horizon, mode, config, n=len(dataset),
                                num_actions=dataset.num_actions)


# ---------------------------------------------------------------------------
# policy search

@dataclass
class SearchReport:
    chosen_index: int
    estimated_values: np.ndarray
    fits: list
    dataset_seed: int
    rank: int
    mode: str = "basic"
    profiles: list = field(default_factory=list)
    candidates: list = field(default_factory=list)

    @property
    def flagged(self) -> list:
        return [i for i, f in enumerate(self.fits) if f.fallback]

    def to_records(self, wall_clock: Optional[float] = None) -> list:
        recs = []
        for i, (v, f) in enumerate(zip(self.estimated_values, self.fits)):
            recs.append({
                "policy_index": i,
                "v_hat": float(v),
                "delta_hat": float(f.delta_hat),
                "lambda_hat": [[float(abs(z)), float(np.angle(z))] for z in f.lambda_hat],
                "fallback": bool(f.fallback),
            })
        final = {"chosen_index": int(self.chosen_index), "rank": int(self.rank),
                 "mode": self.mode, "dataset_seed": int(self.dataset_seed),
                 "wall_clock": wall_clock}
        if self.candidates:
            final["candidates"] = self.candidates
        recs.append(final)
        return recs


def _argmax_lowest(values) -> int:
    values = np.asarray(values, dtype=np.float64)
    return int(np.flatnonzero(values == values.max())[0])


def policy_search(dataset: Dataset, policies, d: int, horizon: int, mode: str = "basic",
                  config: Optional[FitConfig] = None, threads: int = 1) -> SearchReport:
    """Estimate every policy's value from one uniform dataset and return the best."""
    pi = as_policy_class(policies)
    if len(pi) == 0:
        raise ValueError("policy class is empty")
    config = replace(config or FitConfig(), num_policies=len(pi))

    def run(policy):
        return estimate_policy_value(dataset, policy, d, horizon, mode, config)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, pi))
    else:
        results = [run(p) for p in pi]
    values = np.array([r[0] for r in results])
    return SearchReport(_argmax_lowest(values), values, [r[1] for r in results],
                        dataset.seed, d, mode, [r[2] for r in results])


def monte_carlo_value(mdp: TabularMdp, policy: Policy, m: int, seed: int) -> float:
    if m < 1:
        raise ValueError("m must be at least 1")
    return float(sample_dataset(mdp, policy, m, seed).returns().mean())


def rank_adaptive_search(mdp: TabularMdp, policies, horizon: int, n: int,
                         config: Optional[FitConfig] = None, mode: str = "basic",
                         threads: int = 1) -> SearchReport:
    """Search with every candidate rank ``d in 1..H`` on one shared half of the budget,
    then rate each candidate's winner with ``n // 2H`` fresh on-policy episodes."""
    if n < 4 * horizon:
        raise ValueError(f"need n >= 4H = {4 * horizon} episodes")
    pi = as_policy_class(policies)
    config = config or FitConfig()
    data_seed = derive_seed(config.seed, 0)
    dataset = sample_uniform_dataset(mdp, n // 2, data_seed, threads=threads)
    m = n // (2 * horizon)
    reports, scores, candidates = [], [], []
    for d in range(1, horizon + 1):
        rep = policy_search(dataset, pi, d, horizon, mode, replace(config, d=d), threads)
        v_bar = monte_carlo_value(mdp, pi[rep.chosen_index], m, derive_seed(config.seed, d))
        reports.append(rep)
        scores.append(v_bar)
        candidates.append({"d": d, "policy_index": rep.chosen_index, "v_bar": v_bar})
    best = _argmax_lowest(scores)
    rep = reports[best]
    return SearchReport(rep.chosen_index, rep.estimated_values, rep.fits, data_seed,
                        best + 1, mode, rep.profiles, candidates)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
