"""Experiment runner: build instances, search, and score against the DP oracle."""
from __future__ import annotations

import configparser
import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, lock
from .estimator import FitConfig, policy_search, rank_adaptive_search
from .mdp import (DETERMINISTIC, PolicyClass, TabularMdp, derive_seed, exact_value,
                  induced_transition, random_lowrank_mdp, random_policy_class,
                  sample_uniform_dataset, spectrum_of)

ENV_KINDS = ("random", "lock", "file")
MODES = ("basic", "adaptive", "rank_adaptive")
SECTIONS = ("run", "env", "search", "lock")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "random"
    env_file: Optional[str] = None
    policies_file: Optional[str] = None
    num_observations: int = 8
    num_actions: int = 2
    rank: Optional[int] = None
    concentration: float = 1.0
    reward_noise: str = DETERMINISTIC
    reward_scale: float = 1.0
    fixed_env: bool = False
    d: int = 1
    horizon: int = 20
    n: int = 50000
    num_policies: int = 10
    delta: float = 0.1
    epsilon: float = 0.1
    mode: str = "basic"
    restarts: int = 16
    iterations: int = 400
    cells_per_state: int = 8
    progress_probs: Optional[tuple] = None
    seed: int = 0
    repetitions: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        if self.env not in ENV_KINDS:
            raise ValueError(f"env must be one of {ENV_KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("num_observations", "num_actions", "d", "horizon", "n", "num_policies",
                     "restarts", "cells_per_state", "repetitions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.env == "file" and not self.env_file:
            raise ValueError("env = file needs env_file")
        if self.env == "lock" and self.num_actions != lock.NUM_ACTIONS:
            raise ValueError("lock environments have exactly two actions")
        if self.mode == "rank_adaptive" and self.n < 4 * self.horizon:
            raise ValueError("rank_adaptive mode needs n >= 4 * horizon")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, fields[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise io.FormatError(path, 0, f"cannot read config ({exc.strerror})") from exc
        except configparser.Error as exc:
            raise io.FormatError(path, getattr(exc, "lineno", 0), str(exc)) from None
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise io.FormatError(path, 0, f"unknown section [{section}]")
            values.update(parser.items(section))
        try:
            return cls.from_mapping(values)
        except ValueError as exc:
            raise io.FormatError(path, 0, str(exc)) from None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.progress_probs is not None:
            out["progress_probs"] = list(self.progress_probs)
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key, f, raw):
    if not isinstance(raw, str):
        return tuple(raw) if key == "progress_probs" and raw is not None else raw
    text = raw.strip()
    if text.lower() in ("", "none") and f.default is None:
        return None
    if key == "progress_probs":
        return tuple(float(v) for v in text.replace(",", " ").split())
    kind = type(f.default) if f.default is not None else (
        int if key == "rank" else str)
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key} must be a boolean")
    try:
        return kind(text)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


@dataclass(frozen=True)
class Instance:
    mdp: TabularMdp
    policies: PolicyClass
    lock_params: Optional[lock.LockParams] = None
    latent_map: Optional[lock.LatentMap] = None
    pi_star_index: Optional[int] = None


def build_instance(config: ExperimentConfig, repetition: int = 0) -> Instance:
    env_seed = config.seed if config.fixed_env else derive_seed(config.seed, repetition)
    if config.env == "random":
        mdp = random_lowrank_mdp(config.num_observations, config.num_actions,
                                 config.rank or config.d, config.horizon,
                                 derive_seed(env_seed, 1), config.concentration,
                                 config.reward_noise, config.reward_scale)
        pols = random_policy_class(config.num_observations, config.num_actions,
                                   config.num_policies, derive_seed(env_seed, 2))
        return Instance(mdp, pols)
    if config.env == "lock":
        params = lock.LockParams(config.d, config.horizon, config.epsilon,
                                 config.progress_probs, config.cells_per_state)
        phi = lock.random_latent_map(params, derive_seed(env_seed, 1))
        pols = lock.gv_policy_class(params.N, config.num_policies, derive_seed(env_seed, 2))
        star = derive_seed(env_seed, 3) % len(pols)
        return Instance(lock.build_lock_mdp(pols[star], phi, params), pols, params, phi, star)
    mdp = io.read_mdp(config.env_file)
    if config.horizon != mdp.horizon:
        mdp = TabularMdp(mdp.transition, mdp.reward_mean, mdp.initial_dist, config.horizon,
                         mdp.reward_noise)
    if config.policies_file:
        pols = io.read_policies(config.policies_file)
    else:
        pols = random_policy_class(mdp.num_observations, mdp.num_actions,
                                   config.num_policies, derive_seed(env_seed, 2))
    return Instance(mdp, pols)


@dataclass(frozen=True)
class ResultRecord:
    repetition: int
    seed: int
    mode: str
    chosen_index: int
    v_tilde: float
    v_chosen: float
    v_max: float
    suboptimality: float
    estimation_errors: tuple
    rank_used: int
    flagged: tuple = ()
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["estimation_errors"] = list(self.estimation_errors)
        out["flagged"] = list(self.flagged)
        return out

    def deterministic_part(self) -> dict:
        out = self.to_dict()
        out.pop("wall_clock")
        return out


def run_repetition(config: ExperimentConfig, repetition: int, threads: int = 1) -> ResultRecord:
    t0 = time.perf_counter()
    inst = build_instance(config, repetition)
    rep_seed = derive_seed(config.seed, repetition)
    fit = FitConfig(d=config.d, restarts=config.restarts, iterations=config.iterations,
                    seed=derive_seed(rep_seed, 4), delta=config.delta)
    if config.mode == "rank_adaptive":
        report = rank_adaptive_search(inst.mdp, inst.policies, config.horizon, config.n,
                                      dataclasses.replace(fit, seed=derive_seed(rep_seed, 3)),
                                      threads=threads)
    else:
        data = sample_uniform_dataset(inst.mdp, config.n, derive_seed(rep_seed, 3), threads)
        report = policy_search(data, inst.policies, config.d, config.horizon, config.mode,
                               fit, threads)
    values = np.array([exact_value(inst.mdp, p) for p in inst.policies])
    chosen = report.chosen_index
    return ResultRecord(
        repetition=repetition, seed=rep_seed, mode=config.mode, chosen_index=chosen,
        v_tilde=float(report.estimated_values[chosen]), v_chosen=float(values[chosen]),
        v_max=float(values.max()), suboptimality=float(values.max() - values[chosen]),
        estimation_errors=tuple(float(e) for e in report.estimated_values - values),
        rank_used=report.rank, flagged=tuple(report.flagged),
        wall_clock=time.perf_counter() - t0)


def run(config: ExperimentConfig, threads: int = 1, output=None) -> list:
    """One record per repetition, in repetition order.

    With an output path (argument or ``config.output``) the resolved config is
    written first, then each record as soon as all earlier ones are done.
    """
    path = output or config.output
    fh = open(path, "w") if path else None
    try:
        if fh:
            fh.write(json.dumps({"record": "config", "config": config.to_dict()}) + "\n")
            fh.flush()
        reps = range(config.repetitions)
        if threads > 1 and config.repetitions > 1:
            pool = ThreadPoolExecutor(threads)
            results = pool.map(lambda r: run_repetition(config, r), reps)
        else:
            pool = None
            inner = threads if config.repetitions == 1 else 1
            results = (run_repetition(config, r, inner) for r in reps)
        records = []
        for rec in results:
            records.append(rec)
            if fh:
                fh.write(json.dumps({"record": "result", **rec.to_dict()}) + "\n")
                fh.flush()
        if pool:
            pool.shutdown()
        return records
    finally:
        if fh:
            fh.close()


def read_records(path) -> tuple:
    """``(config dict, [result dicts])`` from a record stream."""
    config, results = None, []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise io.FormatError(path, lineno, exc.msg) from None
        if rec.get("record") == "config":
            config = rec["config"]
        else:
            results.append(rec)
    return config, results


# ---------------------------------------------------------------------------
# instance reports

@dataclass
class PolicySummary:
    index: int
    rank: int
    spectrum: np.ndarray
    value: float
    lock_check: Optional[lock.LockSpectrumReport] = None


@dataclass
class InstanceReport:
    num_observations: int
    num_actions: int
    horizon: int
    policies: list = field(default_factory=list)
    lock_params: Optional[lock.LockParams] = None

    def to_text(self, top: int = 4) -> str:
        lines = [f"|X| = {self.num_observations}  K = {self.num_actions}  H = {self.horizon}"]
        if self.lock_params is not None:
            p = self.lock_params
            lines.append(f"lock: d = {p.d}, eps = {p.epsilon}, p = {list(p.progress_probs)}, "
                         f"N = {p.N}")
        lines.append("policy  rank  value         leading eigenvalues")
        for s in self.policies:
            eig = ", ".join(_fmt_complex(z) for z in s.spectrum[:top])
            lines.append(f"{s.index:6d}  {s.rank:4d}  {s.value:12.8f}  {eig}")
            if s.lock_check is not None:
                c = s.lock_check
                lines.append(f"        closed form: max err {c.max_error:.2e}, "
                             f"rank {c.rank} vs bound {c.rank_bound}, "
                             f"{'match' if c.spectrum_ok else 'MISMATCH'}")
        return "\n".join(lines)


def _fmt_complex(z) -> str:
    if abs(z.imag) < 1e-12:
        return f"{z.real:.6f}"
    return f"{z.real:.6f}{z.imag:+.6f}j"


def describe(mdp: TabularMdp, policies: PolicyClass, lock_params=None, latent_map=None,
             pi_star_index=None, rank_tol: float = 1e-9) -> InstanceReport:
    report = InstanceReport(mdp.num_observations, mdp.num_actions, mdp.horizon,
                            lock_params=lock_params)
    star = policies[pi_star_index] if pi_star_index is not None else None
    for i, p in enumerate(policies):
        spec, rank = spectrum_of(induced_transition(mdp, p), rank_tol)
        check = None
        if lock_params is not None and latent_map is not None:
            check = lock.verify_lock_spectrum(mdp, p, star, latent_map, lock_params)
        report.policies.append(PolicySummary(i, rank, spec.values, exact_value(mdp, p), check))
    return report


def describe_config(config: ExperimentConfig, repetition: int = 0) -> InstanceReport:
    inst = build_instance(config, repetition)
    return describe(inst.mdp, inst.policies, inst.lock_params, inst.latent_map,
                    inst.pi_star_index)
