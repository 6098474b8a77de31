"""Command-line entry point: ``lowrank-search <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import harness, io, lock
from ._backend import BACKEND
from .estimator import FitConfig, estimate_policy_value, policy_search
from .mdp import random_lowrank_mdp, random_policy_class, sample_uniform_dataset

SEED_ENV = "LOWRANK_SEARCH_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _fit_args(p):
    p.add_argument("--d", type=int, required=True, help="assumed rank")
    p.add_argument("--horizon", type=int, help="prediction horizon (default: dataset H)")
    p.add_argument("--mode", choices=("basic", "adaptive"), default="basic")
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--delta", type=float, default=0.1)


def _fit_config(args) -> FitConfig:
    return FitConfig(d=args.d, restarts=args.restarts, iterations=args.iterations,
                     seed=args.seed, delta=args.delta)


def cmd_gen_env(args):
    mdp = random_lowrank_mdp(args.obs, args.actions, args.rank, args.horizon, args.seed,
                             args.concentration, args.reward_noise)
    io.write_mdp(mdp, args.out)
    if args.policies_out:
        io.write_policies(random_policy_class(args.obs, args.actions, args.num_policies,
                                              args.seed + 1), args.policies_out)
    print(f"wrote {args.out}")


def cmd_describe(args):
    if args.config:
        report = harness.describe_config(harness.ExperimentConfig.from_ini(args.config))
    else:
        if not args.env:
            raise SystemExit("describe needs --env or --config")
        mdp = io.read_mdp(args.env)
        params = phi = star = None
        if args.sidecar:
            params, phi, star = io.read_lock_sidecar(args.sidecar)
        if args.policies:
            pols = io.read_policies(args.policies)
        else:
            pols = random_policy_class(mdp.num_observations, mdp.num_actions, 3, args.seed)
        report = harness.describe(mdp, pols, params, phi, star, args.rank_tol)
    print(report.to_text(args.top))


def cmd_collect(args):
    mdp = io.read_mdp(args.env)
    data = sample_uniform_dataset(mdp, args.n, args.seed, args.threads)
    io.write_dataset(data, args.out)
    print(f"wrote {len(data)} episodes to {args.out}")


def cmd_estimate(args):
    data = io.read_dataset(args.dataset)
    pols = io.read_policies(args.policies)
    horizon = args.horizon or data.horizon
    idx = range(len(pols)) if args.index is None else [args.index]
    cfg = _fit_config(args)
    for i in idx:
        value, fit, profile = estimate_policy_value(data, pols[i], args.d, horizon,
                                                    args.mode, cfg)
        print(json.dumps({"policy_index": i, "v_hat": value, "delta_hat": fit.delta_hat,
                          "fallback": fit.fallback,
                          "predicted": [float(v) for v in profile.values]}))


def cmd_search(args):
    if not args.dataset:
        raise SystemExit("search needs --dataset (collect one first)")
    data = io.read_dataset(args.dataset)
    pols = io.read_policies(args.policies)
    t0 = time.perf_counter()
    report = policy_search(data, pols, args.d, args.horizon or data.horizon, args.mode,
                           _fit_config(args), args.threads)
    records = report.to_records(time.perf_counter() - t0)
    lines = [json.dumps(r) for r in records]
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))


def cmd_lock_build(args):
    params = lock.LockParams(args.d, args.horizon, args.epsilon,
                             tuple(args.progress) if args.progress else None, args.cells)
    phi = lock.random_latent_map(params, args.seed)
    pols = lock.gv_policy_class(params.N, args.class_size, args.seed + 1)
    star = args.pi_star % len(pols)
    mdp = lock.build_null_lock(phi, params) if args.null else \
        lock.build_lock_mdp(pols[star], phi, params)
    prefix = args.out_prefix
    io.write_mdp(mdp, prefix + ".mdp")
    io.write_policies(pols, prefix + ".policies")
    io.write_lock_sidecar(prefix + ".lock.json", params, phi, None if args.null else star)
    print(f"wrote {prefix}.mdp, {prefix}.policies, {prefix}.lock.json (N = {params.N})")


def cmd_lock_verify(args):
    prefix = args.prefix
    mdp = io.read_mdp(prefix + ".mdp")
    pols = io.read_policies(prefix + ".policies")
    params, phi, star = io.read_lock_sidecar(prefix + ".lock.json")
    pi_star = None if star is None else pols[star]
    ok = True
    for i, p in enumerate(pols):
        rep = lock.verify_lock_spectrum(mdp, p, pi_star, phi, params, args.tol)
        line = (f"policy {i}: spectrum err {rep.max_error:.2e} "
                f"({'ok' if rep.spectrum_ok else 'MISMATCH'}), rank {rep.rank} "
                f"(bound {rep.rank_bound}), nonzero eigenvalues {rep.nonzero_count}")
        if pi_star is not None:
            gap = lock.suboptimality_gap(mdp, p, pi_star, phi, params)
            line += f", gap identity diff {gap.diff:.2e}"
            ok &= gap.diff <= args.tol
        print(line)
        if not rep.spectrum_ok:
            print(rep.diff())
        ok &= rep.spectrum_ok
    return 0 if ok else 1


def cmd_run(args):
    cfg = harness.ExperimentConfig.from_ini(args.config)
    changes = {}
    if args.seed_given:
        changes["seed"] = args.seed
    if args.out:
        changes["output"] = args.out
    if args.repetitions:
        changes["repetitions"] = args.repetitions
    cfg = cfg.replace(**changes)
    records = harness.run(cfg, threads=args.threads)
    subs = np.array([r.suboptimality for r in records])
    for r in records:
        print(f"rep {r.repetition}: chose {r.chosen_index}, V~ {r.v_tilde:.4f}, "
              f"V {r.v_chosen:.4f}, max V {r.v_max:.4f}, subopt {r.suboptimality:.4f}")
    print(f"median suboptimality {np.median(subs):.4f} over {len(records)} repetitions")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowrank-search",
                                 description=f"Policy search in low-rank MDPs ({BACKEND} kernels)")
    ap.add_argument("--seed", type=int, default=None,
                    help=f"base seed (default ${SEED_ENV} or 0)")
    ap.add_argument("--threads", type=int, default=1)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="write a random low-rank MDP")
    p.add_argument("--obs", type=int, default=8)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--reward-noise", choices=("deterministic", "bernoulli"),
                   default="deterministic")
    p.add_argument("--num-policies", type=int, default=10)
    p.add_argument("--policies-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("describe", help="ranks, spectra and exact values per policy")
    p.add_argument("--env")
    p.add_argument("--policies")
    p.add_argument("--sidecar", help="lock sidecar for the closed-form comparison")
    p.add_argument("--config")
    p.add_argument("--rank-tol", type=float, default=1e-9)
    p.add_argument("--top", type=int, default=4)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("collect", help="sample a uniform-action dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("estimate", help="estimate policy values from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--policies", required=True)
    p.add_argument("--index", type=int)
    _fit_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("search", help="pick the best policy from a dataset")
    p.add_argument("--dataset")
    p.add_argument("--policies", required=True)
    p.add_argument("--out")
    _fit_args(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("lock-build", help="write a combination-lock instance")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--progress", type=float, nargs="*")
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--class-size", type=int, default=8)
    p.add_argument("--pi-star", type=int, default=0)
    p.add_argument("--null", action="store_true", help="action-independent variant")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_lock_build)

    p = sub.add_parser("lock-verify", help="check a lock instance against its closed forms")
    p.add_argument("--prefix", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_lock_verify)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--repetitions", type=int)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = _default_seed()
    try:
        code = args.func(args)
    except (io.FormatError, ValueError, lock.GVConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
