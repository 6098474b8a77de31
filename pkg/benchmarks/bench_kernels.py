"""Time the compiled and pure-Python kernels on the same workloads.

    python3 benchmarks/bench_kernels.py [--episodes 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from lowrank_search import _backend, estimator, mdp
from lowrank_search.estimator import ADAPTIVE, FitConfig, fit_adaptive, fit_basic
from lowrank_search.mdp import Policy, random_lowrank_mdp, sample_uniform_dataset


def _use(name):
    k = _backend.get(name)
    mdp.kernels = k
    estimator.kernels = k


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(episodes):
    env = random_lowrank_mdp(8, 2, 2, 20, seed=1)
    pol = Policy.deterministic([0, 1] * 4)
    data = sample_uniform_dataset(env, episodes, seed=2)
    est = estimator.is_reward_estimates(data, pol, 9).values
    cfg = FitConfig(d=3, restarts=16, iterations=400, seed=0)
    acfg = FitConfig(d=3, restarts=16, iterations=400, seed=0, objective=ADAPTIVE,
                     residual_cap=0.05, horizon=20)

    def adaptive():
        try:
            fit_adaptive(est, acfg)
        except estimator.InfeasibleFit:
            pass

    return {
        f"sample {episodes} episodes": lambda: sample_uniform_dataset(env, episodes, seed=3),
        "IS estimates (9 steps)": lambda: estimator.is_reward_estimates(data, pol, 9),
        "basic fit, d=3": lambda: fit_basic(est, cfg),
        "adaptive fit, d=3": adaptive,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        _backend.get("cython")
        names = ["python", "cython"]
    except ImportError:
        print("compiled kernels not built; timing the fallback only")
        names = ["python"]
    results = {}
    for name in names:
        _use(name)
        for label, fn in workloads(args.episodes).items():
            results.setdefault(label, {})[name] = _best_of(fn, args.repeat)
    print(f"{'workload':28s}" + "".join(f"{n:>12s}" for n in names) +
          ("     speedup" if len(names) == 2 else ""))
    for label, row in results.items():
        line = f"{label:28s}" + "".join(f"{row[n]:11.4f}s" for n in names)
        if len(names) == 2:
            line += f"{row['python'] / row['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
