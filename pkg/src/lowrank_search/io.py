"""Plain-text formats for MDPs, datasets, policy classes and lock sidecars."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .lock import LatentMap, LockParams
from .mdp import Dataset, PolicyClass, TabularMdp

MDP_MAGIC = "# lowrank-search mdp v1"
_HEADER_KEYS = ("num_observations", "num_actions", "horizon", "reward_noise")


class FormatError(ValueError):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in values)


def _read_lines(path):
    try:
        return Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read file ({exc.strerror})") from exc


# ---------------------------------------------------------------------------
# MDPs

def dumps_mdp(mdp: TabularMdp) -> str:
    out = [MDP_MAGIC,
           f"num_observations = {mdp.num_observations}",
           f"num_actions = {mdp.num_actions}",
           f"horizon = {mdp.horizon}",
           f"reward_noise = {mdp.reward_noise}",
           "[initial_dist]", _fmt(mdp.initial_dist),
           "[reward_mean]"]
    out += [_fmt(row) for row in mdp.reward_mean]
    out.append("[transition]")
    # one line per (next, obs); columns run over actions
    out += [_fmt(mdp.transition[y, x]) for y in range(mdp.num_observations)
            for x in range(mdp.num_observations)]
    return "\n".join(out) + "\n"


def write_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def _floats(path, lineno, text, width):
    try:
        vals = [float(t) for t in text.split()]
    except ValueError:
        raise FormatError(path, lineno, "expected numbers") from None
    if len(vals) != width:
        raise FormatError(path, lineno, f"expected {width} values, got {len(vals)}")
    return vals


def loads_mdp(text: str, path="<string>") -> TabularMdp:
    header = {}
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in ("initial_dist", "reward_mean", "transition"):
                raise FormatError(path, lineno, f"unknown section [{current}]")
            if current in sections:
                raise FormatError(path, lineno, f"duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in _HEADER_KEYS:
                raise FormatError(path, lineno, f"unexpected header line {line!r}")
            header[key] = (lineno, val.strip())
        else:
            sections[current].append((lineno, line))
    for key in _HEADER_KEYS[:3]:
        if key not in header:
            raise FormatError(path, 0, f"missing header field {key!r}")
    ints = {}
    for key in _HEADER_KEYS[:3]:
        lineno, val = header[key]
        try:
            ints[key] = int(val)
        except ValueError:
            raise FormatError(path, lineno, f"{key} must be an integer") from None
        if ints[key] < 1:
            raise FormatError(path, lineno, f"{key} must be positive")
    nx, nk = ints["num_observations"], ints["num_actions"]
    noise = header.get("reward_noise", (0, "deterministic"))[1]
    for name in ("initial_dist", "reward_mean", "transition"):
        if name not in sections:
            raise FormatError(path, 0, f"missing section [{name}]")
    init = sections["initial_dist"]
    if len(init) != 1:
        raise FormatError(path, init[0][0] if init else 0, "initial_dist takes one line")
    mu0 = _floats(path, init[0][0], init[0][1], nx)
    rows = sections["reward_mean"]
    if len(rows) != nx:
        raise FormatError(path, rows[-1][0] if rows else 0,
                          f"reward_mean needs {nx} lines, got {len(rows)}")
    reward = [_floats(path, ln, t, nk) for ln, t in rows]
    rows = sections["transition"]
    if len(rows) != nx * nx:
        raise FormatError(path, rows[-1][0] if rows else 0,
                          f"transition needs {nx * nx} lines, got {len(rows)}")
    trans = np.array([_floats(path, ln, t, nk) for ln, t in rows]).reshape(nx, nx, nk)
    try:
        return TabularMdp(trans, np.array(reward), np.array(mu0), ints["horizon"], noise)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from None


def read_mdp(path) -> TabularMdp:
    return loads_mdp("\n".join(_read_lines(path)), path)


# ---------------------------------------------------------------------------
# datasets

def write_dataset(dataset: Dataset, path) -> None:
    n, horizon = dataset.observations.shape
    with open(path, "w") as fh:
        fh.write(f"{horizon} {dataset.num_actions} {n} {dataset.seed}\n")
        for t in range(n):
            for h in range(horizon):
                fh.write("%d %d %d %d %.17g\n" % (t, h + 1, dataset.observations[t, h],
                                                  dataset.actions[t, h],
                                                  dataset.rewards[t, h]))


def read_dataset(path) -> Dataset:
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise FormatError(path, 1, "missing header 'H K n seed'")
    parts = lines[0].split()
    if len(parts) != 4:
        raise FormatError(path, 1, "header must be 'H K n seed'")
    try:
        horizon, nk, n, seed = (int(p) for p in parts)
    except ValueError:
        raise FormatError(path, 1, "header fields must be integers") from None
    if n < 1:
        raise FormatError(path, 1, "dataset is empty")
    if horizon < 1 or nk < 1:
        raise FormatError(path, 1, "H and K must be positive")
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != n * horizon:
        raise FormatError(path, len(lines), f"expected {n * horizon} step lines, "
                                            f"got {len(body)}")
    obs = np.empty((n, horizon), dtype=np.int64)
    act = np.empty((n, horizon), dtype=np.int64)
    rew = np.empty((n, horizon))
    for k, (lineno, ln) in enumerate(body):
        f = ln.split()
        if len(f) != 5:
            raise FormatError(path, lineno, "step line must be 'episode h obs action reward'")
        try:
            t, h, x, a = (int(v) for v in f[:4])
            r = float(f[4])
        except ValueError:
            raise FormatError(path, lineno, "malformed step line") from None
        if (t, h - 1) != divmod(k, horizon):
            raise FormatError(path, lineno, f"steps out of order (episode {t}, h {h})")
        if not 0 <= a < nk or x < 0:
            raise FormatError(path, lineno, "observation or action out of range")
        obs[t, h - 1], act[t, h - 1], rew[t, h - 1] = x, a, r
    return Dataset(obs, act, rew, seed, nk)


# ---------------------------------------------------------------------------
# policy classes

def write_policies(policies: PolicyClass, path) -> None:
    with open(path, "w") as fh:
        for p in policies:
            if not p.is_deterministic:
                raise ValueError("only deterministic policies can be written")
            fh.write(" ".join(str(int(a)) for a in p.table) + "\n")


def read_policies(path) -> PolicyClass:
    rows = []
    for lineno, ln in enumerate(_read_lines(path), start=1):
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        try:
            rows.append([int(v) for v in ln.split()])
        except ValueError:
            raise FormatError(path, lineno, "policy lines hold integer actions") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise FormatError(path, lineno, "policies disagree on the observation count")
        if min(rows[-1]) < 0:
            raise FormatError(path, lineno, "negative action")
    if not rows:
        raise FormatError(path, 0, "policy class is empty")
    return PolicyClass.from_tables(np.array(rows))


# ---------------------------------------------------------------------------
# lock sidecar

def write_lock_sidecar(path, params: LockParams, phi: LatentMap, pi_star_index=None) -> None:
    doc = {
        "d": params.d, "H": params.H, "epsilon": params.epsilon,
        "progress_probs": list(params.progress_probs),
        "cells_per_state": params.cells_per_state,
        "pi_star_index": pi_star_index,
        "latent_labels": params.latent_labels(),
        "phi": [int(s) for s in phi.phi],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_lock_sidecar(path):
    try:
        doc = json.loads("\n".join(_read_lines(path)))
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, exc.msg) from None
    try:
        params = LockParams(int(doc["d"]), int(doc["H"]), float(doc["epsilon"]),
                            tuple(doc["progress_probs"]), int(doc["cells_per_state"]))
        phi = LatentMap(np.array(doc["phi"]), params.num_latent)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, 0, f"bad lock sidecar ({exc})") from None
    return params, phi, doc.get("pi_star_index")
