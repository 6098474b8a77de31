"""Symmetric-polynomial coefficients of low-rank matrix recurrences.

Functions accept a :class:`~lowrank_search.mdp.Spectrum` or any sequence of
numbers. Plain Python ints (or Fractions) stay exact; everything else is
evaluated in double-precision complex.
"""
from __future__ import annotations

import numbers
from dataclasses import dataclass
from math import comb

import numpy as np

from .mdp import RewardProfile, Spectrum, spectrum_of


def _numbers(lam) -> list:
    if isinstance(lam, Spectrum):
        return [complex(v) for v in lam.values]
    vals = list(np.ravel(lam)) if isinstance(lam, np.ndarray) else list(lam)
    if vals and all(isinstance(v, numbers.Rational) and not isinstance(v, bool) for v in vals):
        return [int(v) if isinstance(v, numbers.Integral) else v for v in vals]
    return [complex(v) for v in vals]


def elementary_symmetric(lam) -> list:
    """``[e_0, e_1, ..., e_d]`` by Vieta's recursion."""
    vals = _numbers(lam)
    e = [1] + [0] * len(vals)
    for j, v in enumerate(vals, start=1):
        for k in range(j, 0, -1):
            e[k] = e[k] + v * e[k - 1]
    return e


def elem_sym(lam, k: int):
    """Sum of all products of ``k`` distinct entries of ``lam``."""
    d = len(_numbers(lam))
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    return elementary_symmetric(lam)[k]


def alpha_table(lam, m_max: int) -> list:
    """``table[m][k] = alpha_{m,k}`` for ``0 <= m <= m_max`` and ``0 <= k <= d``.

    ``alpha_{m,k}`` sums the monomials of total degree ``m`` in which exactly
    ``k`` variables appear.
    """
    vals = _numbers(lam)
    d = len(vals)
    zero = 0 if vals and not isinstance(vals[0], complex) else 0j
    # s[k][m] after processing a prefix of the variables
    s = [[zero] * (m_max + 1) for _ in range(d + 1)]
    s[0][0] = zero + 1
    for v in vals:
        powers = [zero + 1]
        for _ in range(m_max):
            powers.append(powers[-1] * v)
        new = [row[:] for row in s]
        for k in range(d):
            for m in range(m_max + 1):
                base = s[k][m]
                if base == 0:
                    continue
                for e in range(1, m_max - m + 1):
                    new[k + 1][m + e] = new[k + 1][m + e] + base * powers[e]
        s = new
    return [[s[k][m] for k in range(d + 1)] for m in range(m_max + 1)]


def alpha_mk(lam, m: int, k: int):
    if m < 0 or k < 0:
        raise ValueError("m and k must be non-negative")
    d = len(_numbers(lam))
    if m < k or k > d:
        return 0
    return alpha_table(lam, m)[m][k]


def beta_recursion(lam, m_max: int) -> list:
    """``rows[m][k-1] = beta_{m,k}`` for ``0 <= m <= m_max``, ``1 <= k <= d``."""
    if m_max < 0:
        raise ValueError("m_max must be non-negative")
    e = elementary_symmetric(lam)
    d = len(e) - 1
    alpha = e[1:]
    rows = [list(alpha)]
    for _ in range(m_max):
        prev = rows[-1]
        row = [prev[0] * alpha[k] - prev[k + 1] for k in range(d - 1)]
        row.append(prev[0] * alpha[d - 1])
        rows.append(row)
    return rows


def beta_closed_form(lam, m: int, k: int, table=None):
    """``sum_{j=k}^{min(m+k, d)} C(j-1, k-1) alpha_{m+k, j}``."""
    d = len(_numbers(lam))
    if table is None:
        table = alpha_table(lam, m + k)
    row = table[m + k]
    total = 0
    for j in range(k, min(m + k, d) + 1):
        total = total + comb(j - 1, k - 1) * row[j]
    return total


@dataclass(frozen=True)
class CoefficientTable:
    lam: Spectrum
    alpha: np.ndarray  # alpha_1 .. alpha_d
    alpha_mk: np.ndarray  # [m, k] for 0 <= m <= m_max + d
    beta: np.ndarray  # [m, k-1] for 0 <= m <= m_max


def beta_table(lam, m_max: int) -> CoefficientTable:
    vals = _numbers(lam)
    d = len(vals)
    dtype = object if vals and not isinstance(vals[0], complex) else np.complex128
    beta = np.array(beta_recursion(vals, m_max), dtype=dtype)
    amk = np.array(alpha_table(vals, m_max + d), dtype=dtype)
    alpha = np.array(elementary_symmetric(vals)[1:], dtype=dtype)
    spec = lam if isinstance(lam, Spectrum) else Spectrum(np.array(vals, dtype=complex))
    return CoefficientTable(spec, alpha, amk, beta)


def recurrence_coefficients(lam) -> np.ndarray:
    """``c_k = (-1)^{k+1} alpha_k`` so that ``x_h = sum_k c_k x_{h-k}``."""
    e = elementary_symmetric(lam)
    return np.array([(-1) ** (k + 1) * e[k] for k in range(1, len(e))], dtype=np.complex128)


def companion(lam) -> np.ndarray:
    """First row ``c_k``, ones on the subdiagonal; its eigenvalues are ``lam``."""
    c = recurrence_coefficients(lam)
    d = len(c)
    if d < 1:
        raise ValueError("need at least one eigenvalue")
    p = np.zeros((d, d), dtype=np.complex128)
    p[0] = c
    p[np.arange(1, d), np.arange(d - 1)] = 1.0
    return p


def is_conjugate_closed(lam, tol: float = 1e-9) -> bool:
    spec = lam if isinstance(lam, Spectrum) else Spectrum(np.asarray(lam, dtype=complex))
    return spec.is_conjugate_closed(tol)


def real_coefficients(lam, imag_tol: float = 1e-10) -> np.ndarray:
    """Recurrence coefficients of a conjugate-closed spectrum as reals."""
    if not is_conjugate_closed(lam):
        raise ValueError("spectrum is not closed under complex conjugation")
    c = recurrence_coefficients(lam)
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    if c.size and np.max(np.abs(c.imag)) > imag_tol * scale:
        raise ValueError("recurrence coefficients are not real")
    return c.real.copy()


def extrapolate(lam, seed_values, horizon: int) -> RewardProfile:
    """Unroll ``x_h = sum_k c_k(lam) x_{h-k}`` from ``d`` seed values up to ``horizon``."""
    c = real_coefficients(lam)
    d = len(c)
    seed = np.asarray(seed_values, dtype=np.float64)
    if seed.shape != (d,):
        raise ValueError(f"need exactly {d} seed values")
    if horizon < d:
        raise ValueError("horizon must be at least d")
    out = np.empty(horizon)
    out[:d] = seed
    for h in range(d, horizon):
        out[h] = sum(c[k] * out[h - 1 - k] for k in range(d))
    return RewardProfile(out, "predicted")


def recurrence_residuals(lam, values) -> np.ndarray:
    """``|sum_k c_k v_{h-k} - v_h|`` for ``h = d+1 .. len(values)`` (1-based)."""
    c = recurrence_coefficients(lam)
    d = len(c)
    v = np.asarray(values, dtype=np.float64)
    out = [abs(sum(c[k] * v[h - 1 - k] for k in range(d)) - v[h]) for h in range(d, len(v))]
    return np.array(out, dtype=np.float64)


def max_recurrence_residual(lam, values) -> float:
    r = recurrence_residuals(lam, values)
    return float(r.max()) if r.size else 0.0


def matrix_spectrum_top(a, d: int) -> Spectrum:
    """The ``d`` largest-modulus eigenvalues of ``a``."""
    spec, _ = spectrum_of(a)
    return spec.top(d)


def ch_extension_check(a, d: int, m: int, rank_tol: float = 1e-9) -> float:
    """Relative max-norm residual of ``A^{d+m+1} = sum_k (-1)^{k+1} beta_{m,k} A^{d+1-k}``."""
    a = np.asarray(a)
    spec, rank = spectrum_of(a, rank_tol)
    if rank > d:
        raise ValueError(f"matrix has numerical rank {rank} > {d}")
    lam = spec.top(d)
    beta = beta_recursion(lam, m)[m]
    powers = [np.eye(a.shape[0], dtype=np.complex128)]
    for _ in range(d + m + 1):
        powers.append(powers[-1] @ a)
    rhs = sum((-1) ** (k + 1) * beta[k - 1] * powers[d + 1 - k] for k in range(1, d + 1))
    lhs = powers[d + m + 1]
    scale = max(1.0, float(np.max(np.abs(lhs))))
    return float(np.max(np.abs(lhs - rhs)) / scale)
