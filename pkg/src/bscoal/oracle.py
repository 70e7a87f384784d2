"""Exact expectations for the block-counting chain by dynamic programming.

These are ground truth for the Monte Carlo checks at small ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from bscoal.chain import jump_pmf_vector
from bscoal.errors import DomainError, ResourceError

N_MAX = 2000
N_MAX_JOINT = 300


def _check(n: int, limit: int, what: str) -> None:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if n > limit:
        raise ResourceError(f"{what}: n={n} exceeds the configured limit {limit}")


def _backward(n: int, step) -> np.ndarray:
    """``v[1] = 0``, ``v[b] = step(b) + sum_l p(b,l) v[b-l]``."""
    v = np.zeros(n + 1)
    for b in range(2, n + 1):
        p = jump_pmf_vector(b)
        v[b] = step(b) + np.dot(p, v[b - 1:0:-1])
    return v


def expected_length_dp(n: int, n_max: int = N_MAX) -> float:
    """E[L] for the n-coalescent; time ``1/(b-1)`` is spent with ``b`` branches."""
    _check(n, n_max, "expected_length_dp")
    return float(_backward(n, lambda b: b / (b - 1.0))[n])


def expected_tau_dp(n: int, n_max: int = N_MAX) -> float:
    _check(n, n_max, "expected_tau_dp")
    return float(_backward(n, lambda b: 1.0)[n])


def tau_pmf_dp(n: int, n_max: int = N_MAX) -> np.ndarray:
    """Vector ``p`` with ``p[j-1] = P(tau = j)`` for ``j = 1..n-1``
    (empty for ``n = 1``)."""
    _check(n, n_max, "tau_pmf_dp")
    if n == 1:
        return np.zeros(0)
    # q[b, j] = P(tau = j | X_0 = b)
    q = np.zeros((n + 1, n))
    q[1, 0] = 1.0
    for b in range(2, n + 1):
        p = jump_pmf_vector(b)
        q[b, 1:b] = p @ q[b - 1:0:-1, 0:b - 1]
    return q[n, 1:].copy()


@numba.njit(cache=True)
def _joint_external(n):
    lf = np.zeros(n + 2)
    for i in range(1, n + 2):
        lf[i] = lf[i - 1] + math.log(i)
    val = np.zeros((n + 1, n + 1))
    for b in range(2, n + 1):
        for z in range(0, b + 1):
            acc = z / (b - 1.0)
            lnc = lf[b]
            for l in range(1, b):
                m = l + 1
                pj = b / ((b - 1.0) * l * (l + 1.0))
                lo = max(0, m - (b - z))
                hi = min(m, z)
                s = 0.0
                for h in range(lo, hi + 1):
                    lp = (lf[z] - lf[h] - lf[z - h]
                          + lf[b - z] - lf[m - h] - lf[b - z - m + h]
                          - lnc + lf[m] + lf[b - m])
                    s += math.exp(lp) * val[b - l, z - h]
                acc += pj * s
            val[b, z] = acc
    return val


def expected_external_dp(n: int, n_max_joint: int = N_MAX_JOINT) -> float:
    """E[E] by a DP over (blocks, external blocks), summing the full
    hypergeometric support at every merger."""
    _check(n, n_max_joint, "expected_external_dp")
    if n == 1:
        return 0.0
    return float(_joint_external(n)[n, n])


@dataclass(frozen=True)
class OracleTable:
    n: int
    expected_L: float
    expected_E: float
    expected_I: float
    expected_tau: float
    tau_pmf: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "L": self.expected_L,
            "E": self.expected_E,
            "I": self.expected_I,
            "tau_mean": self.expected_tau,
            "tau_pmf": [float(x) for x in self.tau_pmf],
        }


def oracle_table(n: int, n_max: int = N_MAX, n_max_joint: int = N_MAX_JOINT) -> OracleTable:
    length = expected_length_dp(n, n_max)
    external = expected_external_dp(n, n_max_joint)
    pmf = tau_pmf_dp(n, n_max)
    internal = length - external
    # round-off can leave -1e-16 at n <= 2
    if abs(internal) < 1e-12:
        internal = 0.0
    return OracleTable(
        n=n,
        expected_L=length,
        expected_E=external,
        expected_I=internal,
        expected_tau=expected_tau_dp(n, n_max),
        tau_pmf=pmf,
    )
