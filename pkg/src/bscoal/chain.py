"""Block-counting jump chain of the Bolthausen-Sznitman n-coalescent.

From ``b`` blocks the next merger involves ``l + 1`` of them with probability
``b / ((b - 1) l (l + 1))``, so the chain loses ``l`` blocks.  The same chain
is produced by the Iksanov-Moehle coupling: draw i.i.d. ``V`` with
``P(V >= k) = 1/k`` and accept a draw whenever the accepted total stays
below ``n``.

Random streams are :class:`numpy.random.Generator` instances.  The inner
loops are numba kernels that consume the generator directly, so a stream
gives the same path whether it is used from Python or from a batch kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from bscoal.errors import DomainError

#: Upper clamp for a single V draw; reaching it has probability below 1e-18.
V_CAP = 2**62
# u == 0 is mapped to the smallest positive double.
_TINY_U = 5e-324


@numba.njit(cache=True, nogil=True)
def v_from_uniform(u, cap=V_CAP):
    """Inverse transform ``floor(1/u)`` for the law ``P(V >= k) = 1/k``."""
    if u <= 0.0:
        u = _TINY_U
    if u * cap <= 1.0:
        return cap
    return np.int64(1.0 / u)


@numba.njit(cache=True, nogil=True)
def jump_from_uniform(u, b):
    """Jump size from ``b`` blocks by inverting the tail
    ``P(U >= l) = b/(b-1) * (1/l - 1/b)``."""
    if b <= 2:
        return np.int64(1)
    if u <= 0.0:
        u = _TINY_U
    x = b / (u * (b - 1) + 1.0)
    if x >= b - 1:
        return np.int64(b - 1)
    if x < 1.0:
        return np.int64(1)
    return np.int64(x)


@numba.njit(cache=True, nogil=True)
def _draw_v(rng):
    return v_from_uniform(rng.random())


@numba.njit(cache=True, nogil=True)
def _draw_jump(rng, b):
    return jump_from_uniform(rng.random(), b)


def sample_v(rng: np.random.Generator) -> int:
    """One draw of V with ``P(V = k) = 1/(k(k+1))``."""
    return int(_draw_v(rng))


def jump_pmf(b: int, l: int) -> float:
    """``P(U = l | X = b) = b / ((b-1) l (l+1))`` for ``1 <= l <= b-1``."""
    if b < 2 or l < 1 or l > b - 1:
        raise DomainError(f"jump_pmf needs 2 <= b and 1 <= l <= b-1, got b={b}, l={l}")
    return b / ((b - 1) * l * (l + 1))


def jump_pmf_vector(b: int) -> np.ndarray:
    """Array ``p`` with ``p[l-1] = jump_pmf(b, l)`` for ``l = 1..b-1``."""
    if b < 2:
        raise DomainError(f"jump_pmf_vector needs b >= 2, got {b}")
    l = np.arange(1, b, dtype=np.float64)
    return b / ((b - 1) * l * (l + 1.0))


def sample_jump(rng: np.random.Generator, b: int) -> int:
    if b < 2:
        raise DomainError(f"sample_jump needs b >= 2, got {b}")
    return int(_draw_jump(rng, b))


@dataclass(frozen=True)
class BlockPath:
    """A realised path ``X_0 = n > X_1 > ... > X_tau = 1``."""

    n: int
    jumps: np.ndarray
    states: np.ndarray

    @property
    def tau(self) -> int:
        return len(self.jumps)

    def validate(self) -> None:
        s = self.states
        if s[0] != self.n or s[-1] != 1 or len(s) != self.tau + 1:
            raise DomainError("path must run from n down to 1")
        if np.any(self.jumps < 1) or np.any(self.jumps > s[:-1] - 1):
            raise DomainError("jump out of range")
        if not np.array_equal(s[1:], s[:-1] - self.jumps):
            raise DomainError("states inconsistent with jumps")

    @classmethod
    def from_states(cls, states) -> BlockPath:
        s = np.asarray(states, dtype=np.int64)
        path = cls(n=int(s[0]), jumps=s[:-1] - s[1:], states=s)
        path.validate()
        return path


@dataclass(frozen=True)
class CouplingTrace:
    """Raw walk behind a coupled path.

    ``rho`` holds 1-based indices of accepted draws.  ``sigma`` is the index
    of the first rejected draw, which is also the first time the raw walk
    reaches ``n``; it equals ``tau + 1`` when every draw up to absorption
    was accepted.
    """

    v_draws: np.ndarray
    rho: np.ndarray
    sigma: int
    partial_sums: np.ndarray | None = field(default=None)


@numba.njit(cache=True, nogil=True)
def _direct_jumps(rng, n, out):
    b = n
    k = 0
    while b > 1:
        l = _draw_jump(rng, b)
        out[k] = l
        b -= l
        k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _coupling_draws(rng, n):
    cap = 2 * n + 16
    v = np.empty(cap, dtype=np.int64)
    acc = np.empty(cap, dtype=np.bool_)
    m = 0
    total = 0
    while total < n - 1:
        if m == cap:
            cap *= 2
            v2 = np.empty(cap, dtype=np.int64)
            a2 = np.empty(cap, dtype=np.bool_)
            v2[:m] = v[:m]
            a2[:m] = acc[:m]
            v = v2
            acc = a2
        x = _draw_v(rng)
        v[m] = x
        ok = total + x < n
        acc[m] = ok
        if ok:
            total += x
        m += 1
    return v[:m], acc[:m]


def simulate_block_path(rng: np.random.Generator, n: int) -> BlockPath:
    """Sample the block-counting chain from ``n`` blocks by direct jump draws."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    buf = np.empty(max(n - 1, 1), dtype=np.int64)
    tau = _direct_jumps(rng, n, buf)
    jumps = buf[:tau].copy()
    states = np.empty(tau + 1, dtype=np.int64)
    states[0] = n
    states[1:] = n - np.cumsum(jumps)
    return BlockPath(n=n, jumps=jumps, states=states)


def coupling_path(
    rng: np.random.Generator, n: int, *, record_walk: bool = False
) -> tuple[BlockPath, CouplingTrace]:
    """Sample the chain through the random-walk coupling.

    Draws stop as soon as the accepted total reaches ``n - 1``.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    v, acc = _coupling_draws(rng, n)
    rho = np.flatnonzero(acc) + 1
    jumps = v[acc]
    states = np.empty(len(jumps) + 1, dtype=np.int64)
    states[0] = n
    states[1:] = n - np.cumsum(jumps)
    rejected = np.flatnonzero(~acc)
    sigma = int(rejected[0]) + 1 if len(rejected) else len(jumps) + 1
    sums = np.cumsum(v.astype(np.float64)) if record_walk else None
    trace = CouplingTrace(v_draws=v, rho=rho, sigma=sigma, partial_sums=sums)
    return BlockPath(n=n, jumps=jumps, states=states), trace


def theta_offset(n: int, gamma: float) -> int:
    """``floor(n / (log n)^(1+gamma))``; zero for ``gamma = inf``."""
    if math.isinf(gamma):
        return 0
    if n < 2:
        return 0
    return int(math.floor(n / math.log(n) ** (1.0 + gamma)))


@dataclass(frozen=True)
class StoppingTimes:
    theta_gamma: int
    eta: int
    gamma: float
    c: float
    degenerate: bool = False


def stopping_times(path: BlockPath, gamma: float, c: float = 1.0) -> StoppingTimes:
    """``theta = tau - floor(n/(log n)^(1+gamma))`` clamped at 0, and ``eta``,
    the first index with ``X_k < c n / (log n)^gamma``.

    For ``n <= 2`` the thresholds are meaningless; clamped values are
    returned with ``degenerate=True``.  ``eta`` falls back to ``tau`` when the
    threshold is never crossed, also flagged degenerate.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if not c > 0:
        raise DomainError(f"c must be positive, got {c}")
    n, tau = path.n, path.tau
    if n <= 2:
        theta = tau if math.isinf(gamma) else 0
        return StoppingTimes(theta, 0 if n == 1 else tau, gamma, c, degenerate=True)
    theta = max(0, tau - theta_offset(n, gamma))
    if math.isinf(gamma):
        threshold = 0.0
    else:
        threshold = c * n / math.log(n) ** gamma
    below = np.flatnonzero(path.states < threshold)
    if len(below):
        return StoppingTimes(theta, int(below[0]), gamma, c)
    return StoppingTimes(theta, tau, gamma, c, degenerate=True)


# Bins for the grouped walk sampler; values above are drawn one by one.
_WALK_BINS = 1024


def walk_sum(rng: np.random.Generator, m: int, *, method: str = "grouped") -> float:
    """``S_m = V_1 + ... + V_m``.

    ``grouped`` draws the multinomial counts of ``V = 1..K`` and then the
    ``V > K`` values individually from ``P(V >= k | V > K) = (K+1)/k``;
    the law is the same as ``direct`` at a fraction of the draws.
    """
    if m < 0:
        raise DomainError(f"m must be >= 0, got {m}")
    if m == 0:
        return 0.0
    if method == "direct":
        u = rng.random(m)
        u[u == 0.0] = _TINY_U
        return float(np.minimum(np.floor(1.0 / u), V_CAP).sum())
    if method != "grouped":
        raise DomainError(f"unknown method {method!r}")
    k = np.arange(1, _WALK_BINS + 1, dtype=np.float64)
    pvals = np.append(1.0 / (k * (k + 1.0)), 1.0 / (_WALK_BINS + 1.0))
    counts = rng.multinomial(m, pvals)
    small = float(np.dot(k, counts[:-1]))
    u = 1.0 - rng.random(counts[-1])
    big = np.minimum(np.floor((_WALK_BINS + 1.0) / u), V_CAP)
    return small + float(big.sum())


def walk_marginal(rng: np.random.Generator, n: int, t: float) -> float:
    """``(S_floor(nt) - floor(nt) log n) / n`` for a fresh V-walk."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if not 0.0 < t <= 1.0:
        raise DomainError(f"t must lie in (0, 1], got {t}")
    m = int(math.floor(n * t))
    if m == 0:
        return 0.0
    return (walk_sum(rng, m) - m * math.log(n)) / n
