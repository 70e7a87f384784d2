"""Branch lengths of the Bolthausen-Sznitman n-coalescent.

Each state ``X_k`` of the jump chain is held for ``e_k / (X_k - 1)`` with
``e_k`` standard exponential.  External blocks (leaves that never merged)
are thinned hypergeometrically at each merger; the merged block is always
internal.  Lengths accrue as ``L += X_k h``, ``E += Z_k h``, ``I += Y_k h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from bscoal.chain import BlockPath, _draw_jump, _draw_v
from bscoal.errors import DomainError, InvariantError

# Below this many draws the urn is emptied one ball at a time.
URN_DRAWS_MAX = 16

# Layout of the per-replica result vector produced by `_replica`.
F_TAU, F_L, F_I, F_E, F_IHAT, F_ITILDE, F_MI, F_ME, F_SIGMA, F_DRAWS = range(10)
N_FIELDS = 10

# Kernel status codes.
OK, BAD_THINNING, BAD_INTERNAL, BAD_LENGTH, BAD_TOTAL = range(5)
_STATUS_TEXT = {
    BAD_THINNING: "hypergeometric draw outside its support",
    BAD_INTERNAL: "Y_k < 1 before absorption",
    BAD_LENGTH: "L != I + E beyond relative 1e-9",
    BAD_TOTAL: "jump sizes do not sum to n - 1",
}


@numba.njit(cache=True, nogil=True)
def _hyp_log_pmf(N, K, m, j):
    return (
        math.lgamma(K + 1) - math.lgamma(j + 1) - math.lgamma(K - j + 1)
        + math.lgamma(N - K + 1) - math.lgamma(m - j + 1)
        - math.lgamma(N - K - m + j + 1)
        - math.lgamma(N + 1) + math.lgamma(m + 1) + math.lgamma(N - m + 1)
    )


@numba.njit(cache=True, nogil=True)
def _hypergeometric(rng, N, K, m):
    if K == 0 or m == 0:
        return np.int64(0)
    if K == N:
        return np.int64(m)
    if m == N:
        return np.int64(K)
    if 2 * m > N:
        return K - _hypergeometric(rng, N, K, N - m)
    if m <= URN_DRAWS_MAX:
        left = N
        marked = K
        h = 0
        for _ in range(m):
            if rng.random() * left < marked:
                h += 1
                marked -= 1
            left -= 1
        return np.int64(h)
    lo = max(0, m - (N - K))
    hi = min(m, K)
    mode = int((m + 1.0) * (K + 1.0) / (N + 2.0))
    if mode < lo:
        mode = lo
    if mode > hi:
        mode = hi
    p_mode = math.exp(_hyp_log_pmf(N, K, m, mode))
    u = rng.random() - p_mode
    if u < 0.0:
        return np.int64(mode)
    # walk outwards from the mode, alternating sides
    pd = p_mode
    pu = p_mode
    d = mode
    up = mode
    while d > lo or up < hi:
        if up < hi:
            pu *= (K - up) * (m - up) / ((up + 1.0) * (N - K - m + up + 1.0))
            up += 1
            u -= pu
            if u < 0.0:
                return np.int64(up)
        if d > lo:
            pd *= d * (N - K - m + d) / ((K - d + 1.0) * (m - d + 1.0))
            d -= 1
            u -= pd
            if u < 0.0:
                return np.int64(d)
    return np.int64(mode)


@numba.njit(cache=True, nogil=True)
def _replica(rng, n, coupling, mu, offsets, ring, out, x_theta,
             tr_states, tr_ext, tr_hold, trace):
    """Run one replica; fills ``out`` (see F_* layout) and ``x_theta``.

    ``ring`` keeps the last ``len(ring)`` states so that ``X_theta`` with
    ``theta = tau - offsets[j]`` can be read back at absorption.
    """
    R = ring.shape[0]
    b = n
    z = n
    k = 0
    total_length = 0.0
    internal = 0.0
    external = 0.0
    prod = 1.0
    i_hat = 0.0
    i_tilde = 0.0
    draws = 0
    sigma = 0
    lost = 0
    ring[0] = n
    if trace:
        tr_states[0] = n
        tr_ext[0] = n
    status = OK
    while b > 1:
        u = rng.random()
        hold = -math.log(1.0 - u) / (b - 1)
        total_length += b * hold
        external += z * hold
        internal += (b - z) * hold
        if trace:
            tr_hold[k] = hold
        if coupling:
            while True:
                v = _draw_v(rng)
                draws += 1
                if v < b:
                    l = v
                    break
                if sigma == 0:
                    sigma = draws
        else:
            l = _draw_jump(rng, b)
            draws += 1
        h = _hypergeometric(rng, b, z, l + 1)
        if h < 0 or h > z or h > l + 1:
            status = BAD_THINNING
        b -= l
        z -= h
        lost += l
        k += 1
        ring[k % R] = b
        if trace:
            tr_states[k] = b
            tr_ext[k] = z
        if b > 1:
            y = b - z
            if y < 1:
                status = BAD_INTERNAL
            prod *= 1.0 - 1.0 / b
            i_hat += 1.0 - prod
            i_tilde += y / b
    tau = k
    if lost != n - 1:
        status = BAD_TOTAL
    if abs(total_length - (internal + external)) > 1e-9 * total_length:
        status = BAD_LENGTH
    if sigma == 0:
        sigma = tau + 1
    out[F_TAU] = tau
    out[F_L] = total_length
    out[F_I] = internal
    out[F_E] = external
    out[F_IHAT] = i_hat
    out[F_ITILDE] = i_tilde
    if mu >= 0.0:
        out[F_MI] = rng.poisson(mu * internal)
        out[F_ME] = rng.poisson(mu * external)
    else:
        out[F_MI] = np.nan
        out[F_ME] = np.nan
    out[F_SIGMA] = sigma if coupling else np.nan
    out[F_DRAWS] = draws
    for j in range(offsets.shape[0]):
        theta = tau - offsets[j]
        if theta < 0:
            theta = 0
        x_theta[j] = ring[theta % R]
    return status


@numba.njit(cache=True, nogil=True)
def _replica_batch(rng, n, reps, coupling, mu, offsets, ring, out, x_theta):
    dummy_i = np.empty(0, dtype=np.int64)
    dummy_f = np.empty(0, dtype=np.float64)
    for r in range(reps):
        status = _replica(rng, n, coupling, mu, offsets, ring, out[r], x_theta[r],
                          dummy_i, dummy_i, dummy_f, False)
        if status != OK:
            return status, r
    return OK, reps


def check_status(status: int, n: int, where: str = "") -> None:
    if status != OK:
        raise InvariantError(f"n={n}{where}: {_STATUS_TEXT[status]}")


def ring_size(n: int, offsets: np.ndarray) -> int:
    if len(offsets) == 0:
        return 1
    return int(min(max(offsets.max(), 0) + 1, n + 1))


def sample_hypergeometric(rng: np.random.Generator, population: int, marked: int, draws: int) -> int:
    """Number of marked items among ``draws`` taken without replacement."""
    if not (0 <= marked <= population and 0 <= draws <= population):
        raise DomainError(
            f"need 0 <= marked, draws <= population; got N={population}, K={marked}, m={draws}"
        )
    return int(_hypergeometric(rng, population, marked, draws))


@dataclass(frozen=True)
class LengthTrace:
    """Per-event record: ``states[k] = X_k``, ``external[k] = Z_k`` for
    ``k = 0..tau`` and ``holds[k]`` the time spent in ``X_k``."""

    states: np.ndarray
    external: np.ndarray
    holds: np.ndarray

    @property
    def internal(self) -> np.ndarray:
        return self.states - self.external


@dataclass(frozen=True)
class MutationCounts:
    mu: float
    M_I: int
    M_E: int

    @property
    def M_total(self) -> int:
        return self.M_I + self.M_E


@dataclass(frozen=True)
class LengthSummary:
    n: int
    tau: int
    L: float
    I: float
    E: float
    I_hat: float
    I_tilde: float
    M_I: int | None = None
    M_E: int | None = None
    trace: LengthTrace | None = None

    def path(self) -> BlockPath:
        if self.trace is None:
            raise DomainError("summary carries no trace")
        return BlockPath.from_states(self.trace.states)


def simulate_lengths(
    rng: np.random.Generator,
    n: int,
    mu: float | None = None,
    trace: bool = False,
    *,
    coupling: bool = False,
) -> LengthSummary:
    """Simulate one n-coalescent and return its branch-length functionals.

    With ``mu`` given, internal and external mutation counts are Poisson
    with means ``mu * I`` and ``mu * E``.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if mu is not None and mu < 0:
        raise DomainError(f"mu must be >= 0, got {mu}")
    out = np.empty(N_FIELDS)
    offsets = np.empty(0, dtype=np.int64)
    x_theta = np.empty(0, dtype=np.int64)
    ring = np.empty(1, dtype=np.int64)
    size = n + 1 if trace else 0
    tr_states = np.empty(size, dtype=np.int64)
    tr_ext = np.empty(size, dtype=np.int64)
    tr_hold = np.empty(max(size - 1, 0), dtype=np.float64)
    status = _replica(rng, n, coupling, -1.0 if mu is None else float(mu), offsets, ring,
                      out, x_theta, tr_states, tr_ext, tr_hold, trace)
    check_status(status, n)
    tau = int(out[F_TAU])
    tr = None
    if trace:
        tr = LengthTrace(tr_states[: tau + 1].copy(), tr_ext[: tau + 1].copy(),
                         tr_hold[:tau].copy())
    m_i = m_e = None
    if mu is not None:
        m_i, m_e = int(out[F_MI]), int(out[F_ME])
    return LengthSummary(
        n=n, tau=tau, L=float(out[F_L]), I=float(out[F_I]), E=float(out[F_E]),
        I_hat=float(out[F_IHAT]), I_tilde=float(out[F_ITILDE]), M_I=m_i, M_E=m_e, trace=tr,
    )


def simulate_lengths_batch(
    rng: np.random.Generator,
    n: int,
    replicas: int,
    mu: float | None = None,
    *,
    coupling: bool = False,
) -> np.ndarray:
    """Many replicas from one stream; rows follow the ``F_*`` field layout."""
    if n < 1 or replicas < 1:
        raise DomainError("n and replicas must be >= 1")
    out = np.empty((replicas, N_FIELDS))
    x_theta = np.empty((replicas, 0), dtype=np.int64)
    status, r = _replica_batch(rng, n, replicas, coupling, -1.0 if mu is None else float(mu),
                               np.empty(0, dtype=np.int64), np.empty(1, dtype=np.int64),
                               out, x_theta)
    check_status(status, n, f", replica {r}")
    return out


def external_ratio_profile(path: BlockPath) -> np.ndarray:
    """``prod_{i<=k} (1 - 1/X_i)`` for ``k = 1..tau-1``: the conditional mean
    of ``Z_k / X_k`` given the block path."""
    x = path.states[1:-1].astype(np.float64)
    return np.cumprod(1.0 - 1.0 / x)


def i_hat(path: BlockPath) -> float:
    """``sum_{k=1}^{tau-1} (1 - prod_{i<=k} (1 - 1/X_i))``."""
    return float(np.sum(1.0 - external_ratio_profile(path)))


def i_tilde(summary: LengthSummary) -> float:
    """``sum_{k=1}^{tau-1} Y_k / X_k`` from the per-event trace."""
    if summary.trace is None:
        raise DomainError("i_tilde needs a summary simulated with trace=True")
    tr = summary.trace
    x = tr.states[1:-1].astype(np.float64)
    y = tr.internal[1:-1]
    return float(np.sum(y / x))


@numba.njit(cache=True, nogil=True)
def _thin(rng, states, jumps, ext):
    z = states[0]
    ext[0] = z
    for k in range(jumps.shape[0]):
        z -= _hypergeometric(rng, states[k], z, jumps[k] + 1)
        ext[k + 1] = z


def sample_external_counts(rng: np.random.Generator, path: BlockPath) -> np.ndarray:
    """Resample ``Z_0..Z_tau`` by hypergeometric thinning along a fixed path."""
    ext = np.empty(path.tau + 1, dtype=np.int64)
    _thin(rng, path.states, path.jumps, ext)
    return ext


def sample_mutations(rng: np.random.Generator, I: float, E: float, mu: float) -> MutationCounts:
    """Poisson mutation counts on internal and external branches."""
    if I < 0 or E < 0 or mu < 0:
        raise DomainError(f"lengths and mu must be >= 0, got I={I}, E={E}, mu={mu}")
    return MutationCounts(mu=mu, M_I=int(rng.poisson(mu * I)), M_E=int(rng.poisson(mu * E)))
