"""Monte Carlo harness for the limit theorems of the n-coalescent.

Every replica draws from its own stream, seeded by a SplitMix64 mix of
``(master_seed, n, replica)``.  Output therefore depends only on the config
and not on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from bscoal import __version__
from bscoal.chain import theta_offset
from bscoal.errors import DataError, DomainError
from bscoal.lengths import (
    F_E, F_I, F_IHAT, F_ITILDE, F_L, F_ME, F_MI, F_SIGMA, F_TAU, N_FIELDS,
    LengthSummary, _replica, check_status, ring_size,
)
from bscoal.stable import default_law

CSV_HEADER = ("n", "replica", "seed", "tau", "L", "I", "E", "I_hat", "I_tilde",
              "cL", "cI", "cE", "cTau", "M_I", "M_E")

DEFAULT_GRID = (10**3, 10**4, 10**5, 10**6)
DEFAULT_REPLICAS = 1000
# trend verdicts are not evaluated on grids starting below this n
MIN_TREND_N = 100
THREADS_ENV = "BS_COALESCENT_THREADS"


@dataclass
class ExperimentConfig:
    n_values: list[int] = field(default_factory=lambda: list(DEFAULT_GRID))
    replicas: int = DEFAULT_REPLICAS
    master_seed: int = 0
    mu: float | None = None
    gamma_values: list[float] = field(default_factory=lambda: [0.5])
    output: str | None = None
    report: str | None = None
    format: str = "csv"
    threads: int = 1
    slack: float = 0.1

    def __post_init__(self):
        self.n_values = [int(n) for n in self.n_values]
        self.gamma_values = [float(g) for g in self.gamma_values]
        if not self.n_values:
            raise DomainError("n_values must be non-empty")
        if any(n < 1 for n in self.n_values):
            raise DomainError("every n must be >= 1")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if self.mu is not None and self.mu < 0:
            raise DomainError("mu must be >= 0")
        if any(not g > 0 for g in self.gamma_values):
            raise DomainError("gamma values must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise DomainError("master_seed must fit in 64 unsigned bits")
        if self.format != "csv":
            raise DomainError(f"unsupported output format {self.format!r}")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


_MASK = (1 << 64) - 1


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seeds(master_seed: int, n: int, replicas: Sequence[int] | np.ndarray) -> np.ndarray:
    """64-bit per-replica seeds from ``(master_seed, n, replica)``."""
    idx = np.asarray(replicas, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.array([master_seed & _MASK], dtype=np.uint64))
        h = _splitmix64(h ^ np.uint64(n & _MASK))
        return _splitmix64(h ^ idx)


def replica_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class CenteredStats:
    cL: float
    cI: float
    cE: float
    cTau: float


def centered_columns(n: int, tau, L, I, E):
    """Centred and rescaled statistics; works on scalars or arrays."""
    if n < 3:
        raise DomainError(f"centred statistics need n >= 3, got {n}")
    ln = math.log(n)
    a = ln * ln / n
    shift = ln + math.log(ln)
    return (a * np.asarray(L) - shift, a * np.asarray(I), a * np.asarray(E) - shift,
            a * np.asarray(tau) - shift)


def centered_stats(summary: LengthSummary) -> CenteredStats:
    cL, cI, cE, cTau = centered_columns(summary.n, summary.tau, summary.L, summary.I, summary.E)
    return CenteredStats(float(cL), float(cI), float(cE), float(cTau))


@dataclass(frozen=True)
class ReplicaRecord:
    n: int
    replica: int
    seed: int
    tau: int
    L: float
    I: float
    E: float
    I_hat: float
    I_tilde: float
    cL: float | None
    cI: float | None
    cE: float | None
    cTau: float | None
    M_I: int | None
    M_E: int | None
    sigma: int
    theta: tuple[int, ...]
    x_theta: tuple[int, ...]


@dataclass
class ReplicaTable:
    """Column store for all replicas at one ``n``."""

    n: int
    gamma_values: list[float]
    seeds: np.ndarray
    values: np.ndarray  # (replicas, N_FIELDS) in the F_* layout
    x_theta: np.ndarray  # (replicas, len(gamma_values))
    offsets: np.ndarray
    mu: float | None = None

    def __len__(self) -> int:
        return len(self.seeds)

    def column(self, name: str) -> np.ndarray:
        idx = {"tau": F_TAU, "L": F_L, "I": F_I, "E": F_E, "I_hat": F_IHAT,
               "I_tilde": F_ITILDE, "M_I": F_MI, "M_E": F_ME, "sigma": F_SIGMA}[name]
        return self.values[:, idx]

    @property
    def has_centered(self) -> bool:
        return self.n >= 3

    def centered(self):
        return centered_columns(self.n, self.column("tau"), self.column("L"),
                                self.column("I"), self.column("E"))

    def theta(self) -> np.ndarray:
        return np.maximum(self.column("tau")[:, None] - self.offsets[None, :], 0).astype(np.int64)

    def records(self) -> Iterator[ReplicaRecord]:
        cen = self.centered() if self.has_centered else None
        th = self.theta()
        for i in range(len(self)):
            row = self.values[i]
            mi, me = row[F_MI], row[F_ME]
            c = [float(col[i]) for col in cen] if cen is not None else [None] * 4
            yield ReplicaRecord(
                n=self.n, replica=i, seed=int(self.seeds[i]), tau=int(row[F_TAU]),
                L=float(row[F_L]), I=float(row[F_I]), E=float(row[F_E]),
                I_hat=float(row[F_IHAT]), I_tilde=float(row[F_ITILDE]),
                cL=c[0], cI=c[1], cE=c[2], cTau=c[3],
                M_I=None if math.isnan(mi) else int(mi),
                M_E=None if math.isnan(me) else int(me),
                sigma=int(row[F_SIGMA]),
                theta=tuple(int(t) for t in th[i]),
                x_theta=tuple(int(x) for x in self.x_theta[i]),
            )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    tables: dict[int, ReplicaTable]


def _run_chunk(n, seeds, mu, offsets, values, x_theta, start, stop):
    ring = np.empty(ring_size(n, offsets), dtype=np.int64)
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty(0, dtype=np.float64)
    for i in range(start, stop):
        status = _replica(replica_rng(seeds[i]), n, True, mu, offsets, ring, values[i],
                          x_theta[i], empty_i, empty_i, empty_f, False)
        check_status(status, n, f", replica {i}")


def resolve_threads(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def simulate_table(n: int, replicas: int, master_seed: int, mu: float | None = None,
                   gamma_values: Sequence[float] = (0.5,), threads: int = 1) -> ReplicaTable:
    """All replicas at one ``n``, through the coupled chain (so ``sigma`` is
    recorded).  Rows are in replica order whatever the thread count."""
    seeds = derive_seeds(master_seed, n, np.arange(replicas))
    offsets = np.array([theta_offset(n, g) for g in gamma_values], dtype=np.int64)
    values = np.empty((replicas, N_FIELDS))
    x_theta = np.empty((replicas, len(offsets)), dtype=np.int64)
    mu_arg = -1.0 if mu is None else float(mu)
    if threads <= 1 or replicas < 2 * threads:
        _run_chunk(n, seeds, mu_arg, offsets, values, x_theta, 0, replicas)
    else:
        bounds = np.linspace(0, replicas, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_chunk, n, seeds, mu_arg, offsets, values, x_theta,
                                   int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
            for f in futures:
                f.result()
    return ReplicaTable(n=n, gamma_values=list(gamma_values), seeds=seeds, values=values,
                        x_theta=x_theta, offsets=offsets, mu=mu)


def run_experiment(config: ExperimentConfig,
                   progress: Callable[[int], None] | None = None) -> ExperimentResult:
    tables = {}
    for n in config.n_values:
        if progress is not None:
            progress(n)
        tables[n] = simulate_table(n, config.replicas, config.master_seed, config.mu,
                                   config.gamma_values, config.threads)
    return ExperimentResult(config=config, tables=tables)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def write_csv(result: ExperimentResult | Sequence[ReplicaTable], fh) -> None:
    """CSV with the fixed header; '.' decimals, LF endings, 17 significant digits."""
    tables = result.tables.values() if isinstance(result, ExperimentResult) else result
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for table in tables:
        for r in table.records():
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])


def csv_text(result) -> str:
    buf = io.StringIO()
    write_csv(result, buf)
    return buf.getvalue()


def save_csv(result, path: str | os.PathLike) -> None:
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            write_csv(result, fh)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc.strerror}") from exc


def ks_distance(samples, cdf: Callable) -> float:
    """One-sample Kolmogorov-Smirnov statistic ``sup |F_N - F|``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    N = len(x)
    if N < 2:
        raise DomainError("ks_distance needs at least 2 samples")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def trend_verdict(deviations: Sequence[float], slack: float = 0.1) -> bool:
    """True when each deviation is at most ``(1 + slack)`` times the one
    before and the last is below the first."""
    d = [float(v) for v in deviations]
    if len(d) < 2 or any(math.isnan(v) for v in d):
        return False
    steps = all(b <= (1.0 + slack) * a for a, b in zip(d, d[1:]))
    return steps and d[-1] < d[0]


def _iqr(x) -> list[float]:
    q1, q3 = np.percentile(x, [25, 75])
    return [float(q1), float(q3)]


def summarize_table(table: ReplicaTable, law=None) -> dict:
    """Per-n summary statistics for the convergence report."""
    if not table.has_centered:
        raise DataError(f"n={table.n}: centred statistics need n >= 3")
    law = law or default_law()
    n = table.n
    ln = math.log(n)
    a = ln * ln / n
    cL, cI, cE, cTau = table.centered()
    L, I, E = table.column("L"), table.column("I"), table.column("E")
    out = {
        "n": n,
        "replicas": len(table),
        "median_cI": float(np.median(cI)), "iqr_cI": _iqr(cI),
        "median_cE": float(np.median(cE)), "iqr_cE": _iqr(cE),
        "median_cL": float(np.median(cL)), "iqr_cL": _iqr(cL),
        "median_cTau": float(np.median(cTau)), "iqr_cTau": _iqr(cTau),
        "median_E_over_L": float(np.median(E / L)),
        "ks_cTau": ks_distance(cTau, law.cdf),
        "ks_cL": ks_distance(cL, law.cdf),
        "ks_cE": ks_distance(cE, lambda x: law.cdf(x + 1.0)),
        "mean_abs_I_minus_I_hat_scaled": float(np.mean(np.abs(I - table.column("I_hat"))) * a),
    }
    out["mu"] = table.mu
    if table.mu is not None and table.mu > 0:
        out["mutation_internal_ratio"] = float(np.mean(table.column("M_I")) * a / table.mu)
    theta = table.theta()
    sigma = table.column("sigma")
    diag = {}
    for j, g in enumerate(table.gamma_values):
        diag[str(g)] = {
            "frac_theta_before_sigma": float(np.mean(theta[:, j] < sigma)),
            "median_scaled_x_theta": float(np.median(ln**g * table.x_theta[:, j] / n)),
        }
    out["theta"] = diag
    return out


TREND_RULES = {
    "internal_median": "|median cI - 1| decreasing",
    "ks_tau": "KS(cTau, Z) decreasing",
    "ks_length": "KS(cL, Z) decreasing",
    "ks_external": "KS(cE, Z - 1) decreasing",
    "external_ratio": "1 - median(E/L) decreasing",
    "i_hat_gap": "mean |I - I_hat| (log n)^2/n decreasing",
    "mutation_internal": "|mean(M_I)(log n)^2/(mu n) - 1| decreasing",
    "theta_position": "|median (log n)^g X_theta / n - 1| decreasing",
}


def convergence_report(result: ExperimentResult | dict[int, ReplicaTable],
                       slack: float | None = None, law=None) -> dict:
    """Per-n summaries plus decreasing-deviation verdicts across the n-grid."""
    if isinstance(result, ExperimentResult):
        tables, config = result.tables, result.config
    else:
        tables, config = result, None
    if slack is None:
        slack = config.slack if config is not None else 0.1
    if len(tables) < 2:
        raise DataError("a convergence report needs tables for at least two values of n")
    gammas = {tuple(t.gamma_values) for t in tables.values()}
    if len(gammas) != 1:
        raise DataError("tables disagree on gamma_values")
    mus = {t.mu for t in tables.values()}
    if len(mus) != 1:
        raise DataError("tables disagree on mu")
    mu = mus.pop()
    ns = sorted(tables)
    guard = None
    if ns[0] < MIN_TREND_N:
        guard = (f"grid starts at n={ns[0]} < {MIN_TREND_N}: too small for asymptotic "
                 f"trends, all verdicts set to false")
    per_n = []
    for n in ns:
        t = tables[n]
        per_n.append(summarize_table(t, law) if t.has_centered else {"n": n, "replicas": len(t)})

    def series(key, f=lambda v: v):
        return [f(p[key]) if key in p else float("nan") for p in per_n]

    devs = {
        "internal_median": series("median_cI", lambda v: abs(v - 1.0)),
        "ks_tau": series("ks_cTau"),
        "ks_length": series("ks_cL"),
        "ks_external": series("ks_cE"),
        "external_ratio": series("median_E_over_L", lambda v: 1.0 - v),
        "i_hat_gap": series("mean_abs_I_minus_I_hat_scaled"),
    }
    if mu is not None and mu > 0:
        devs["mutation_internal"] = series("mutation_internal_ratio", lambda v: abs(v - 1.0))
    for g in next(iter(gammas)):
        devs[f"theta_position[{g}]"] = [
            abs(p["theta"][str(g)]["median_scaled_x_theta"] - 1.0) if "theta" in p
            else float("nan") for p in per_n]
    verdicts = {}
    for name, d in devs.items():
        rule = TREND_RULES[name.split("[")[0]]
        ok = guard is None and trend_verdict(d, slack)
        verdicts[name] = {"pass": ok, "deviations": d, "rule": rule}
    return {
        "version": __version__,
        "config": config.to_dict() if config is not None else None,
        "n_values": ns,
        "slack": slack,
        "per_n": per_n,
        "verdicts": verdicts,
        "all_pass": all(v["pass"] for v in verdicts.values()),
        "guard": guard,
        "note": "trend thresholds and slack are engineering choices; no convergence "
                "rates are known for these statistics",
    }


def save_report(report: dict, path: str | os.PathLike) -> None:
    try:
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
