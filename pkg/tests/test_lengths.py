import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bscoal.chain import BlockPath, simulate_block_path
from bscoal.errors import DomainError
from bscoal.lengths import (
    F_E, F_I, F_IHAT, F_ITILDE, F_L, F_TAU, _hypergeometric, external_ratio_profile,
    i_hat, i_tilde, sample_external_counts, sample_hypergeometric, sample_mutations,
    simulate_lengths, simulate_lengths_batch,
)
from bscoal.oracle import oracle_table


@given(st.integers(1, 2000), st.integers(0, 2**32), st.booleans())
def test_trace_identities(n, seed, coupling):
    s = simulate_lengths(np.random.default_rng(seed), n, mu=1.0, trace=True,
                         coupling=coupling)
    tr = s.trace
    assert s.L == pytest.approx(s.I + s.E, rel=1e-9, abs=1e-300)
    assert np.array_equal(tr.external + tr.internal, tr.states)
    assert tr.states[0] == n and tr.external[0] == n and tr.states[-1] == 1
    assert np.all(np.diff(tr.external) <= 0)
    assert np.all(tr.external >= 0)
    p = s.path()
    assert p.jumps.sum() == n - 1
    # lengths reassemble from the trace
    x, h = tr.states[:-1], tr.holds
    assert s.L == pytest.approx(np.sum(x * h), rel=1e-9, abs=1e-12)
    assert s.E == pytest.approx(np.sum(tr.external[:-1] * h), rel=1e-9, abs=1e-12)
    assert s.I_tilde == pytest.approx(i_tilde(s), rel=1e-9, abs=1e-12)
    assert s.I_hat == pytest.approx(i_hat(p), rel=1e-9, abs=1e-12)
    assert s.M_I >= 0 and s.M_E >= 0


def test_holding_times_are_exponential_at_rate_b_minus_1(rng):
    # the holding time in state X_k, scaled by X_k - 1, is standard exponential
    scaled = []
    for _ in range(400):
        tr = simulate_lengths(rng, 50, trace=True).trace
        scaled.extend(tr.holds * (tr.states[:-1] - 1))
    assert stats.kstest(scaled, "expon").pvalue > 1e-3


def test_n2_and_n1():
    rng = np.random.default_rng(0)
    s = simulate_lengths(rng, 2)
    assert s.tau == 1 and s.I == 0 and s.E == s.L and s.I_hat == 0
    s1 = simulate_lengths(rng, 1, mu=2.0)
    assert s1.tau == 0 and s1.L == 0 and s1.M_I == 0 and s1.M_E == 0


def test_errors(rng):
    with pytest.raises(DomainError):
        simulate_lengths(rng, 0)
    with pytest.raises(DomainError):
        simulate_lengths(rng, 5, mu=-1)
    with pytest.raises(DomainError):
        i_tilde(simulate_lengths(rng, 5))
    with pytest.raises(DomainError):
        simulate_lengths(rng, 5).path()
    with pytest.raises(DomainError):
        sample_mutations(rng, -1.0, 1.0, 1.0)


def test_no_mutations_without_mu(rng):
    s = simulate_lengths(rng, 10)
    assert s.M_I is None and s.M_E is None


def test_batch_matches_single_stream():
    a = simulate_lengths_batch(np.random.default_rng(9), 30, 5, mu=1.0)
    rng = np.random.default_rng(9)
    for row in a:
        s = simulate_lengths(rng, 30, mu=1.0)
        assert (row[F_TAU], row[F_L], row[F_I], row[F_E]) == (s.tau, s.L, s.I, s.E)
        assert (row[F_IHAT], row[F_ITILDE]) == (s.I_hat, s.I_tilde)


@pytest.mark.parametrize("coupling", [False, True])
def test_small_n_means_match_oracle(coupling):
    n, reps = 6, 200_000
    out = simulate_lengths_batch(np.random.default_rng(5), n, reps, coupling=coupling)
    o = oracle_table(n)
    for col, exact in ((F_L, o.expected_L), (F_E, o.expected_E), (F_I, o.expected_I),
                       (F_TAU, o.expected_tau)):
        x = out[:, col]
        assert abs(x.mean() - exact) < 4.5 * x.std() / math.sqrt(reps)


def test_i_hat_is_conditional_mean_of_i_tilde():
    # given the path, E[Y_k / X_k] = 1 - prod (1 - 1/X_i)
    rng = np.random.default_rng(3)
    path = simulate_block_path(rng, 400)
    x = path.states[1:-1]
    reps = 3000
    acc = np.zeros(len(x))
    for _ in range(reps):
        z = sample_external_counts(rng, path)[1:-1]
        acc += (x - z) / x
    emp = acc / reps
    exact = 1 - external_ratio_profile(path)
    assert np.max(np.abs(emp - exact)) < 0.03
    assert i_hat(path) == pytest.approx(exact.sum())


def test_external_ratio_profile_by_hand():
    p = BlockPath.from_states([6, 4, 2, 1])
    prof = external_ratio_profile(p)
    assert prof == pytest.approx([3 / 4, 3 / 8])
    assert i_hat(p) == pytest.approx(1 / 4 + 5 / 8)


@given(st.integers(0, 60), st.data())
def test_hypergeometric_support(N, data):
    K = data.draw(st.integers(0, N))
    m = data.draw(st.integers(0, N))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32)))
    h = sample_hypergeometric(rng, N, K, m)
    assert max(0, m - (N - K)) <= h <= min(m, K)


@pytest.mark.parametrize("N,K,m", [(10, 4, 3), (50, 30, 12), (200, 150, 90), (1000, 7, 600),
                                   (10**6, 5 * 10**5, 40)])
def test_hypergeometric_law(N, K, m):
    # urn draws, complement and inversion branches all reproduce the pmf
    rng = np.random.default_rng(N + K + m)
    reps = 40_000
    draws = np.array([_hypergeometric(rng, N, K, m) for _ in range(reps)])
    lo, hi = max(0, m - (N - K)), min(m, K)
    support = np.arange(lo, hi + 1)
    pmf = stats.hypergeom(N, K, m).pmf(support)
    emp = np.bincount(draws - lo, minlength=len(support)) / reps
    assert 0.5 * np.abs(emp - pmf).sum() < 0.02


def test_hypergeometric_rejects_bad_arguments(rng):
    with pytest.raises(DomainError):
        sample_hypergeometric(rng, 5, 6, 1)
    with pytest.raises(DomainError):
        sample_hypergeometric(rng, 5, 2, 7)


def test_mutation_counts_are_poisson(rng):
    m = [sample_mutations(rng, 2.0, 3.0, 1.5) for _ in range(20_000)]
    mi = np.array([x.M_I for x in m])
    me = np.array([x.M_E for x in m])
    assert mi.mean() == pytest.approx(3.0, abs=0.06)
    assert me.mean() == pytest.approx(4.5, abs=0.08)
    assert mi.var() == pytest.approx(3.0, rel=0.05)
    assert m[0].M_total == m[0].M_I + m[0].M_E


def test_mutations_scale_with_length():
    out = simulate_lengths_batch(np.random.default_rng(2), 40, 20_000, mu=2.0)
    from bscoal.lengths import F_ME, F_MI
    ratio_i = out[:, F_MI].sum() / out[:, F_I].sum()
    ratio_e = out[:, F_ME].sum() / out[:, F_E].sum()
    assert ratio_i == pytest.approx(2.0, rel=0.03)
    assert ratio_e == pytest.approx(2.0, rel=0.02)


def test_same_seed_same_summary():
    a = simulate_lengths(np.random.default_rng(4), 500, mu=1.0)
    b = simulate_lengths(np.random.default_rng(4), 500, mu=1.0)
    assert a == b
