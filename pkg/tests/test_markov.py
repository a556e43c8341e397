"""Transition-matrix structure, stationary solve, and per-user metrics."""

import numpy as np
import pytest

from noma_harq.fbl import CodeParams
from noma_harq.markov import (
    TransitionMatrix,
    analyze,
    build_transition_matrix,
    delay_pmf,
    max_user_per,
    per_user,
    stationary_distribution,
    success_prob,
    throughput,
    transition_prob,
)
from noma_harq.sic import Phase, SystemConfig, SystemState

CODE = CodeParams(k=25, n=100)
ANCHOR_CFG = SystemConfig(alphas=(0.29, 0.35, 0.36), p0=10 ** (-2.02 / 10), code=CODE)


def random_config(rng, n_max=4):
    n = int(rng.integers(1, n_max + 1))
    raw = rng.uniform(0.2, 1.0, size=n)
    return SystemConfig(alphas=tuple(raw / raw.sum()),
                        p0=float(rng.uniform(0.05, 30.0)), code=CODE)


def single_user_chain(eps1: float, eps2: float) -> TransitionMatrix:
    """Hand-built single-user chain: fresh packets fail with eps1, the
    MRC retransmission with eps2.  State order (S, R, F)."""
    matrix = np.array([
        [1 - eps1, eps1, 0.0],
        [1 - eps2, 0.0, eps2],
        [1 - eps1, eps1, 0.0],
    ])
    return TransitionMatrix(matrix=matrix, n_users=1)


class TestTransitionProb:
    def test_fresh_to_failed_is_zero(self):
        j = SystemState((Phase.S,) * 3)
        j2 = SystemState((Phase.F, Phase.S, Phase.S))
        assert transition_prob(j, j2, ANCHOR_CFG) == 0.0

    def test_retransmit_to_retransmit_is_zero(self):
        j = SystemState((Phase.R, Phase.S, Phase.S))
        j2 = SystemState((Phase.R, Phase.S, Phase.S))
        assert transition_prob(j, j2, ANCHOR_CFG) == 0.0

    def test_success_after_sic_stop_is_zero(self):
        # all fresh: decode order is user3, user2, user1 (descending power);
        # first stage failing while the second succeeds cannot happen
        j = SystemState((Phase.S,) * 3)
        j2 = SystemState((Phase.R, Phase.S, Phase.R))  # user3 fails, user2 ok
        assert transition_prob(j, j2, ANCHOR_CFG) == 0.0

    def test_all_success_product(self):
        from noma_harq.fbl import per_cc
        from noma_harq.sic import decoding_order

        j = SystemState((Phase.S,) * 3)
        dec = decoding_order(j, ANCHOR_CFG)
        expect = 1.0
        for g in dec.stage_sinrs:
            expect *= 1.0 - per_cc(g, CODE)
        assert transition_prob(j, j, ANCHOR_CFG) == pytest.approx(expect, rel=1e-12)

    def test_rows_built_from_transition_prob_match_matrix(self):
        rng = np.random.default_rng(21)
        for _ in range(6):
            cfg = random_config(rng, n_max=3)
            n = cfg.n_users
            m = 3**n
            tm = build_transition_matrix(cfg)
            naive = np.empty((m, m))
            for a in range(m):
                ja = SystemState.from_index(a, n)
                for b in range(m):
                    naive[a, b] = transition_prob(ja, SystemState.from_index(b, n), cfg)
            assert np.allclose(naive, tm.matrix, atol=1e-12)


class TestTransitionMatrix:
    def test_single_user_structure(self):
        tm = build_transition_matrix(SystemConfig(alphas=(1.0,), p0=1.0, code=CODE))
        r_idx = SystemState((Phase.R,)).index
        assert tm.matrix[r_idx, r_idx] == 0.0

    def test_single_user_high_power_stays_successful(self):
        tm = build_transition_matrix(SystemConfig(alphas=(1.0,), p0=1e9, code=CODE))
        s_idx = SystemState((Phase.S,)).index
        assert tm.matrix[s_idx, s_idx] == pytest.approx(1.0, abs=1e-12)

    def test_rows_stochastic_table_config(self):
        tm = build_transition_matrix(ANCHOR_CFG)
        assert np.abs(tm.matrix.sum(axis=1) - 1.0).max() <= 1e-9

    def test_rows_stochastic_randomized(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            tm = build_transition_matrix(random_config(rng, n_max=4))
            assert np.abs(tm.matrix.sum(axis=1) - 1.0).max() <= 1e-9

    def test_structural_zeros_exhaustive(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            cfg = random_config(rng, n_max=3)
            n = cfg.n_users
            tm = build_transition_matrix(cfg)
            for a in range(3**n):
                ja = SystemState.from_index(a, n)
                for b in range(3**n):
                    jb = SystemState.from_index(b, n)
                    for cur, nxt in zip(ja.phases, jb.phases):
                        banned = (cur is not Phase.R and nxt is Phase.F) or (
                            cur is Phase.R and nxt is Phase.R
                        )
                        if banned:
                            assert tm.matrix[a, b] == 0.0
                            break

    def test_user_cap(self):
        raw = np.full(9, 1 / 9)
        cfg = SystemConfig(alphas=tuple(raw), p0=1.0, code=CODE)
        with pytest.raises(ValueError):
            build_transition_matrix(cfg)


class TestStationary:
    def test_high_power_concentrates_on_all_success(self):
        cfg = SystemConfig(alphas=(0.3, 0.7), p0=1e9, code=CODE)
        stat = stationary_distribution(build_transition_matrix(cfg))
        assert stat.probs[0] == pytest.approx(1.0, abs=1e-9)

    def test_single_user_closed_form(self):
        eps1, eps2 = 0.3, 0.1
        stat = stationary_distribution(single_user_chain(eps1, eps2))
        expect = np.array([
            (1 - eps1 * eps2), eps1, eps1 * eps2,
        ]) / (1 + eps1)
        assert np.allclose(stat.probs, expect, atol=1e-12)

    def test_residual_bound(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            tm = build_transition_matrix(random_config(rng, n_max=4))
            p = stationary_distribution(tm).probs
            assert np.abs(tm.matrix.T @ p - p).max() <= 1e-10
            assert abs(p.sum() - 1.0) <= 1e-9
            assert p.min() >= 0.0

    def test_matches_power_iteration(self):
        tm = build_transition_matrix(ANCHOR_CFG)
        p = np.full(tm.dim, 1.0 / tm.dim)
        for _ in range(20000):
            p = tm.matrix.T @ p
        p /= p.sum()
        assert np.allclose(stationary_distribution(tm).probs, p, atol=1e-10)


class TestUserMetrics:
    def test_error_free_chain(self):
        stat = stationary_distribution(single_user_chain(0.0, 0.0))
        tm = single_user_chain(0.0, 0.0)
        assert per_user(0, stat, tm) == 0.0
        assert success_prob(0, stat, tm) == pytest.approx(1.0)

    def test_always_failing_chain(self):
        tm = single_user_chain(1.0, 1.0)
        stat = stationary_distribution(tm)
        # mass alternates between R and F
        assert stat.probs[SystemState((Phase.S,)).index] == pytest.approx(0.0, abs=1e-12)
        assert stat.probs[1] == pytest.approx(0.5, abs=1e-12)
        assert stat.probs[2] == pytest.approx(0.5, abs=1e-12)
        assert per_user(0, stat, tm) >= 0.5
        assert success_prob(0, stat, tm) == 0.0

    def test_single_user_per_closed_form(self):
        eps1, eps2 = 0.25, 0.07
        tm = single_user_chain(eps1, eps2)
        stat = stationary_distribution(tm)
        assert per_user(0, stat, tm) == pytest.approx(
            2 * eps1 * eps2 / (1 + eps1), rel=1e-12
        )
        assert success_prob(0, stat, tm) == pytest.approx(
            (1 - eps1) / (1 + eps1), rel=1e-12
        )

    def test_published_anchor_reproduced(self):
        # (0.29, 0.35, 0.36) at -2.02 dB, R=1/4, n=100 -> max PER 7.5e-3
        metrics = analyze(ANCHOR_CFG)
        worst = max(m.per for m in metrics)
        assert 7.5e-3 / 3 <= worst <= 7.5e-3 * 3

    def test_per_monotone_in_power(self):
        grid_db = np.linspace(-2.5, 1.5, 7)
        worst = [
            max(m.per for m in analyze(SystemConfig(
                alphas=(0.29, 0.35, 0.36), p0=10 ** (db / 10), code=CODE)))
            for db in grid_db
        ]
        assert all(a >= b for a, b in zip(worst, worst[1:]))

    def test_max_user_per_matches_analyze(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            cfg = random_config(rng, n_max=3)
            metrics = analyze(cfg)
            assert max_user_per(cfg.alphas, cfg.p0, cfg.code) == pytest.approx(
                max(m.per for m in metrics), rel=1e-12
            )

    def test_user_index_validated(self):
        tm = single_user_chain(0.1, 0.1)
        stat = stationary_distribution(tm)
        with pytest.raises(ValueError):
            per_user(1, stat, tm)
        with pytest.raises(ValueError):
            success_prob(-1, stat, tm)


class TestDelayPmf:
    def test_certain_success_point_mass(self):
        pmf = delay_pmf(1.0, 5)
        assert pmf[0] == pytest.approx(1.0)
        assert pmf[1:].sum() == pytest.approx(0.0, abs=1e-300)

    def test_single_packet(self):
        pmf = delay_pmf(0.3, 1)
        assert pmf[0] == pytest.approx(0.3, rel=1e-12)  # delay 1
        assert pmf[1] == pytest.approx(0.7, rel=1e-12)  # delay 2

    def test_normalization_and_mean(self):
        p_s, m = 0.9, 100
        pmf = delay_pmf(p_s, m)
        assert abs(pmf.sum() - 1.0) <= 1e-12
        mean = float(np.dot(m + np.arange(m + 1), pmf))
        assert mean == pytest.approx(m * (2 - p_s), rel=1e-12)
        assert mean == pytest.approx(110.0, rel=1e-12)

    def test_large_count_stays_normalized(self):
        pmf = delay_pmf(0.37, 5000)
        assert abs(pmf.sum() - 1.0) <= 1e-10
        assert np.all(pmf >= 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            delay_pmf(1.5, 10)
        with pytest.raises(ValueError):
            delay_pmf(0.5, 0)


class TestThroughput:
    def test_ideal(self):
        assert throughput(0.0, 1.0, CODE) == pytest.approx(CODE.rate)

    def test_all_failed(self):
        assert throughput(1.0, 0.3, CODE) == 0.0

    def test_every_packet_needs_two_slots(self):
        assert throughput(0.0, 0.0, CODE) == pytest.approx(CODE.rate / 2)

    def test_metrics_identity(self):
        for m in analyze(ANCHOR_CFG):
            assert m.throughput == pytest.approx(
                throughput(m.per, m.success_prob, CODE), rel=1e-12
            )
