"""
Tests for the two-round function-sum protocol.
"""

import math
import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from protocols.comm import ServerVector
from protocols.fsum import (
    check_eps,
    estimate_xhat,
    fk_estimate,
    fsum_estimate,
    num_copies,
    protocol_params,
    recover_max,
    round1_server_sample,
    run_fsum,
    select_pl,
)
from protocols.functions import FnSpec
from protocols.models import CoordinatorView, ProtocolConfig, RandomnessConfig, XhatEstimate
from protocols.randomness import Backend, gen_exponentials
from utils.errors import InvalidInstanceError
from utils.stats import relative_error


def _servers(n, s, seed, scale=10):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, scale + 1, n).astype(float) for _ in range(s)]


class TestProtocolParams:
    """Tests for the protocol constants."""

    def test_pl_size_formula(self):
        """Test PL_size = ceil(C ln^2 n theta'' / (1 - eps2)^3)."""
        fn = FnSpec.power(2)
        params = protocol_params(256, 4, fn)
        expected = math.ceil(4.0 * math.log(256) ** 2 * fn.theta_dblprime / (1 - fn.eps2) ** 3)
        assert params.PL_size == expected

    def test_grid_origin(self):
        """Test P_start, P_end and the mark threshold."""
        fn = FnSpec.power(3)
        params = protocol_params(1000, 8, fn)
        ln2 = math.log(1000) ** 2
        assert params.P_start == pytest.approx(fn.eps1 / (64 * 4.0 * ln2))
        assert params.P_end == pytest.approx(32 / (64 * ln2))
        assert params.mark_threshold == pytest.approx(66 * math.log(1000))
        assert params.A >= 1 and params.B >= 1

    def test_sample_count_floor_and_cap(self):
        """Test N stays within [c_f[s] ln^3 n / s, max_samples]."""
        fn = FnSpec.power(3)
        capped = protocol_params(1000, 8, fn, ProtocolConfig(max_samples=1000))
        assert capped.N == 1000
        small = protocol_params(1000, 8, fn, ProtocolConfig(sample_const=1e-30))
        assert small.N >= 64 * math.log(1000) ** 3 / 8

    def test_num_copies(self):
        """Test m = ceil(16 / eps^2)."""
        assert num_copies(0.2) == 400
        assert num_copies(0.5) == 64


class TestRound1:
    """Tests for the round-1 server sample."""

    def test_point_mass(self):
        """Test a single nonzero coordinate is the whole support."""
        fn = FnSpec.power(2)
        exps = gen_exponentials(1, 8)
        coords, values, total = round1_server_sample(np.array([5.0, 0, 0, 0, 0, 0, 0, 0]), fn, exps, 50, seed=3)
        assert coords.tolist() == [0]
        assert values.tolist() == [5.0]
        assert total == pytest.approx(25.0 / exps.variate(0))

    def test_zero_vector(self):
        """Test an all-zero server sends an empty support."""
        coords, values, total = round1_server_sample(np.zeros(6), FnSpec.power(2), gen_exponentials(1, 6), 10, 0)
        assert coords.size == 0 and values.size == 0
        assert total == 0.0

    def test_sampling_frequencies(self):
        """Test draws follow e_i^-1 f(x_i) / total."""
        fn = FnSpec.power(2)
        x = np.random.default_rng(4).uniform(0, 1, 16)
        exps = gen_exponentials(2, 16)
        weights = fn(x) / exps.variates(np.arange(16))
        target = weights / weights.sum()
        hits = np.zeros(16)
        for seed in range(3000):
            coords, _, _ = round1_server_sample(ServerVector(x, 0), fn, exps, 1, seed)
            hits[coords] += 1
        assert np.max(np.abs(hits / 3000 - target)) <= 0.03

    def test_rejects_zero_draws(self):
        """Test N must be positive."""
        with pytest.raises(ValueError):
            round1_server_sample(np.ones(3), FnSpec.power(2), gen_exponentials(1, 3), 0, 0)


class TestXhat:
    """Tests for the coordinator's underestimates."""

    def _view(self, servers, fn, exps, N, seed):
        coords, values, totals = [], [], []
        for owner, x in enumerate(servers):
            c, v, t = round1_server_sample(ServerVector(x, owner), fn, exps, N, seed)
            coords.append(c)
            values.append(v)
            totals.append(t)
        return CoordinatorView.from_messages(coords, values, np.array(totals))

    def test_single_server_argmax_exact(self):
        """Test a single server is credited exactly at the argmax and never above x."""
        fn = FnSpec.power(2)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        exps = gen_exponentials(5, 4)
        params = protocol_params(4, 1, fn)
        view = self._view([x], fn, exps, params.N, seed=1)
        est = estimate_xhat(view, fn, params, exps)
        best = int(np.argmax(fn(x) / exps.variates(np.arange(4))))
        assert est.x_hat[list(est.coords).index(best)] == x[best]
        assert np.all(est.x_hat <= x[est.coords])
        assert np.allclose(est.est, fn(est.x_hat) / exps.variates(est.coords))

    def test_never_overestimates(self):
        """Test x_hat_i <= x_i on random multi-server instances."""
        fn = FnSpec.power(2)
        n, s = 64, 8
        over = 0
        checked = 0
        for seed in range(10):
            servers = _servers(n, s, seed)
            x = np.sum(servers, axis=0)
            exps = gen_exponentials(100 + seed, n)
            params = protocol_params(n, s, fn)
            est = estimate_xhat(self._view(servers, fn, exps, params.N, seed), fn, params, exps)
            over += int(np.sum(est.x_hat > x[est.coords] * (1 + 1e-12)))
            checked += est.coords.size
        assert over <= 0.01 * checked

    def test_empty_view(self):
        """Test an empty support gives an empty estimate."""
        fn = FnSpec.power(2)
        view = CoordinatorView.from_messages([np.zeros(0, dtype=np.int64)], [np.zeros(0)], np.zeros(1))
        est = estimate_xhat(view, fn, protocol_params(8, 1, fn), gen_exponentials(1, 8))
        assert est.coords.size == 0 and est.x_hat.size == 0

    def test_select_pl_ties(self):
        """Test PL takes the largest Est and breaks ties toward smaller indices."""
        estimate = XhatEstimate(coords=np.array([2, 5, 7, 9]), x_hat=np.ones(4), est=np.array([1.0, 3.0, 3.0, 0.5]))
        assert select_pl(estimate, 2).tolist() == [5, 7]
        assert select_pl(estimate, 3).tolist() == [5, 7, 2]


class TestRecoverMax:
    """Tests for single-copy max recovery."""

    def test_single_server_matches_direct(self):
        """Test the output equals max_i f(x_i) / e_i."""
        fn = FnSpec.power(2)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        exps = gen_exponentials(9, 4)
        value, stats = recover_max([x], fn, exps, protocol_params(4, 1, fn), seed=2)
        assert value == pytest.approx(float(np.max(fn(x) / exps.variates(np.arange(4)))))
        assert stats.rounds_used == 2

    def test_multi_server_matches_truth(self):
        """Test recovery of the true maximum over seeds."""
        fn = FnSpec.power(3)
        n, s = 64, 4
        hits = 0
        for seed in range(20):
            servers = _servers(n, s, seed)
            exps = gen_exponentials(500 + seed, n)
            truth = float(np.max(fn(np.sum(servers, axis=0)) / exps.variates(np.arange(n))))
            value, _ = recover_max(servers, fn, exps, protocol_params(n, s, fn), seed)
            hits += value == pytest.approx(truth)
        assert hits >= 19

    def test_rejects_zero_sum(self):
        """Test a zero instance is invalid."""
        fn = FnSpec.power(2)
        with pytest.raises(InvalidInstanceError):
            recover_max([np.zeros(4)], fn, gen_exponentials(1, 4), protocol_params(4, 1, fn), 0)


class TestRunFsum:
    """Tests for the full estimator."""

    def test_two_rounds_and_words(self):
        """Test the round count and the round-1/round-2 word split."""
        servers = _servers(32, 3, 1)
        outcome = run_fsum(servers, FnSpec.power(2), eps=0.5, seed=1)
        assert outcome.rounds == 2
        assert len(outcome.diagnostics) == 64
        round1 = sum(d.round1_words for d in outcome.diagnostics)
        pl_words = sum(d.pl_size for d in outcome.diagnostics)
        assert outcome.stats.words_in_round(1) == round1
        assert outcome.stats.words_in_round(2) == 2 * 3 * pl_words
        assert outcome.total_words == round1 + 6 * pl_words

    def test_diagnostics_capture_argmax(self):
        """Test the true argmax reaches SC and PL in every copy."""
        outcome = run_fsum(_servers(32, 3, 2), FnSpec.power(2), eps=0.5, seed=2)
        assert all(d.argmax_in_support for d in outcome.diagnostics)
        assert all(d.argmax_in_pl for d in outcome.diagnostics)

    def test_single_coordinate(self):
        """Test a one-term sum is estimated within eps."""
        x = np.zeros(16)
        x[4] = 3.0
        hits = 0
        for seed in range(20):
            estimate, _ = fsum_estimate([x / 2, x / 2], FnSpec.power(2), 0.25, seed)
            hits += relative_error(estimate, 9.0) <= 0.25
        assert hits >= 18

    def test_accuracy_fk(self):
        """Test F_3 on random instances."""
        hits = 0
        for seed in range(10):
            servers = _servers(64, 4, seed)
            truth = float(np.sum(np.sum(servers, axis=0) ** 3))
            estimate, stats = fk_estimate(servers, 3, 0.25, seed)
            hits += relative_error(estimate, truth) <= 0.25
            assert stats.rounds_used == 2
        assert hits >= 8

    def test_accuracy_huber(self):
        """Test the Huber sum on random instances."""
        fn = FnSpec.huber(1.0)
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            servers = [rng.uniform(0, 2, 64) for _ in range(4)]
            truth = float(fn(np.sum(servers, axis=0)).sum())
            hits += relative_error(run_fsum(servers, fn, 0.25, seed).estimate, truth) <= 0.25
        assert hits >= 8

    def test_all_ones_f2(self):
        """Test F_2 of an all-ones vector split across servers."""
        n = 100
        split = np.random.default_rng(0).uniform(0, 1, n)
        servers = [split, 1 - split]
        estimate, _ = fk_estimate(servers, 2, 0.2, seed=3)
        assert relative_error(estimate, n) <= 0.2

    def test_deterministic(self):
        """Test identical inputs give identical estimates and counters."""
        servers = _servers(32, 2, 5)
        a = run_fsum(servers, FnSpec.power(2), 0.5, 7)
        b = run_fsum(servers, FnSpec.power(2), 0.5, 7)
        assert a.estimate == b.estimate
        assert dict(a.stats.words_sent) == dict(b.stats.words_sent)

    def test_nisan_backend(self):
        """Test the estimator on PRG-backed exponentials."""
        config = ProtocolConfig(randomness=RandomnessConfig(backend=Backend.NISAN_PRG))
        servers = _servers(64, 4, 3)
        truth = float(np.sum(np.sum(servers, axis=0) ** 2))
        estimate, _ = fsum_estimate(servers, FnSpec.power(2), 0.25, 3, config)
        assert relative_error(estimate, truth) <= 0.25

    def test_rejects_bad_eps(self):
        """Test eps outside (0, 1) or below n^-1/2."""
        servers = _servers(100, 2, 0)
        with pytest.raises(ValueError, match="eps out of range"):
            run_fsum(servers, FnSpec.power(2), 0.0, 0)
        with pytest.raises(ValueError):
            run_fsum(servers, FnSpec.power(2), 0.05, 0)

    def test_eps_floor_exponent(self):
        """Test the default n^-1/2 floor and the stricter n^-1/4 setting."""
        check_eps(0.1, 1000, ProtocolConfig())
        with pytest.raises(ValueError, match="validity floor"):
            check_eps(0.1, 1000, ProtocolConfig(eps_floor_exponent=0.25))
        with pytest.raises(ValueError, match="validity floor"):
            check_eps(0.03, 1000, ProtocolConfig())

    def test_rejects_bad_k(self):
        """Test k < 1 is invalid for F_k."""
        with pytest.raises(InvalidInstanceError):
            fk_estimate(_servers(16, 2, 0), 0.5, 0.5, 0)

    def test_rejects_zero_instance(self):
        """Test an all-zero instance is invalid."""
        with pytest.raises(InvalidInstanceError):
            run_fsum([np.zeros(16), np.zeros(16)], FnSpec.power(2), 0.5, 0)

    @pytest.mark.slow
    def test_acceptance_fk(self):
        """Test F_3 at n=1000, s=8, eps=0.1 over 50 trials."""
        hits = 0
        for seed in range(50):
            servers = _servers(1000, 8, seed, scale=100)
            truth = float(np.sum(np.sum(servers, axis=0) ** 3))
            estimate, _ = fk_estimate(servers, 3, 0.1, seed)
            hits += relative_error(estimate, truth) <= 0.1
        assert hits >= 40

    def test_sampled_supports_use_buckets(self):
        """Test N below n keeps round-1 supports partial and routes samples through buckets."""
        n, s = 1024, 2
        config = ProtocolConfig(sample_const=1e-30)
        outcome = run_fsum(_servers(n, s, 4), FnSpec.power(2), 0.5, seed=4, config=config)
        N = outcome.params.N
        assert N == math.ceil(math.log(n) ** 3)
        assert N < n
        assert all(d.round1_words <= s * (2 * N + 1) for d in outcome.diagnostics)
        assert sum(d.bucketed for d in outcome.diagnostics) > 0

    @pytest.mark.slow
    def test_word_scaling(self):
        """Test doubling s grows the words of F_3 by at most 2^(k-1) times slack with N below n."""
        n = 16384
        config = ProtocolConfig(sample_const=1e-30)
        words = []
        for s in (4, 8):
            outcome = run_fsum(_servers(n, s, 1), FnSpec.power(3), 0.5, seed=1, config=config)
            assert outcome.params.N < n
            assert all(d.support_size < n for d in outcome.diagnostics)
            assert all(d.round1_words < s * (2 * n + 1) for d in outcome.diagnostics)
            assert any(d.bucketed > 0 for d in outcome.diagnostics)
            words.append(outcome.total_words)
        assert words[1] / words[0] <= 4 * 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
