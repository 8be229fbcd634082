import numpy as np
import pytest
from fractions import Fraction

from direx.devices import (
    AdversarialBehavior,
    NoisyHonestBehavior,
    PAULI_X,
    PAULI_Y,
    PartiallyTrustedBehavior,
    ghz_honest_device,
    random_partially_trusted,
)
from direx.entropy import BlockOperator, renyi_divergence
from direx.errors import SeedExhaustedError
from direx.protocols import (
    CategoricalSampler,
    ProtocolConfig,
    biased_bit_sampler,
    completeness_error_bound,
    conditional_environment_states,
    exact_small_run,
    monte_carlo,
    run_protocol_a_prime,
    run_protocol_r,
    symbols_to_bits,
    wilson_interval,
)
from direx.rates import worst_case_rate
from direx.seeding import numpy_rng, parse_master_seed, substream
from direx.xorgames import ghz_game

MASTER = parse_master_seed("be" * 32)
GAME = ghz_game()


def ghz_config(N, q, eta):
    return ProtocolConfig(mode="R", N=N, q=q, eta=eta, game=GAME, w_G=1.0)


class TestBiasedSampler:
    def test_half_is_identity_coding(self):
        s = substream(MASTER, "s1")
        bits, used = biased_bit_sampler(Fraction(1, 2), s, 5000)
        assert used == 5000

    def test_entropy_rate_small_bias(self):
        s = substream(MASTER, "s2")
        n = 100_000
        bits, used = biased_bit_sampler(Fraction(1, 256), s, n)
        h = -(1 / 256) * np.log2(1 / 256) - (255 / 256) * np.log2(255 / 256)
        assert used <= 1.1 * n * h + 128
        assert abs(used - n * h) <= 0.1 * n * h

    def test_exact_distribution_chi_square(self):
        # frequencies of (pairs of consecutive bits) against exact products
        s = substream(MASTER, "s3")
        n = 200_000
        q = Fraction(1, 5)
        bits, _ = biased_bit_sampler(q, s, n)
        arr = np.array(bits)
        p_hat = arr.mean()
        assert abs(p_hat - 0.2) <= 3 * np.sqrt(0.2 * 0.8 / n)
        # serial independence: correlation of consecutive bits
        corr = np.corrcoef(arr[:-1], arr[1:])[0, 1]
        assert abs(corr) <= 4 / np.sqrt(n)

    def test_deterministic_replay(self):
        runs = []
        for _ in range(2):
            s = substream(MASTER, "s4")
            bits, _ = biased_bit_sampler(0.05, s, 2000)
            runs.append(bits)
        assert runs[0] == runs[1]

    def test_seed_exhaustion_reports_need(self):
        s = substream(MASTER, "s5", limit=16)
        with pytest.raises(SeedExhaustedError) as err:
            biased_bit_sampler(Fraction(1, 2), s, 100)
        assert err.value.bits_needed >= 1

    def test_categorical_multiway_exact(self):
        s = substream(MASTER, "s6")
        weights = [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)]
        sampler = CategoricalSampler(weights, s)
        n = 60_000
        draws = np.array([sampler.sample() for _ in range(n)])
        for k, w in enumerate(weights):
            p = float(w)
            assert abs((draws == k).mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            CategoricalSampler([Fraction(1, 2)], substream(MASTER, "s7"))


class TestProtocolR:
    def test_honest_ghz_success_no_failures(self):
        cfg = ghz_config(5000, Fraction(1, 20), 0.01)
        out = run_protocol_r(cfg, ghz_honest_device(),
                             substream(MASTER, "r1"), numpy_rng(MASTER, "d1"))
        assert out.success
        assert out.transcript.failures == 0
        assert all(r[3] == "P" for r in out.transcript.rounds if r[0] == 1)

    def test_threshold_formula(self):
        cfg = ghz_config(10_000, Fraction(1, 20), 0.01)
        assert cfg.abort_threshold == pytest.approx(5.0)

    def test_vacuous_threshold_never_aborts(self):
        # eta above the winning probability deficit makes the test vacuous
        always_fail = AdversarialBehavior(n=3, program=lambda tr, inp: (1, 0, 0))
        cfg = ghz_config(500, Fraction(1, 2), 0.49)
        out = run_protocol_r(cfg, always_fail, substream(MASTER, "r2"),
                             numpy_rng(MASTER, "d2"))
        # threshold 0.49*0.5*500 = 122.5 vs about 125 failures: this device
        # straddles; use a threshold at or above q N instead
        cfg2 = ProtocolConfig(mode="R", N=500, q=Fraction(1, 2), eta=0.4999,
                              game=GAME, w_G=0.5 + 0.4999)
        # w_G + eta - 1 >= 0 makes the threshold at least q N
        assert cfg2.abort_threshold >= 0.49 * 250

    def test_failing_device_aborts(self):
        # outputs even parity always: fails every game round with odd parity
        bad = AdversarialBehavior(n=3, program=lambda tr, inp: (0, 0, 0))
        cfg = ghz_config(2000, Fraction(1, 10), 0.01)
        out = run_protocol_r(cfg, bad, substream(MASTER, "r3"),
                             numpy_rng(MASTER, "d3"))
        assert not out.success

    def test_symbol_consistency(self):
        cfg = ghz_config(3000, Fraction(1, 10), 0.2)
        out = run_protocol_r(cfg, NoisyHonestBehavior(base=ghz_honest_device(),
                                                      p=0.2),
                             substream(MASTER, "r4"), numpy_rng(MASTER, "d4"))
        assert out.transcript.check_symbol_consistency()

    def test_seed_accounting_split(self):
        cfg = ghz_config(4000, Fraction(1, 10), 0.01)
        out = run_protocol_r(cfg, ghz_honest_device(),
                             substream(MASTER, "r5"), numpy_rng(MASTER, "d5"))
        tr = out.transcript
        games = sum(1 for r in tr.rounds if r[0] == 1)
        assert tr.input_bits_used == 2 * games  # uniform 4-way inputs cost 2 bits
        assert tr.seed_bits_used == tr.g_bits_used + tr.input_bits_used

    def test_abort_decision_pure_function_of_failures(self):
        cfg = ghz_config(1000, Fraction(1, 10), 0.05)
        out = run_protocol_r(cfg, NoisyHonestBehavior(base=ghz_honest_device(),
                                                      p=0.5),
                             substream(MASTER, "r6"), numpy_rng(MASTER, "d6"))
        assert out.success == (out.transcript.failures <= cfg.abort_threshold)

    def test_component_count_checked(self):
        from direx.devices import chsh_honest_device

        cfg = ghz_config(10, Fraction(1, 2), 0.01)
        with pytest.raises(ValueError):
            run_protocol_r(cfg, chsh_honest_device(),
                           substream(MASTER, "r7"), numpy_rng(MASTER, "d7"))


class TestProtocolAPrime:
    def _trusted_plus_device(self):
        plus = np.array([1.0, 1.0]) / np.sqrt(2)
        return PartiallyTrustedBehavior(
            v=1.0, h=0.0, trusted_pair=(PAULI_X, PAULI_Y),
            dishonest=np.zeros((2, 2)), state=plus, env_dim=1)

    def test_trusted_plus_state_generation_deterministic(self):
        # deterministic per state: every generation round before the first
        # game round reads H, and a generation round always repeats the
        # previous generation outcome unless a game round intervened
        cfg = ProtocolConfig(mode="Aprime", N=2000, q=Fraction(1, 10),
                             eta=0.2, v=1.0, h=0.0)
        out = run_protocol_a_prime(cfg, self._trusted_plus_device(),
                                   substream(MASTER, "a1"),
                                   numpy_rng(MASTER, "ad1"))
        rounds = out.transcript.rounds
        for r in rounds:
            if r[0] == 1:
                break
            assert r[3] == "H"
        prev = None
        for r in rounds:
            if r[0] == 0:
                if prev is not None:
                    assert r[3] == prev
                prev = r[3]
            else:
                prev = None

    def test_trusted_failures_binomial(self):
        # game rounds measure the anticommuting partner on |+>: fair coin
        cfg = ProtocolConfig(mode="Aprime", N=4000, q=Fraction(1, 4),
                             eta=0.45, v=1.0, h=0.0)
        out = run_protocol_a_prime(cfg, self._trusted_plus_device(),
                                   substream(MASTER, "a2"),
                                   numpy_rng(MASTER, "ad2"))
        games = sum(1 for r in out.transcript.rounds if r[0] == 1)
        fails = out.transcript.failures
        assert abs(fails - games / 2) <= 4 * np.sqrt(games * 0.25)

    def test_mode_a_is_fixed_special_case(self):
        with pytest.raises(ValueError):
            ProtocolConfig(mode="A", N=10, q=0.1, eta=0.1, v=0.5, h=0.0)
        cfg = ProtocolConfig(mode="A", N=10, q=0.1, eta=0.1)
        assert cfg.v == 1.0 and cfg.h == 0.0

    def test_coin_device_failure_frequency(self):
        # pure coin-flip mixture: failures average half the game rounds and
        # the run clears the (h/2 + eta) q N threshold with room to spare
        plus = np.array([1.0, 1.0]) / np.sqrt(2)
        coin = PartiallyTrustedBehavior(
            v=0.0, h=1.0, trusted_pair=(PAULI_X, PAULI_Y),
            dishonest=np.zeros((2, 2)), state=plus, env_dim=1)
        cfg = ProtocolConfig(mode="Aprime", N=4000, q=Fraction(1, 4),
                             eta=0.2, v=0.0, h=1.0)
        out = run_protocol_a_prime(cfg, coin, substream(MASTER, "a3"),
                                   numpy_rng(MASTER, "ad3"))
        games = sum(1 for r in out.transcript.rounds if r[0] == 1)
        assert abs(out.transcript.failures - games / 2) <= 4 * np.sqrt(games * 0.25)
        assert out.success

    def test_empty_protocol(self):
        cfg = ProtocolConfig(mode="Aprime", N=0, q=Fraction(1, 10), eta=0.2,
                             v=1.0, h=0.0)
        out = run_protocol_a_prime(cfg, self._trusted_plus_device(),
                                   substream(MASTER, "a4"),
                                   numpy_rng(MASTER, "ad4"))
        assert out.success and out.transcript.rounds == []


class TestMonteCarlo:
    def test_honest_zero_abort(self):
        cfg = ghz_config(500, Fraction(1, 10), 0.05)
        stats = monte_carlo(cfg, ghz_honest_device(), 40, MASTER)
        assert stats.abort_rate == 0.0
        assert stats.wilson_low == 0.0

    def test_noisy_within_completeness_bound(self):
        p = 0.03
        cfg = ghz_config(2000, Fraction(1, 8), 0.1)
        bound = completeness_error_bound(0.1, p / 2, 1 / 8, 2000)
        stats = monte_carlo(cfg, NoisyHonestBehavior(base=ghz_honest_device(), p=p),
                            60, MASTER, completeness_bound=bound)
        assert not stats.bound_exceeded

    def test_always_failing_aborts_everywhere(self):
        bad = AdversarialBehavior(n=3, program=lambda tr, inp: (0, 0, 0))
        cfg = ghz_config(800, Fraction(1, 4), 0.02)
        stats = monte_carlo(cfg, bad, 25, MASTER)
        assert stats.abort_rate == 1.0

    def test_replay_stable(self):
        cfg = ghz_config(300, Fraction(1, 10), 0.05)
        noisy = NoisyHonestBehavior(base=ghz_honest_device(), p=0.1)
        a = monte_carlo(cfg, noisy, 10, MASTER)
        b = monte_carlo(cfg, noisy, 10, MASTER)
        assert a.records == b.records

    def test_wilson_interval_sane(self):
        lo, hi = wilson_interval(5, 100)
        assert 0 < lo < 0.05 < hi < 0.15

    def test_parallel_workers_match_serial(self):
        cfg = ghz_config(200, Fraction(1, 10), 0.2)
        noisy = NoisyHonestBehavior(base=ghz_honest_device(), p=0.2)
        serial = monte_carlo(cfg, noisy, 8, MASTER, workers=1)
        parallel = monte_carlo(cfg, noisy, 8, MASTER, workers=2)
        assert serial.records == parallel.records


class TestSymbolEncoding:
    def test_two_bits_per_symbol(self):
        bits = symbols_to_bits("HTPF")
        assert list(bits) == [0, 0, 0, 1, 1, 0, 1, 1]


class TestExactSmallRun:
    def test_sweep_holds(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            v = float(rng.uniform(0.1, 1.0))
            h = float(rng.uniform(0.0, 1.0 - v))
            beh = random_partially_trusted(rng, v, h, env_dim=2)
            q = float(rng.uniform(0.05, 0.5))
            kappa = float(rng.uniform(0.1, 2.0))
            r = float(rng.uniform(0.05, 1.0)) / (q * kappa)
            n = int(rng.integers(1, 4))
            res = exact_small_run(n, beh, q, kappa, r)
            assert res.holds

    def test_one_round_matches_direct_oneshot(self):
        rng = np.random.default_rng(6)
        beh = random_partially_trusted(rng, 0.7, 0.1, env_dim=2)
        q, kappa, r = 0.2, 0.8, 1.5
        gamma = r * q * kappa
        res = exact_small_run(1, beh, q, kappa, r)
        cs = conditional_environment_states(beh)
        rho_env = cs["H"] + cs["T"]
        labels = (((0, 0),), ((0, 1),), ((1, 0),), ((1, 1),))
        rho_blocks = ((1 - q) * cs["H"], (1 - q) * cs["T"],
                      q * cs["P"], q * cs["F"])
        sigma_blocks = ((1 - q) * rho_env, (1 - q) * rho_env,
                        q * rho_env, q * 2 ** (1 / (q * r)) * rho_env)
        direct = renyi_divergence(BlockOperator(labels, rho_blocks),
                                  BlockOperator(labels, sigma_blocks),
                                  1 + gamma)
        assert res.lhs == pytest.approx(direct, abs=1e-10)
        assert res.rhs == pytest.approx(
            -worst_case_rate(0.7, 0.1, q, kappa, r))

    def test_trusted_bell_two_rounds(self):
        # maximally entangled device-environment pair, fully trusted
        psi = np.zeros(4, dtype=complex)
        psi[0] = psi[3] = 1 / np.sqrt(2)
        beh = PartiallyTrustedBehavior(
            v=1.0, h=0.0, trusted_pair=(PAULI_X, PAULI_Y),
            dishonest=np.zeros((2, 2)), state=psi, env_dim=2)
        res = exact_small_run(2, beh, 0.25, 1.0, 1.0)
        assert res.holds
        assert res.rhs - res.lhs >= 0  # measured slack

    def test_environment_state_consistency(self):
        rng = np.random.default_rng(7)
        beh = random_partially_trusted(rng, 0.5, 0.2, env_dim=3)
        res = exact_small_run(2, beh, 0.3, 0.5, 1.0)
        total = np.sum(res.gamma_blocks, axis=0)
        assert np.max(np.abs(total - res.env_state)) < 1e-10
        assert res.env_state.trace().real == pytest.approx(1.0)

    def test_round_count_capped(self):
        rng = np.random.default_rng(8)
        beh = random_partially_trusted(rng, 0.5, 0.2)
        with pytest.raises(ValueError):
            exact_small_run(5, beh, 0.2, 1.0, 1.0)


class TestPartialTrustOperatorBounds:
    def test_four_inequalities_hold_exactly(self):
        rng = np.random.default_rng(9)
        for _ in range(60):
            v = float(rng.uniform(0.05, 1.0))
            h = float(rng.uniform(0.0, 1.0 - v))
            beh = random_partially_trusted(rng, v, h,
                                           env_dim=int(rng.integers(1, 5)))
            cs = conditional_environment_states(beh)
            rho = cs["H"] + cs["T"]
            diffs = (
                cs["P"] - (h / 2) * rho - v * cs["0"],
                (1 - h / 2) * rho - v * cs["1"] - cs["P"],
                cs["F"] - (h / 2) * rho - v * cs["1"],
                (1 - h / 2) * rho - v * cs["0"] - cs["F"],
            )
            for m in diffs:
                assert np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] >= -1e-9


class TestAzumaTails:
    def test_game_failure_tail_bound(self):
        # known per-round failure probability: noisy honest device
        p = 0.1
        q = 0.25
        N = 800
        trials = 200
        cfg = ghz_config(N, Fraction(1, 4), 0.45)
        noisy = NoisyHonestBehavior(base=ghz_honest_device(), p=p)
        stats = monte_carlo(cfg, noisy, trials, MASTER)
        per_round_fail = p / 2
        for eps in (0.05, 0.1):
            bound = np.exp(-eps**2 * q * N / 3)
            tail = sum(1 for r in stats.records
                       if r.failures - q * N * per_round_fail >= eps * q * N)
            freq = tail / trials
            sigma = np.sqrt(max(freq * (1 - freq), 1e-4) / trials)
            assert freq <= bound + 3 * sigma
