from fractions import Fraction

import numpy as np
import pytest

from direx.devices import ghz_honest_device
from direx.errors import InfeasibleError
from direx.postprocess import (
    ChainedBitSource,
    CrossFeedStage,
    ErrorLedger,
    ExtractorSpec,
    LedgerEntry,
    cross_feed,
    dyadic_upper,
    expansion_schedule,
    stages_to_reach,
    toeplitz_extract,
)
from direx.seeding import parse_master_seed, substream
from direx.xorgames import ghz_constants, ghz_game

MASTER = parse_master_seed("f0" * 32)


class TestToeplitz:
    def test_matches_explicit_matrix(self):
        rng = np.random.default_rng(0)
        n, m = 40, 12
        src = rng.integers(0, 2, n).astype(np.uint8)
        seed = rng.integers(0, 2, n + m - 1).astype(np.uint8)
        t = np.zeros((m, n), dtype=np.uint8)
        for i in range(m):
            for j in range(n):
                t[i, j] = seed[i - j + n - 1]
        assert np.array_equal(toeplitz_extract(src, seed, m), (t @ src) % 2)

    def test_zero_source_zero_output(self):
        rng = np.random.default_rng(1)
        seed = rng.integers(0, 2, 57).astype(np.uint8)
        assert not toeplitz_extract(np.zeros(50, np.uint8), seed, 8).any()

    def test_linearity(self):
        rng = np.random.default_rng(2)
        seed = rng.integers(0, 2, 57).astype(np.uint8)
        x = rng.integers(0, 2, 50).astype(np.uint8)
        y = rng.integers(0, 2, 50).astype(np.uint8)
        assert np.array_equal(
            toeplitz_extract(x ^ y, seed, 8),
            toeplitz_extract(x, seed, 8) ^ toeplitz_extract(y, seed, 8))

    def test_seed_length_checked(self):
        with pytest.raises(ValueError):
            toeplitz_extract(np.zeros(10, np.uint8), np.zeros(10, np.uint8), 4)

    def test_leftover_hash_exhaustive(self):
        # N = 12, m = 4: average-over-seeds distance from uniform for a
        # min-entropy-8 source stays under 2^-2 (brute-force enumeration)
        rng = np.random.default_rng(3)
        n, m = 12, 4
        support = rng.choice(2**n, size=256, replace=False)
        masks = np.zeros((2 ** (n + m - 1), m), dtype=np.int64)
        for seed in range(2 ** (n + m - 1)):
            for i in range(m):
                row = 0
                for j in range(n):
                    row |= ((seed >> (i - j + n - 1)) & 1) << j
                masks[seed, i] = row
        inputs = np.asarray(support, dtype=np.int64)
        counts = np.bitwise_count(masks[:, :, None] & inputs[None, None, :]) & 1
        outputs = np.zeros((masks.shape[0], inputs.size), dtype=np.int64)
        for i in range(m):
            outputs = (outputs << 1) | counts[:, i, :]
        total_sd = 0.0
        for seed in range(masks.shape[0]):
            hist = np.bincount(outputs[seed], minlength=2**m) / inputs.size
            total_sd += 0.5 * np.abs(hist - 1.0 / 2**m).sum()
        assert total_sd / masks.shape[0] <= 2.0**-2


class TestExtractorSpec:
    def test_budget_enforced(self):
        with pytest.raises(InfeasibleError):
            ExtractorSpec(source_len=100, output_len=90,
                          claimed_min_entropy=100.0, ext_error_exp=10.0)
        spec = ExtractorSpec(source_len=100, output_len=70,
                             claimed_min_entropy=100.0, ext_error_exp=10.0)
        assert spec.seed_len == 169
        assert spec.ext_error == Fraction(1, 1024)


class TestLedger:
    def test_totals_are_exact_sums(self):
        led = ErrorLedger()
        vals = [Fraction(1, 8), Fraction(1, 32), Fraction(3, 64)]
        for i, v in enumerate(vals):
            led.add(LedgerEntry(stage=i, device_id=i % 2, soundness=v,
                                completeness=v / 2, vacuous=False,
                                seed_from_stage=i - 1))
        assert led.total_soundness == sum(vals)
        assert led.total_completeness == sum(vals) / 2
        assert led.check_totals()
        assert led.check_wiring()

    def test_wiring_violation_detected(self):
        led = ErrorLedger()
        led.add(LedgerEntry(0, 0, Fraction(1, 2), Fraction(1, 2), False, -1))
        led.add(LedgerEntry(1, 0, Fraction(1, 2), Fraction(1, 2), False, 0))
        assert not led.check_wiring()

    def test_dyadic_upper(self):
        assert dyadic_upper(-3.2) == Fraction(1, 8)
        assert dyadic_upper(-3.0) == Fraction(1, 8)
        assert dyadic_upper(2.5, cap_at_one=True) == Fraction(1)


class TestChainedBitSource:
    def test_queue_then_topup(self):
        src = ChainedBitSource([1, 0, 1], substream(MASTER, "chain"))
        first = src.take(3)
        assert first == 0b101
        src.take(5)
        assert src.from_queue == 3
        assert src.topped_up == 5
        assert src.consumed == 8


class TestCrossFeed:
    STAGES = [
        CrossFeedStage(N=10_000, q=0.5, eta=0.002, kappa=2.6, epsilon_exp=20,
                       m_out=64, ext_error_exp=20),
        CrossFeedStage(N=11_000, q=0.5, eta=0.002, kappa=2.6, epsilon_exp=20,
                       m_out=128, ext_error_exp=20),
    ]

    def test_two_stage_run(self):
        dev = ghz_honest_device()
        res = cross_feed(ghz_game(), ghz_constants(), dev, dev, self.STAGES,
                         MASTER)
        assert len(res.final_bits) == 128
        assert len(res.ledger.entries) == 2
        assert res.ledger.check_totals()
        assert res.ledger.check_wiring()
        assert [s.device_id for s in res.stages] == [0, 1]
        # second stage seeded by the first stage's 64 bits
        assert res.stages[1].seed_from_previous == 64

    def test_single_stage_is_plain_run(self):
        dev = ghz_honest_device()
        res = cross_feed(ghz_game(), ghz_constants(), dev, dev,
                         self.STAGES[:1], MASTER)
        assert len(res.final_bits) == 64
        assert len(res.ledger.entries) == 1

    def test_soundness_total_is_sum(self):
        dev = ghz_honest_device()
        res = cross_feed(ghz_game(), ghz_constants(), dev, dev, self.STAGES,
                         MASTER)
        led = res.ledger
        assert led.total_soundness == led.entries[0].soundness + led.entries[1].soundness

    def test_output_capped_by_bound(self):
        dev = ghz_honest_device()
        stages = [CrossFeedStage(N=2500, q=0.5, eta=0.002, kappa=2.6,
                                 epsilon_exp=20, m_out=4096)]
        with pytest.raises(InfeasibleError):
            cross_feed(ghz_game(), ghz_constants(), dev, dev, stages, MASTER)

    def test_abort_carries_stage_index(self):
        from direx.devices import AdversarialBehavior
        from direx.postprocess import CrossFeedAbort

        bad = AdversarialBehavior(n=3, program=lambda tr, inp: (0, 0, 0))
        dev = ghz_honest_device()
        with pytest.raises(CrossFeedAbort) as err:
            cross_feed(ghz_game(), ghz_constants(), dev, bad, self.STAGES,
                       MASTER)
        assert err.value.stage == 1

    def test_deterministic(self):
        dev = ghz_honest_device()
        a = cross_feed(ghz_game(), ghz_constants(), dev, dev, self.STAGES,
                       MASTER)
        b = cross_feed(ghz_game(), ghz_constants(), dev, dev, self.STAGES,
                       MASTER)
        assert np.array_equal(a.final_bits, b.final_bits)


class TestSchedule:
    def test_first_stage_matches_formula(self):
        plan = expansion_schedule(16, 0.5, 10**5)
        st = plan.stages[0]
        assert st["N_uncapped"] == 16.0  # 2**(16**0.5)
        assert st["N"] == min(16, 10**5)
        assert st["q"] == pytest.approx(16**0.5 / 2 ** (16**0.5))

    def test_omega_domain_open(self):
        with pytest.raises(ValueError):
            expansion_schedule(16, 1.0, 100)
        with pytest.raises(ValueError):
            expansion_schedule(16, 0.0, 100)

    def test_desk_cap_applies(self):
        plan = expansion_schedule(64, 0.25, 1000)
        assert all(st["N"] <= 1000 for st in plan.stages)

    def test_tower_growth_log_star(self):
        # from 16 seed bits at exponent 1/4 the tower passes 2^65536 in
        # three uncapped stages: 4 -> 8 -> 64 -> 2^48 (log2 seed lengths)
        assert stages_to_reach(16, 0.25, 65536.0) == 3
        # a shallower exponent from 64 bits takes four stages
        assert stages_to_reach(64, 0.5, 65536.0) == 4

    def test_stalling_schedule_detected(self):
        with pytest.raises(InfeasibleError):
            stages_to_reach(16, 0.5, 65536.0)
