import json

import numpy as np
import pytest

from direx.errors import InvalidOperatorError
from direx.matrixcore import HermitianOperator
from direx.xorgames import (
    SamplingSpec,
    XorGame,
    analyze_game,
    anticommuter_family,
    chsh_constants,
    chsh_game,
    classical_optimum,
    classify_selftest,
    eval_pg,
    eval_zg,
    game_from_record,
    game_to_record,
    ghz_constants,
    ghz_game,
    ghz_anticommuter,
    load_game,
    optimal_score,
    positively_align,
    reverse_diagonal_anticommuter,
    scoring_operator,
    trust_coefficient_check,
    trust_coefficient_search,
)

GHZ = ghz_game()
CHSH = chsh_game()


def all_plus_game():
    return XorGame.from_support(
        2, [("00", "0.25", 1), ("01", "0.25", 1), ("10", "0.25", 1), ("11", "0.25", 1)]
    )


class TestGameConstruction:
    def test_prob_sum_enforced(self):
        with pytest.raises(ValueError):
            XorGame.from_support(2, [("00", "0.5", 1), ("01", "0.25", 1)])

    def test_duplicate_input_rejected(self):
        with pytest.raises(ValueError):
            XorGame.from_support(2, [("00", "0.5", 1), ("00", "0.5", -1)])

    def test_bad_sign_rejected(self):
        with pytest.raises(ValueError):
            XorGame.from_support(2, [("00", "0.5", 2), ("01", "0.5", 1)])

    def test_record_round_trip(self, tmp_path):
        rec = game_to_record(GHZ)
        assert game_from_record(rec) == GHZ
        p = tmp_path / "game.json"
        p.write_text(json.dumps(rec))
        assert load_game(str(p)) == GHZ

    def test_named_builtins(self):
        assert load_game("ghz") == GHZ
        assert load_game("chsh") == CHSH


class TestScoreFunctionals:
    def test_pg_ghz_iii(self):
        assert eval_pg(GHZ, [1j, 1j, 1j]) == pytest.approx(1.0)

    def test_pg_ghz_ones(self):
        assert eval_pg(GHZ, [1, 1, 1]) == pytest.approx(-0.5)

    def test_pg_chsh_ii(self):
        assert eval_pg(CHSH, [1j, 1j]) == pytest.approx((2 + 2j) / 4)

    def test_pg_rejects_non_unit(self):
        with pytest.raises(ValueError):
            eval_pg(GHZ, [0.5, 1, 1])

    def test_zg_all_zero(self):
        expected = float(np.sum(GHZ.probs * GHZ.signs))
        assert eval_zg(GHZ, [0, 0, 0, 0]) == pytest.approx(expected)

    def test_zg_ghz_maximum(self):
        assert eval_zg(GHZ, [0, np.pi / 2, np.pi / 2, np.pi / 2]) == pytest.approx(1.0)

    def test_zg_bounded_by_abs_pg(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            th = rng.uniform(0, 2 * np.pi, size=4)
            z = abs(eval_zg(GHZ, th))
            p = abs(eval_pg(GHZ, np.exp(1j * th[1:])))
            assert z <= p + 1e-9

    def test_zg_equals_max_over_leading_angle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            th = rng.uniform(0, 2 * np.pi, size=3)
            p = eval_pg(CHSH, np.exp(1j * th[1:]))
            best = eval_zg(CHSH, np.concatenate([[-np.angle(p)], th[1:]]))
            assert best == pytest.approx(abs(p), abs=1e-12)


class TestOptimalScore:
    def test_ghz_score_is_one(self):
        q, _ = optimal_score(GHZ)
        assert q == pytest.approx(1.0, abs=1e-9)

    def test_chsh_score(self):
        q, _ = optimal_score(CHSH)
        assert q == pytest.approx(np.sqrt(2) / 2, abs=1e-6)

    def test_chsh_against_dense_grid_oracle(self):
        # independent dense grid over both phase angles
        th1 = np.linspace(0, np.pi, 1001)
        th2 = np.linspace(0, 2 * np.pi, 2001)
        t1, t2 = np.meshgrid(th1, th2, indexing="ij")
        p = 0.25 * (1 + np.exp(1j * t1) + np.exp(1j * t2) - np.exp(1j * (t1 + t2)))
        oracle = np.abs(p).max()
        q, _ = optimal_score(CHSH)
        assert q == pytest.approx(oracle, abs=1e-6)

    def test_constant_sign_game_scores_one_at_zero(self):
        q, th = optimal_score(all_plus_game())
        assert q == pytest.approx(1.0, abs=1e-9)
        assert eval_pg(all_plus_game(), [1, 1]) == pytest.approx(1.0)

    def test_maximizer_attains_score(self):
        q, th = optimal_score(CHSH)
        assert eval_zg(CHSH, th) == pytest.approx(q, abs=1e-8)


class TestClassicalOptimum:
    def test_ghz(self):
        assert classical_optimum(GHZ) == pytest.approx(0.75)

    def test_chsh(self):
        # oracle: enumerate the 16 deterministic strategies directly
        best = -2.0
        for a0 in (0, 1):
            for a1 in (0, 1):
                for b0 in (0, 1):
                    for b1 in (0, 1):
                        score = 0.0
                        for (x, y), _, eta in CHSH.entries:
                            out = (a0 if x == 0 else a1) ^ (b0 if y == 0 else b1)
                            score += 0.25 * eta * (1 if out == 0 else -1)
                        best = max(best, score)
        assert classical_optimum(CHSH) == pytest.approx((1 + best) / 2)
        assert classical_optimum(CHSH) == pytest.approx(0.75)

    def test_constant_win(self):
        assert classical_optimum(all_plus_game()) == pytest.approx(1.0)

    def test_classical_below_quantum(self):
        for game in (GHZ, CHSH):
            q, _ = optimal_score(game)
            assert classical_optimum(game) <= (1 + q) / 2 + 1e-12


class TestClassification:
    def test_ghz_strong(self):
        assert classify_selftest(GHZ) == "strong-self-test"

    def test_chsh_strong(self):
        assert classify_selftest(CHSH) == "strong-self-test"

    def test_all_plus_not_self_test(self):
        assert classify_selftest(all_plus_game()) == "not-self-test"

    def test_positive_alignment_chsh(self):
        aligned, flips = positively_align(CHSH)
        assert len(flips) == 2
        q, _ = optimal_score(aligned)
        assert q == pytest.approx(np.sqrt(2) / 2, abs=1e-6)


class TestScoringOperator:
    def test_ghz_corner_entries(self):
        op = scoring_operator(GHZ, [1j, 1j, 1j])
        m = op.entries
        # oracle: evaluate the polynomial on every conjugation pattern
        for b in range(8):
            bits = [(b >> k) & 1 for k in (2, 1, 0)]
            zz = [np.conj(1j) if bit else 1j for bit in bits]
            expected = eval_pg(GHZ, zz)
            assert m[b, 7 - b] == pytest.approx(expected)
        assert np.abs(m[0, 7]) == pytest.approx(1.0)
        w = np.linalg.eigvalsh(m)
        assert np.max(np.abs(w)) == pytest.approx(1.0, abs=1e-10)

    def test_uniform_phases_constant_entries(self):
        op = scoring_operator(CHSH, [1, 1])
        vals = [op.entries[b, 3 - b] for b in range(4)]
        assert np.allclose(vals, eval_pg(CHSH, [1, 1]))

    def test_eigenvalues_are_plus_minus_entry_moduli(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            th = rng.uniform(0, np.pi, size=3)
            op = scoring_operator(GHZ, np.exp(1j * th))
            mods = sorted(np.abs(op.entries[b, 7 - b]) for b in range(8))
            eigs = np.linalg.eigvalsh(op.entries)
            paired = sorted(np.abs(eigs))
            assert np.allclose(sorted(mods), paired, atol=1e-10)

    def test_norm_matches_sign_flip_sweep(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            th = rng.uniform(0, np.pi, size=2)
            op = scoring_operator(CHSH, np.exp(1j * th))
            norm = np.max(np.abs(np.linalg.eigvalsh(op.entries)))
            sampled = max(
                abs(eval_pg(CHSH, [np.exp(1j * s1 * th[0]), np.exp(1j * s2 * th[1])]))
                for s1 in (1, -1)
                for s2 in (1, -1)
            )
            assert norm == pytest.approx(sampled, abs=1e-9)

    def test_rejects_lower_half_phases(self):
        with pytest.raises(ValueError):
            scoring_operator(CHSH, [np.exp(-0.5j), 1])


class TestAbsPgBound:
    def test_pg_bounded_by_optimal_score(self):
        rng = np.random.default_rng(12)
        for game in (GHZ, CHSH):
            q, _ = optimal_score(game)
            th = rng.uniform(0, 2 * np.pi, size=(100_000, game.n))
            z = np.exp(1j * th)
            vals = np.abs(
                sum(
                    float(p) * eta * np.prod(z[:, [k for k, b in enumerate(bits) if b]], axis=1)
                    for bits, p, eta in game.entries
                )
            )
            assert vals.max() <= q + 1e-8

    def test_three_phase_lemma(self):
        rng = np.random.default_rng(14)
        a = np.exp(1j * rng.uniform(0, np.pi, size=100_000))
        b = np.exp(-1j * rng.uniform(0, np.pi, size=100_000))
        c = np.exp(-1j * rng.uniform(0, np.pi, size=100_000))
        vals = np.abs(1 - a * b - b * c - c * a)
        assert vals.max() <= 2 * np.sqrt(2) + 1e-9


class TestTrustCoefficient:
    def test_ghz_paper_pattern_passes(self):
        res = trust_coefficient_check(
            GHZ, 0.14, ghz_anticommuter(), qG=1.0,
            samples=SamplingSpec(grid_points=24, random_samples=2000, multistarts=4),
        )
        assert res.passed
        assert res.max_violation <= 1e-9
        assert res.analytic_failures == 0

    def test_zero_coefficient_passes(self):
        res = trust_coefficient_check(
            GHZ, 0.0, ghz_anticommuter(), qG=1.0,
            samples=SamplingSpec(grid_points=12, random_samples=500, multistarts=2),
        )
        assert res.passed

    def test_half_coefficient_fails_with_witness(self):
        res = trust_coefficient_check(
            GHZ, 0.5, ghz_anticommuter(), qG=1.0,
            samples=SamplingSpec(grid_points=12, random_samples=500, multistarts=2),
        )
        assert not res.passed
        assert res.max_violation > 0
        zetas = np.array(res.witness)
        assert np.allclose(np.abs(zetas), 1.0, atol=1e-9)

    def test_invalid_anticommuter_named_rejection(self):
        bad = reverse_diagonal_anticommuter(3, [1, 1, 1, 1])
        with pytest.raises(InvalidOperatorError, match="anticommute"):
            trust_coefficient_check(GHZ, 0.1, bad, qG=1.0)

    def test_family_members_valid_for_n2(self):
        from direx.xorgames import _validate_anticommuter

        members = list(anticommuter_family(2))
        assert len(members) == 2
        for m in members:
            _validate_anticommuter(2, m)

    def test_search_ghz_exceeds_014(self):
        v = trust_coefficient_search(
            GHZ,
            samples=SamplingSpec(grid_points=12, random_samples=500, multistarts=2),
            classification="strong-self-test",
        )
        assert v >= 0.14

    def test_search_chsh_positive(self):
        v = trust_coefficient_search(
            CHSH,
            samples=SamplingSpec(grid_points=16, random_samples=1000, multistarts=2),
            classification="strong-self-test",
        )
        assert 0.05 <= v <= np.sqrt(2) / 2

    def test_search_requires_strong_self_test(self):
        with pytest.raises(ValueError):
            trust_coefficient_search(all_plus_game(), classification="not-self-test")

    def test_dense_anticommuter_path(self):
        # conjugating by a unitary on the trailing qubits keeps validity but
        # breaks the reverse-diagonal shape, exercising the eigenvalue path
        rng = np.random.default_rng(21)
        w, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
        u = np.kron(np.eye(2), w)
        dense = HermitianOperator(u @ ghz_anticommuter().entries @ u.conj().T)
        assert np.max(np.abs(dense.entries[np.fliplr(np.eye(8, dtype=bool))])) < 1.0
        res = trust_coefficient_check(
            GHZ, 0.0, dense, qG=1.0,
            samples=SamplingSpec(grid_points=6, random_samples=100, multistarts=1),
        )
        assert res.passed  # zero coefficient reduces to the score bound


class TestConstantsBundles:
    def test_ghz_constants(self):
        c = ghz_constants()
        assert c.qG == 1.0 and c.wG == 1.0 and c.fG == 0.0
        assert c.vG_lower == pytest.approx(0.14)

    def test_chsh_constants(self):
        c = chsh_constants()
        assert c.qG == pytest.approx(np.sqrt(2) / 2)
        assert 0 < c.vG_lower <= c.qG

    def test_analyze_game_chsh(self):
        consts = analyze_game(CHSH, vg_lower=0.10, provenance="frozen")
        assert consts.classification == "strong-self-test"
        assert consts.wG == pytest.approx((1 + np.sqrt(2) / 2) / 2)
