import numpy as np
import pytest

from direx.errors import InvalidOperatorError
from direx.matrixcore import (
    HermitianOperator,
    PsdOperator,
    eig_hermitian,
    from_pairs,
    loewner_leq,
    matrix_power,
    min_eigenvalue,
    schatten_norm,
    to_pairs,
)


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (a + a.conj().T)


def random_psd(rng, d, trace=None):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = a @ a.conj().T
    if trace is not None:
        m *= trace / m.trace().real
    return m


class TestConstruction:
    def test_rejects_non_hermitian(self):
        with pytest.raises(InvalidOperatorError):
            HermitianOperator([[0, 1], [2, 0]])

    def test_rejects_non_square(self):
        with pytest.raises(InvalidOperatorError):
            HermitianOperator(np.zeros((2, 3)))

    def test_rejects_dimension_above_cap(self):
        with pytest.raises(InvalidOperatorError):
            HermitianOperator(np.eye(65))

    def test_accepts_dimension_at_cap(self):
        assert HermitianOperator(np.eye(64)).dim == 64

    def test_psd_rejects_negative_eigenvalue(self):
        with pytest.raises(InvalidOperatorError):
            PsdOperator.from_array(np.diag([1.0, -1e-6]))

    def test_psd_tolerates_tiny_negative(self):
        p = PsdOperator.from_array(np.diag([1.0, -5e-11]))
        assert p.dim == 2

    def test_entries_immutable(self):
        h = HermitianOperator(np.eye(2))
        with pytest.raises(ValueError):
            h.entries[0, 0] = 5.0


class TestEig:
    def test_identity_eigenvalues(self):
        w, _ = eig_hermitian(np.eye(2))
        assert np.allclose(w, [1.0, 1.0])

    def test_pauli_x_eigenvalues(self):
        w, _ = eig_hermitian([[0, 1], [1, 0]])
        assert np.allclose(w, [-1.0, 1.0])

    def test_reconstruction_residual_random(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = random_hermitian(rng, 8)
            w, u = eig_hermitian(a)
            resid = a - (u * w) @ u.conj().T
            norm = schatten_norm(a, np.inf)
            assert schatten_norm(resid, np.inf) <= 1e-10 * max(norm, 1.0)
            assert np.all(np.diff(w) >= 0)
            assert np.allclose(u @ u.conj().T, np.eye(8), atol=1e-12)


class TestMatrixPower:
    def test_identity_any_power(self):
        for p in (0.5, 1.0, 3.7):
            out = matrix_power(PsdOperator.from_array(np.eye(3)), p)
            assert np.allclose(out.entries, np.eye(3))

    def test_diagonal_square_root(self):
        out = matrix_power(PsdOperator.from_array(np.diag([4.0, 1.0])), 0.5)
        assert np.allclose(out.entries, np.diag([2.0, 1.0]))

    def test_square_root_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = random_psd(rng, 6)
            root = matrix_power(PsdOperator.from_array(a), 0.5)
            back = root.entries @ root.entries
            assert np.max(np.abs(back - a)) <= 1e-9 * max(np.abs(a).max(), 1.0)

    def test_rejects_nonpositive_power(self):
        with pytest.raises(ValueError):
            matrix_power(PsdOperator.from_array(np.eye(2)), 0.0)

    def test_zero_eigenvalue_maps_to_zero(self):
        out = matrix_power(PsdOperator.from_array(np.diag([1.0, 0.0])), 0.3)
        assert np.allclose(out.entries, np.diag([1.0, 0.0]))


class TestSchattenNorm:
    def test_identity(self):
        for d in (2, 5):
            for p in (1.0, 2.0, 3.5):
                assert schatten_norm(np.eye(d), p) == pytest.approx(d ** (1 / p))

    def test_pauli_x_two_norm(self):
        assert schatten_norm([[0, 1], [1, 0]], 2) == pytest.approx(np.sqrt(2))

    def test_two_norm_is_trace_form(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = rng.normal(size=(5, 7)) + 1j * rng.normal(size=(5, 7))
            lhs = schatten_norm(a, 2) ** 2
            rhs = np.trace(a.conj().T @ a).real
            assert abs(lhs - rhs) <= 1e-10 * max(rhs, 1.0)

    def test_monotone_nonincreasing_in_p(self):
        rng = np.random.default_rng(13)
        ps = np.linspace(1.0, 8.0, 15)
        for _ in range(5):
            a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
            vals = [schatten_norm(a, p) for p in ps] + [schatten_norm(a, np.inf)]
            assert all(x >= y - 1e-9 for x, y in zip(vals, vals[1:]))

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            schatten_norm(np.eye(2), 0.5)


class TestLoewnerProperties:
    """Operator-monotonicity and superadditivity of fractional powers."""

    def test_power_monotone(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            d = int(rng.integers(2, 9))
            z = random_psd(rng, d)
            w = z + random_psd(rng, d)
            gamma = float(rng.uniform(0.0, 1.0))
            zg = matrix_power(PsdOperator.from_array(z), gamma) if gamma > 0 else None
            if gamma == 0.0:
                continue
            wg = matrix_power(PsdOperator.from_array(w), gamma)
            diff = wg.entries - zg.entries
            assert min_eigenvalue(HermitianOperator(diff)) >= -1e-9

    def test_trace_power_superadditive(self):
        rng = np.random.default_rng(19)
        for _ in range(25):
            d = int(rng.integers(2, 9))
            z = random_psd(rng, d)
            x = random_psd(rng, d)
            w = z + x
            gamma = float(rng.uniform(0.0, 1.0))
            p = 1.0 + gamma
            lhs = (
                matrix_power(PsdOperator.from_array(x), p).trace()
                + matrix_power(PsdOperator.from_array(z), p).trace()
            )
            rhs = matrix_power(PsdOperator.from_array(w), p).trace()
            assert lhs <= rhs + 1e-9

    def test_loewner_leq(self):
        assert loewner_leq(np.diag([1.0, 1.0]), np.diag([2.0, 1.0]))
        assert not loewner_leq(np.diag([2.0, 1.0]), np.diag([1.0, 1.0]))


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(23)
        a = random_hermitian(rng, 4)
        back = from_pairs(to_pairs(HermitianOperator(a)))
        assert np.allclose(back, a)

    def test_rejects_malformed(self):
        with pytest.raises(InvalidOperatorError):
            from_pairs([[1.0, 2.0]])
