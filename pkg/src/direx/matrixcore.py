"""Dense complex linear algebra kernel for small operators (dimension <= 64).

Everything here is a thin, validated layer over numpy's eigensolvers:
Hermitian eigendecomposition, fractional operator powers, Schatten norms,
and Loewner-order tests.  Operators are immutable after construction and
all functions are pure, so values can be shared freely across concurrent
trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidOperatorError

DIM_CAP = 64
HERMITIAN_ATOL = 1e-12
PSD_EIG_FLOOR = -1e-10


def _as_square_complex(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidOperatorError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[0] > DIM_CAP:
        raise InvalidOperatorError(
            f"dimension {a.shape[0]} outside supported range [1, {DIM_CAP}]"
        )
    return a


@dataclass(frozen=True)
class HermitianOperator:
    """A validated Hermitian matrix of dimension at most 64."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = _as_square_complex(self.entries)
        if not np.allclose(a, a.conj().T, rtol=0.0, atol=HERMITIAN_ATOL):
            worst = float(np.max(np.abs(a - a.conj().T)))
            raise InvalidOperatorError(
                f"matrix is not Hermitian (max |A - A^dag| = {worst:.3e})"
            )
        a = 0.5 * (a + a.conj().T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> float:
        return float(self.entries.trace().real)


@dataclass(frozen=True)
class PsdOperator:
    """A positive semidefinite operator, stored with its Hermitian base.

    Eigenvalues in [-1e-10, 0) are treated as numerical noise and clamped
    to zero by :func:`matrix_power`; anything more negative is rejected at
    construction.
    """

    base: HermitianOperator

    def __post_init__(self):
        lo = min_eigenvalue(self.base)
        if lo < PSD_EIG_FLOOR:
            raise InvalidOperatorError(
                f"matrix is not PSD (smallest eigenvalue {lo:.3e})"
            )

    @classmethod
    def from_array(cls, entries) -> "PsdOperator":
        return cls(HermitianOperator(entries))

    @property
    def entries(self) -> np.ndarray:
        return self.base.entries

    @property
    def dim(self) -> int:
        return self.base.dim

    def trace(self) -> float:
        return self.base.trace()


def eig_hermitian(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian operator.

    Parameters
    ----------
    a : HermitianOperator or array_like

    Returns
    -------
    eigenvalues : ndarray
        Real eigenvalues in ascending order.
    eigenbasis : ndarray
        Unitary matrix whose columns are the corresponding eigenvectors,
        so ``a = U @ diag(w) @ U.conj().T``.
    """
    if not isinstance(a, HermitianOperator):
        a = HermitianOperator(a)
    w, u = np.linalg.eigh(a.entries)
    return w, u


def min_eigenvalue(a) -> float:
    if isinstance(a, PsdOperator):
        a = a.base
    if not isinstance(a, HermitianOperator):
        a = HermitianOperator(a)
    return float(np.linalg.eigvalsh(a.entries)[0])


def matrix_power(a: PsdOperator, p: float) -> PsdOperator:
    """Raise a PSD operator to a positive real power in its eigenbasis.

    Zero eigenvalues map to zero for every ``p > 0`` (the convention
    ``0**p = 0``); eigenvalues in [-1e-10, 0) are clamped to zero first.
    """
    if not isinstance(a, PsdOperator):
        a = PsdOperator.from_array(a)
    if not p > 0:
        raise ValueError(f"power must be positive, got {p}")
    w, u = eig_hermitian(a.base)
    w = np.where(w < 0.0, 0.0, w)
    wp = np.where(w > 0.0, w**p, 0.0)
    out = (u * wp) @ u.conj().T
    return PsdOperator(HermitianOperator(out))


def pseudo_power(entries: np.ndarray, p: float, cutoff: float = 1e-10) -> np.ndarray:
    """Power of a PSD matrix restricted to its support.

    Eigenvalues at or below ``cutoff`` are treated as zero, which makes
    negative powers act as pseudo-inverse powers.  Returns a raw ndarray
    since callers compose the result immediately.
    """
    a = 0.5 * (np.asarray(entries, dtype=np.complex128) + np.asarray(entries).conj().T)
    w, u = np.linalg.eigh(a)
    wp = np.where(w > cutoff, w, 1.0) ** p
    wp = np.where(w > cutoff, wp, 0.0)
    return (u * wp) @ u.conj().T


def schatten_norm(a, p: float) -> float:
    """Schatten p-norm, ``(sum of singular values**p)**(1/p)``.

    ``p`` must be at least 1; ``p = inf`` gives the operator norm.
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2:
        raise InvalidOperatorError(f"expected a matrix, got shape {a.shape}")
    if not (p >= 1):
        raise ValueError(f"Schatten norm requires p >= 1, got {p}")
    s = np.linalg.svd(a, compute_uv=False)
    if np.isinf(p):
        return float(s[0]) if s.size else 0.0
    return float(np.sum(s**p) ** (1.0 / p))


def loewner_leq(a, b, tol: float = 1e-9) -> bool:
    """True when ``a <= b`` in the Loewner (PSD) order, within tolerance."""
    a = a.entries if isinstance(a, (HermitianOperator, PsdOperator)) else np.asarray(a)
    b = b.entries if isinstance(b, (HermitianOperator, PsdOperator)) else np.asarray(b)
    return min_eigenvalue(HermitianOperator(b - a)) >= -tol


def to_pairs(a) -> list:
    """Serialize a complex matrix as nested [re, im] pairs."""
    a = a.entries if isinstance(a, (HermitianOperator, PsdOperator)) else np.asarray(a)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def from_pairs(pairs) -> np.ndarray:
    """Inverse of :func:`to_pairs`."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise InvalidOperatorError("expected nested [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]
