"""Renyi divergences, max-divergence, smoothing, and the operator
inequalities that drive the security analysis.

States are either plain PSD operators or classical-quantum (CQ) states,
stored block-diagonally: one subnormalized block per classical label.
Support containment is enforced with an eigenvalue cutoff of 1e-10, and
powers of the reference operator are taken on its support only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SupportViolationError
from .matrixcore import HermitianOperator, PsdOperator, pseudo_power
from .rates import uncertainty_exponent

SUPPORT_CUTOFF = 1e-10


@dataclass(frozen=True)
class CqState:
    """Block-diagonal classical-quantum subnormalized state."""

    labels: tuple
    blocks: tuple  # of PsdOperator, all the same dimension

    def __post_init__(self):
        if len(self.labels) != len(self.blocks):
            raise ValueError("labels and blocks must align")
        if not self.blocks:
            raise ValueError("need at least one block")
        dims = {b.dim for b in self.blocks}
        if len(dims) != 1:
            raise ValueError(f"blocks must share a dimension, got {dims}")
        total = self.trace()
        if not -1e-12 <= total <= 1.0 + 1e-9:
            raise ValueError(f"total trace {total} outside [0, 1]")

    @classmethod
    def from_arrays(cls, labels, arrays) -> "CqState":
        return cls(tuple(labels), tuple(PsdOperator.from_array(a) for a in arrays))

    @property
    def block_dim(self) -> int:
        return self.blocks[0].dim

    def trace(self) -> float:
        return float(sum(b.trace() for b in self.blocks))

    def block_arrays(self) -> list:
        return [b.entries for b in self.blocks]

    def marginal(self) -> np.ndarray:
        """Sum of the blocks (the quantum side's reduced operator)."""
        return np.sum(self.block_arrays(), axis=0)


@dataclass(frozen=True)
class BlockOperator:
    """A labeled block-diagonal PSD operator without the state-trace cap.

    Used for reference operators whose total weight exceeds 1 (for example
    failure-weighted bounding operators).
    """

    labels: tuple
    blocks: tuple  # of ndarray

    def block_arrays(self) -> list:
        return [np.asarray(b, dtype=np.complex128) for b in self.blocks]

    def trace(self) -> float:
        return float(sum(np.asarray(b).trace().real for b in self.blocks))


def _block_pairs(rho, sigma):
    """Align rho and sigma into lists of (rho_block, sigma_block) arrays.

    sigma may be a CqState/BlockOperator with matching labels, or a single
    operator broadcast across blocks (the identity-on-labels convention).
    """
    if isinstance(rho, (CqState, BlockOperator)):
        rb = rho.block_arrays()
        if isinstance(sigma, (CqState, BlockOperator)):
            if sigma.labels != rho.labels:
                raise ValueError("label mismatch between the two states")
            sb = sigma.block_arrays()
        else:
            s = sigma.entries if isinstance(sigma, (PsdOperator, HermitianOperator)) \
                else np.asarray(sigma, dtype=np.complex128)
            sb = [s] * len(rb)
        return list(zip(rb, sb)), rho.trace()
    r = rho.entries if isinstance(rho, (PsdOperator, HermitianOperator)) \
        else np.asarray(rho, dtype=np.complex128)
    s = sigma.entries if isinstance(sigma, (PsdOperator, HermitianOperator)) \
        else np.asarray(sigma, dtype=np.complex128)
    return [(r, s)], float(r.trace().real)


def _check_support(pairs, cutoff=SUPPORT_CUTOFF):
    """Raise unless every rho block is supported inside its sigma block."""
    worst = 0.0
    for rb, sb in pairs:
        w, u = np.linalg.eigh(0.5 * (sb + sb.conj().T))
        null = u[:, w <= cutoff]
        if null.shape[1] == 0:
            continue
        overlap = float(np.max(np.abs(np.einsum("ij,jk,ki->i",
                                                null.conj().T, rb, null).real)))
        worst = max(worst, overlap)
    if worst > cutoff:
        raise SupportViolationError(
            f"support violation: null-eigenvector overlap {worst:.3e}", worst)


def _psd_trace_power(m: np.ndarray, p: float) -> float:
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    w = np.where(w > 0.0, w, 0.0)
    return float(np.sum(w**p))


def trace_power(rho, p: float) -> float:
    """Tr(rho**p) for a PSD operator, negative eigenvalues clamped to zero."""
    r = rho.entries if isinstance(rho, (PsdOperator, HermitianOperator)) else np.asarray(rho)
    return _psd_trace_power(r, p)


def renyi_divergence(rho, sigma, alpha: float) -> float:
    """Sandwiched Renyi divergence of order alpha in (1, 2].

    Accepts PSD operators or CQ states (sigma may broadcast across labels).
    Subnormalized inputs are handled with the 1/Tr(rho) convention.
    """
    if not 1 < alpha <= 2:
        raise ValueError(f"order must lie in (1, 2], got {alpha}")
    pairs, tr = _block_pairs(rho, sigma)
    if tr <= 0:
        raise ValueError("state must have positive trace")
    _check_support(pairs)
    expo = (1.0 - alpha) / (2.0 * alpha)
    total = 0.0
    for rb, sb in pairs:
        spow = pseudo_power(sb, expo, cutoff=SUPPORT_CUTOFF)
        inner = spow @ rb @ spow
        total += _psd_trace_power(inner, alpha)
    return float((np.log2(total) - np.log2(tr)) / (alpha - 1.0))


def dmax(rho, sigma) -> float:
    """Max-divergence: log of the smallest c with rho <= c * sigma."""
    pairs, _ = _block_pairs(rho, sigma)
    _check_support(pairs)
    worst = 0.0
    for rb, sb in pairs:
        sinv = pseudo_power(sb, -0.5, cutoff=SUPPORT_CUTOFF)
        w = np.linalg.eigvalsh(sinv @ rb @ sinv)
        worst = max(worst, float(w[-1]))
    if worst <= 0:
        return -np.inf
    return float(np.log2(worst))


def trace_distance(rho, other) -> float:
    """Trace norm of the difference; blockwise for CQ states."""
    if isinstance(rho, CqState):
        return float(sum(
            np.abs(np.linalg.eigvalsh(a - b)).sum()
            for a, b in zip(rho.block_arrays(), other.block_arrays())))
    a = rho.entries if isinstance(rho, (PsdOperator, HermitianOperator)) else np.asarray(rho)
    b = other.entries if isinstance(other, (PsdOperator, HermitianOperator)) else np.asarray(other)
    return float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def smooth_from_renyi(rho: CqState, sigma, alpha: float, epsilon: float):
    """Smooth a CQ state down below a scaled reference operator.

    Returns (rho_smoothed, bound) where bound = D_alpha(rho||sigma) +
    (2 log(1/eps) + 1)/(alpha - 1); the smoothed state satisfies
    rho' <= 2**bound * sigma, stays classical-quantum, and is within eps
    trace distance of rho.  Construction: with Delta the positive part of
    (rho - 2**bound sigma), conjugate rho by
    sigma~^(1/2) (sigma~ + Delta)^(-1/2) blockwise.
    """
    if not 1 < alpha <= 2:
        raise ValueError(f"order must lie in (1, 2], got {alpha}")
    if not 0 < epsilon <= np.sqrt(2.0) + 1e-12:
        raise ValueError(f"smoothing parameter must lie in (0, sqrt(2)], got {epsilon}")
    base = renyi_divergence(rho, sigma, alpha)
    bound = base + (2.0 * np.log2(1.0 / epsilon) + 1.0) / (alpha - 1.0)
    pairs, _ = _block_pairs(rho, sigma)
    scale = 2.0**bound
    new_blocks = []
    for rb, sb in pairs:
        st = scale * sb
        diff = rb - st
        w, u = np.linalg.eigh(0.5 * (diff + diff.conj().T))
        delta = (u * np.where(w > 0, w, 0.0)) @ u.conj().T
        g = _matrix_sqrt(st) @ pseudo_power(st + delta, -0.5, cutoff=1e-14)
        nb = g @ rb @ g.conj().T
        nb = 0.5 * (nb + nb.conj().T)
        # numerical floor: clip eigenvalues a hair below zero back up
        wn, un = np.linalg.eigh(nb)
        nb = (un * np.where(wn > 0, wn, 0.0)) @ un.conj().T
        new_blocks.append(nb)
    smoothed = CqState.from_arrays(rho.labels, new_blocks)
    return smoothed, float(bound)


def _matrix_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (u * np.sqrt(np.where(w > 0, w, 0.0))) @ u.conj().T


@dataclass(frozen=True)
class MeasurementInstance:
    """The four conditional operators of a qubit measurement on the far side
    of an arbitrary correlation.

    Built from a matrix mapping the input space into (environment x qubit);
    the computational and diagonal splits both add back to the full state.
    """

    Z: np.ndarray
    rho: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray
    rho_plus: np.ndarray
    rho_minus: np.ndarray


def measurement_split(Z) -> MeasurementInstance:
    """Split a correlation matrix into its four conditional operators."""
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim != 2 or Z.shape[0] % 2 != 0:
        raise ValueError(
            f"matrix must map into (environment x qubit); got shape {Z.shape}")
    x = Z[0::2, :]
    y = Z[1::2, :]
    rho = Z.conj().T @ Z
    rho0 = x.conj().T @ x
    rho1 = y.conj().T @ y
    plus = (x + y) / np.sqrt(2.0)
    minus = (x - y) / np.sqrt(2.0)
    return MeasurementInstance(
        Z=Z, rho=rho, rho0=rho0, rho1=rho1,
        rho_plus=plus.conj().T @ plus, rho_minus=minus.conj().T @ minus,
    )


@dataclass(frozen=True)
class UncertaintyCheck:
    delta: float
    lhs_ratio: float
    rhs: float
    holds: bool


def uncertainty_check(inst: MeasurementInstance, epsilon: float,
                      slack: float = 1e-9) -> UncertaintyCheck:
    """Verify the one-round uncertainty inequality on a measurement instance.

    delta is the relative weight of the 1-outcome under the (1+eps)-power
    trace; the diagonal-basis powers must fall below 2**(-eps * Pi(eps, delta))
    relative to the full state's power trace.
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"exponent must lie in (0, 1], got {epsilon}")
    denom = _psd_trace_power(inst.rho, 1.0 + epsilon)
    if denom <= 0:
        raise ValueError("state must have positive trace")
    delta = _psd_trace_power(inst.rho1, 1.0 + epsilon) / denom
    lhs = (_psd_trace_power(inst.rho_plus, 1.0 + epsilon)
           + _psd_trace_power(inst.rho_minus, 1.0 + epsilon)) / denom
    rhs = 2.0 ** (-epsilon * float(uncertainty_exponent(epsilon, min(max(delta, 0.0), 1.0))))
    return UncertaintyCheck(delta=float(delta), lhs_ratio=float(lhs), rhs=float(rhs),
                            holds=bool(lhs <= rhs + slack))


@dataclass(frozen=True)
class SchattenCheck:
    lhs: float
    rhs: float
    holds: bool


def schatten_ineq_check(X, Y, p: float, slack: float = 1e-9) -> SchattenCheck:
    """Two-sided p-norm inequality for p >= 2: the power sum of the rotated
    pair (X+-Y)/sqrt(2) against the dual-exponent combination of the norms."""
    from .matrixcore import schatten_norm

    X = np.asarray(X, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Y.shape}")
    if not p >= 2:
        raise ValueError(f"requires p >= 2, got {p}")
    pprime = 1.0 / (1.0 - 1.0 / p)
    lhs = (schatten_norm((X + Y) / np.sqrt(2.0), p) ** p
           + schatten_norm((X - Y) / np.sqrt(2.0), p) ** p)
    rhs = 2.0 ** (1.0 - p / 2.0) * (
        schatten_norm(X, p) ** pprime + schatten_norm(Y, p) ** pprime
    ) ** (p / pprime)
    return SchattenCheck(lhs=float(lhs), rhs=float(rhs),
                         holds=bool(lhs <= rhs + slack))


def conditional_renyi(rho: CqState, alpha: float, sigma=None,
                      grid: int = 33) -> float:
    """Conditional Renyi entropy of the classical label given the quantum side.

    With sigma supplied this is the sigma-parameterized quantity
    -D_alpha(rho || I_labels x sigma); otherwise a coarse maximization over
    mixtures of the reduced state and the maximally mixed operator.
    """
    if sigma is not None:
        return -renyi_divergence(rho, _normalize(sigma), alpha)
    d = rho.block_dim
    reduced = rho.marginal()
    reduced = reduced / reduced.trace().real
    best = -np.inf
    for w in np.linspace(0.0, 1.0, grid):
        cand = (1.0 - w) * reduced + w * np.eye(d) / d
        best = max(best, -renyi_divergence(rho, cand, alpha))
    return float(best)


def _normalize(sigma):
    s = sigma.entries if isinstance(sigma, (PsdOperator, HermitianOperator)) \
        else np.asarray(sigma, dtype=np.complex128)
    return s / s.trace().real


def pinching_channel(dims) -> "callable":
    """Projective pinching onto consecutive blocks of the given sizes."""
    total = int(np.sum(dims))
    projs = []
    start = 0
    for d in dims:
        p = np.zeros((total, total))
        p[start:start + d, start:start + d] = np.eye(d)
        projs.append(p)
        start += d

    def apply(m):
        m = np.asarray(m, dtype=np.complex128)
        return sum(p @ m @ p for p in projs)

    return apply
