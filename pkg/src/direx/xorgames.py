"""n-player binary XOR games: score polynomial, torus maximization,
self-test classification, scoring operators, and trust-coefficient
certification.

A game is a probability distribution over n-bit input strings together with
a sign for each string; the players' outputs are scored on their XOR.  All
analysis below works on the torus representation of qubit strategies: the
optimal quantum score is the maximum modulus of the game's score polynomial
over unit-length phases, and self-testing is read off the structure of the
maxima of the cosine form of that polynomial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidOperatorError
from .matrixcore import HermitianOperator

PROB_SUM_ATOL = 1e-12
UNIT_ATOL = 1e-9
HESSIAN_EIG_THRESHOLD = 1e-6
CLASSIFICATIONS = ("not-self-test", "self-test", "strong-self-test", "inconclusive")


@dataclass(frozen=True)
class XorGame:
    """An n-player binary XOR game.

    entries maps each supported n-bit input (as a tuple of ints) to a pair
    (probability, sign); probabilities are exact rationals so that protocol
    input sampling can consume seed bits through an exact arithmetic decoder.
    """

    n: int
    entries: tuple  # tuple of (input bits tuple, Fraction prob, int sign)

    def __post_init__(self):
        if not (2 <= self.n <= 4):
            raise ValueError(f"player count must be in [2, 4], got {self.n}")
        seen = set()
        total = Fraction(0)
        for bits, p, eta in self.entries:
            if len(bits) != self.n or any(b not in (0, 1) for b in bits):
                raise ValueError(f"bad input string {bits}")
            if bits in seen:
                raise ValueError(f"duplicate input {bits}")
            seen.add(bits)
            if p < 0:
                raise ValueError("probabilities must be nonnegative")
            if eta not in (-1, 1):
                raise ValueError("signs must be +1 or -1")
            total += p
        if abs(float(total) - 1.0) > PROB_SUM_ATOL:
            raise ValueError(f"probabilities sum to {float(total)}, expected 1")

    @classmethod
    def from_support(cls, n, support) -> "XorGame":
        """Build from an iterable of (input, prob, sign).

        Inputs may be bit strings like "011" or tuples; probabilities may be
        decimal strings, Fractions, or floats (floats are snapped to exact
        rationals via their decimal representation).
        """
        entries = []
        for inp, p, eta in support:
            bits = tuple(int(b) for b in inp)
            if not isinstance(p, Fraction):
                p = Fraction(str(p))
            entries.append((bits, p, int(eta)))
        return cls(n, tuple(entries))

    @property
    def inputs(self) -> list:
        return [bits for bits, _, _ in self.entries]

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, p, _ in self.entries])

    @property
    def signs(self) -> np.ndarray:
        return np.array([eta for _, _, eta in self.entries], dtype=float)

    @property
    def input_matrix(self) -> np.ndarray:
        return np.array(self.inputs, dtype=float)

    def sign_of(self, bits) -> int:
        for b, _, eta in self.entries:
            if b == tuple(bits):
                return eta
        raise KeyError(f"input {bits} not in game support")

    def win_parity(self, bits) -> int:
        """Output parity that counts as a pass on the given input."""
        return (1 - self.sign_of(bits)) // 2

    def relabel(self, flips) -> "XorGame":
        """Flip signs per an n-bit vector b: eta'_i = eta_(i xor b)."""
        flips = tuple(int(x) for x in flips)
        table = {bits: eta for bits, _, eta in self.entries}
        new = []
        for bits, p, _ in self.entries:
            src = tuple(x ^ f for x, f in zip(bits, flips))
            if src not in table:
                raise ValueError("relabeling leaves the support")
            new.append((bits, p, table[src]))
        return XorGame(self.n, tuple(new))


def ghz_game() -> XorGame:
    """The three-player GHZ game: inputs uniform over {000, 011, 101, 110},
    pass iff the output XOR equals the OR of the input bits."""
    return XorGame.from_support(3, [
        ("000", "0.25", +1),
        ("011", "0.25", -1),
        ("101", "0.25", -1),
        ("110", "0.25", -1),
    ])


def chsh_game() -> XorGame:
    """The two-player CHSH game (pass iff output XOR equals input AND)."""
    return XorGame.from_support(2, [
        ("00", "0.25", +1),
        ("01", "0.25", +1),
        ("10", "0.25", +1),
        ("11", "0.25", -1),
    ])


_BUILTINS = {"ghz": ghz_game, "chsh": chsh_game}


def named_game(name: str) -> XorGame:
    try:
        return _BUILTINS[name.lower()]()
    except KeyError:
        raise KeyError(f"unknown built-in game {name!r}; have {sorted(_BUILTINS)}")


def game_to_record(game: XorGame) -> dict:
    return {
        "n": game.n,
        "support": [
            {"input": "".join(map(str, bits)), "p": str(p), "eta": eta}
            for bits, p, eta in game.entries
        ],
    }


def game_from_record(rec: dict) -> XorGame:
    return XorGame.from_support(
        rec["n"], [(e["input"], e["p"], e["eta"]) for e in rec["support"]]
    )


def load_game(path_or_name: str) -> XorGame:
    """Load a game definition file, or a named built-in."""
    if path_or_name.lower() in _BUILTINS:
        return named_game(path_or_name)
    with open(path_or_name) as f:
        return game_from_record(json.load(f))


# ---------------------------------------------------------------------------
# Score functionals


def eval_pg(game: XorGame, zetas) -> complex:
    """Complex score polynomial of the game at unit-length phases."""
    z = np.asarray(zetas, dtype=np.complex128)
    if z.shape != (game.n,):
        raise ValueError(f"expected {game.n} phases, got shape {z.shape}")
    if np.any(np.abs(np.abs(z) - 1.0) > UNIT_ATOL):
        raise ValueError("phases must have unit modulus")
    return complex(_pg_batch(game, z[None, :])[0])


def _pg_batch(game: XorGame, z: np.ndarray) -> np.ndarray:
    """Score polynomial on a batch of phase tuples, shape (..., n)."""
    coeff = game.probs * game.signs
    inp = game.input_matrix.astype(bool)  # (m, n)
    acc = np.ones(z.shape[:-1] + (len(coeff),), dtype=np.complex128)
    for k in range(game.n):
        acc = acc * np.where(inp[:, k], z[..., k: k + 1], 1.0)
    return acc @ coeff


def eval_zg(game: XorGame, thetas) -> float:
    """Cosine form of the score polynomial on n+1 angles."""
    th = np.asarray(thetas, dtype=float)
    if th.shape != (game.n + 1,):
        raise ValueError(f"expected {game.n + 1} angles, got shape {th.shape}")
    return float(_zg_batch(game, th[None, :])[0])


def _zg_batch(game: XorGame, th: np.ndarray) -> np.ndarray:
    coeff = game.probs * game.signs
    inp = game.input_matrix
    angles = th[..., :1] + th[..., 1:] @ inp.T
    return np.cos(angles) @ coeff


def _abs_pg_on_angles(game: XorGame, th: np.ndarray) -> np.ndarray:
    """|score polynomial| on a batch of angle tuples, shape (..., n)."""
    coeff = game.probs * game.signs
    inp = game.input_matrix
    return np.abs(np.exp(1j * (th @ inp.T)) @ coeff)


# ---------------------------------------------------------------------------
# Torus maximization

GRID_STEP = np.pi / 200
GRID_STEP_4P = np.pi / 25  # denser grids are not tractable for 4 players
_CHUNK = 1 << 21


def _grid_axes(game: XorGame):
    step = GRID_STEP if game.n <= 3 else GRID_STEP_4P
    # conjugating every phase conjugates the polynomial, so the first angle
    # only needs the upper half circle
    first = np.arange(0.0, np.pi + step / 2, step)
    rest = np.arange(0.0, 2 * np.pi, step)
    return [first] + [rest] * (game.n - 1)


def _grid_argmax(game: XorGame):
    axes = _grid_axes(game)
    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes))
    best_val, best_idx = -np.inf, 0
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        flat = np.arange(start, stop)
        coords = np.empty((stop - start, game.n))
        rem = flat
        for k in range(game.n - 1, -1, -1):
            rem, this = np.divmod(rem, sizes[k])
            coords[:, k] = axes[k][this]
        vals = _abs_pg_on_angles(game, coords)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), start + j
    coords = []
    rem = best_idx
    for k in range(game.n - 1, -1, -1):
        rem, this = divmod(rem, sizes[k])
        coords.append(axes[k][this])
    return best_val, np.array(coords[::-1])


def _zg_grad_hess(game: XorGame, theta: np.ndarray):
    coeff = game.probs * game.signs
    inp = game.input_matrix
    vecs = np.hstack([np.ones((len(coeff), 1)), inp])  # (m, n+1)
    a = vecs @ theta
    grad = -(coeff * np.sin(a)) @ vecs
    hess = -(vecs.T * (coeff * np.cos(a))) @ vecs
    return grad, hess


def refine_zg_max(game: XorGame, theta0, grad_tol: float = 1e-9,
                  max_iter: int = 200):
    """Local maximization of the cosine score from a starting point.

    Newton steps with backtracking, falling back to gradient ascent whenever
    the Newton direction is not an ascent direction.  Returns (value, angles)
    with the gradient norm driven below ``grad_tol``.
    """
    th = np.asarray(theta0, dtype=float).copy()
    val = float(_zg_batch(game, th[None, :])[0])
    for _ in range(max_iter):
        grad, hess = _zg_grad_hess(game, th)
        gn = float(np.linalg.norm(grad))
        if gn <= grad_tol:
            break
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = grad
        if float(step @ grad) <= 0:
            step = grad
        t = 1.0
        for _ in range(60):
            cand = th + t * step
            cval = float(_zg_batch(game, cand[None, :])[0])
            if cval >= val - 1e-15:
                th, val = cand, cval
                break
            t *= 0.5
        else:
            break
    return val, th


_SCORE_MEMO: dict = {}


def optimal_score(game: XorGame):
    """Optimal quantum score and a maximizing angle tuple.

    Coarse grid over the phase torus, then Newton refinement of the cosine
    form (the extra leading angle is seeded with the phase of the polynomial
    at the grid maximum).  Results are memoized per game.
    """
    key = game.entries
    if key in _SCORE_MEMO:
        val, th = _SCORE_MEMO[key]
        return val, th.copy()
    gval, gang = _grid_argmax(game)
    p = _pg_batch(game, np.exp(1j * gang)[None, :])[0]
    theta0 = np.concatenate([[-np.angle(p)], gang])
    val, th = refine_zg_max(game, theta0)
    if val < gval - 1e-12:
        val, th = gval, theta0
    _SCORE_MEMO[key] = (float(val), th.copy())
    return float(val), th


def classical_optimum(game: XorGame) -> float:
    """Best winning probability over deterministic strategies, exhaustively."""
    best = -np.inf
    inp = game.input_matrix.astype(int)
    coeff = game.probs * game.signs
    for assign in range(4**game.n):
        score = 0.0
        tables = [(assign >> (2 * j)) & 3 for j in range(game.n)]
        outs = np.zeros(len(inp), dtype=int)
        for j in range(game.n):
            a0, a1 = tables[j] & 1, (tables[j] >> 1) & 1
            outs ^= np.where(inp[:, j] == 0, a0, a1)
        score = float(coeff @ np.where(outs == 0, 1.0, -1.0))
        best = max(best, score)
    return (1.0 + best) / 2.0


# ---------------------------------------------------------------------------
# Self-test classification


def _canonical_max(theta: np.ndarray) -> np.ndarray:
    t = np.mod(theta, 2 * np.pi)
    t[t > 2 * np.pi - 1e-7] = 0.0
    return t


def _same_max(a: np.ndarray, b: np.ndarray, tol: float = 1e-5) -> bool:
    d = np.abs(np.mod(a - b + np.pi, 2 * np.pi) - np.pi)
    return bool(np.all(d < tol))


def enumerate_maxima(game: XorGame, qG: float, seed: int = 0,
                     n_starts: int = 60, tol: float = 1e-7):
    """All distinct global maxima of the cosine score found by multistart."""
    rng = np.random.default_rng(seed)
    starts = rng.uniform(0, 2 * np.pi, size=(n_starts, game.n + 1))
    found = []
    for s in starts:
        val, th = refine_zg_max(game, s)
        if val < qG - tol:
            continue
        th = _canonical_max(th)
        if not any(_same_max(th, f) for f in found):
            found.append(th)
    return found


@dataclass(frozen=True)
class GameConstants:
    """Derived quantities of a game used by the rate machinery."""

    qG: float
    wG: float
    fG: float
    maximizer: tuple
    classification: str
    vG_lower: float
    provenance: str = ""

    def __post_init__(self):
        if abs(self.wG - (1 + self.qG) / 2) > 1e-9 or abs(self.fG - (1 - self.wG)) > 1e-9:
            raise ValueError("winning/failing probabilities inconsistent with score")
        if not (0.0 <= self.vG_lower <= self.qG + 1e-9):
            raise ValueError("trust coefficient bound out of range")


def classify_selftest(game: XorGame, seeds=(0, 1, 2)) -> str:
    """Classify a game as not-self-test / self-test / strong-self-test.

    Criteria, checked on the enumerated maxima of the cosine score:
    (A) some maximum has no trailing angle that is a multiple of pi;
    (B) all maxima agree modulo 2*pi up to a global sign; and the
    strong variant additionally requires every maximum to have a
    nonsingular Hessian (smallest absolute eigenvalue >= 1e-6).
    Enumeration is repeated over multistart seeds; disagreement on the
    set of maxima yields "inconclusive".
    """
    qG, _ = optimal_score(game)
    runs = [enumerate_maxima(game, qG, seed=s) for s in seeds]
    counts = {len(r) for r in runs}
    if len(counts) != 1:
        return "inconclusive"
    maxima = runs[0]
    for other in runs[1:]:
        for m in other:
            if not any(_same_max(m, f) or _same_max(m, _canonical_max(-f))
                       for f in maxima):
                return "inconclusive"
    if not maxima:
        return "inconclusive"

    def off_pi_lattice(th):
        d = np.abs(np.mod(th[1:] + np.pi / 2, np.pi) - np.pi / 2)
        return bool(np.all(d > 1e-6))

    cond_a = any(off_pi_lattice(m) for m in maxima)
    anchors = [m for m in maxima if off_pi_lattice(m)]
    cond_b = False
    for anchor in anchors or maxima[:1]:
        neg = _canonical_max(-anchor)
        if all(_same_max(m, anchor) or _same_max(m, neg) for m in maxima):
            cond_b = True
            break
    if not (cond_a and cond_b):
        return "not-self-test"
    for m in maxima:
        _, hess = _zg_grad_hess(game, m)
        if float(np.min(np.abs(np.linalg.eigvalsh(hess)))) < HESSIAN_EIG_THRESHOLD:
            return "inconclusive"
    return "strong-self-test"


def positively_align(game: XorGame):
    """Relabel signs so a maximum lands strictly inside (0, pi)^n.

    Scans flip vectors in lexicographic order and returns the first
    (game', b) whose cosine score has a maximum with every trailing angle
    in the open interval (0, pi).
    """
    qG, _ = optimal_score(game)
    for mask in range(2**game.n):
        flips = tuple((mask >> (game.n - 1 - j)) & 1 for j in range(game.n))
        try:
            cand = game.relabel(flips)
        except ValueError:
            continue
        for m in enumerate_maxima(cand, qG, seed=0):
            body = np.mod(m[1:] + np.pi, 2 * np.pi) - np.pi
            if np.all(body > 1e-6) and np.all(body < np.pi - 1e-6):
                return cand, flips
    raise ValueError("no flip vector aligns the game")


# ---------------------------------------------------------------------------
# Scoring operators and the trust coefficient


def scoring_operator(game: XorGame, zetas) -> HermitianOperator:
    """Reverse-diagonal scoring operator of a canonical-form qubit strategy."""
    z = np.asarray(zetas, dtype=np.complex128)
    if z.shape != (game.n,):
        raise ValueError(f"expected {game.n} phases, got shape {z.shape}")
    if np.any(np.abs(np.abs(z) - 1.0) > UNIT_ATOL) or np.any(z.imag < -UNIT_ATOL):
        raise ValueError("phases must be unit length with nonnegative imaginary part")
    d = 2**game.n
    m = np.zeros((d, d), dtype=np.complex128)
    for b in range(d):
        bits = [(b >> (game.n - 1 - j)) & 1 for j in range(game.n)]
        zz = np.where(np.array(bits) == 1, z.conj(), z)
        m[b, d - 1 - b] = _pg_batch(game, zz[None, :])[0]
    return HermitianOperator(m)


def reverse_diagonal_entries(game: XorGame, th: np.ndarray) -> np.ndarray:
    """Scoring-operator entries for a batch of angle tuples.

    Returns shape (..., 2**n): entry b is the polynomial evaluated with the
    phases conjugated on the bits set in b.
    """
    d = 2**game.n
    out = np.empty(th.shape[:-1] + (d,), dtype=np.complex128)
    for b in range(d):
        signs = np.array([-1.0 if (b >> (game.n - 1 - j)) & 1 else 1.0
                          for j in range(game.n)])
        coeff = game.probs * game.signs
        inp = game.input_matrix
        out[..., b] = np.exp(1j * ((th * signs) @ inp.T)) @ coeff
    return out


def generation_observable(n: int) -> np.ndarray:
    """The first component's canonical input-0 observable on 2**n dimensions."""
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    return np.kron(x, np.eye(2 ** (n - 1)))


def reverse_diagonal_anticommuter(n: int, top_entries) -> HermitianOperator:
    """Reverse-diagonal unit-modulus operator from its top-half entries.

    The bottom half is the conjugate mirror, so the matrix is Hermitian and
    squares to the identity whenever the entries are unit modulus; validity
    against the anticommutation requirement is checked by
    trust_coefficient_check.
    """
    d = 2**n
    half = d // 2
    vals = [complex(v) for v in top_entries]
    if len(vals) != half:
        raise ValueError(f"need {half} entries, got {len(vals)}")
    m = np.zeros((d, d), dtype=np.complex128)
    for b in range(half):
        m[b, d - 1 - b] = vals[b]
        m[d - 1 - b, b] = np.conj(vals[b])
    return HermitianOperator(m)


def ghz_anticommuter() -> HermitianOperator:
    """The reverse-diagonal sign pattern (+,+,-,-,-,-,+,+) used for GHZ."""
    return reverse_diagonal_anticommuter(3, [1, 1, -1, -1])


def _validate_anticommuter(n: int, anti: HermitianOperator):
    d = 2**n
    a = anti.entries
    if a.shape != (d, d):
        raise InvalidOperatorError(
            f"anticommuter has dimension {a.shape[0]}, expected {d}")
    if np.max(np.abs(a @ a - np.eye(d))) > 1e-9:
        raise InvalidOperatorError("anticommuter fails: square is not the identity")
    x1 = generation_observable(n)
    if np.max(np.abs(a @ x1 + x1 @ a)) > 1e-9:
        raise InvalidOperatorError(
            "anticommuter fails: does not anticommute with the generation observable")


def _is_reverse_diagonal(a: np.ndarray) -> bool:
    mask = np.fliplr(np.eye(a.shape[0], dtype=bool))
    return bool(np.max(np.abs(a[~mask])) < 1e-14)


@dataclass(frozen=True)
class SamplingSpec:
    """How hard to search for violations of a trust-coefficient claim."""

    grid_points: int = 64
    random_samples: int = 10_000
    multistarts: int = 20
    seed: int = 0


@dataclass(frozen=True)
class TrustCheckResult:
    passed: bool
    max_violation: float
    witness: tuple
    samples_used: int
    analytic_failures: int = -1  # -1 means the analytic checks did not apply


def ghz_analytic_entry_checks(th: np.ndarray, c: float) -> int:
    """Count violations of the closed-form entry bounds for the GHZ game.

    For phases in the upper half circle, the corner entries obey
    |(1/4 - c) - (pair sum)/4| <= 1 - c via the triangle inequality, and the
    remaining entries obey the two-conjugate phase bound |1 - ab - bc - ca|
    <= 2*sqrt(2), giving sqrt(2)/2 + c for the shifted entry.  Returns how
    many sampled angle tuples break either bound.
    """
    z1, z2, z3 = np.exp(1j * th[..., 0]), np.exp(1j * th[..., 1]), np.exp(1j * th[..., 2])
    corner = np.abs((0.25 - c) - 0.25 * (z1 * z2 + z2 * z3 + z1 * z3))
    bad = int(np.sum(corner > 1.0 - c + 1e-9))
    mixed = np.abs(1 - z1 * np.conj(z2) - np.conj(z2) * np.conj(z3)
                   - z1 * np.conj(z3))
    bad += int(np.sum(mixed > 2 * np.sqrt(2) + 1e-9))
    return bad


def trust_coefficient_check(game: XorGame, c: float, anticommuter: HermitianOperator,
                            samples: SamplingSpec | None = None,
                            qG: float | None = None) -> TrustCheckResult:
    """Sampled certification that ||M - c N|| <= qG - c over canonical strategies.

    The claim is tested on a dense grid of upper-half-circle angle tuples,
    a batch of random tuples, and local maximizations of the norm from
    random starts.  For reverse-diagonal anticommuters the operator norm is
    the maximum entry modulus, so the whole sweep is vectorized.
    """
    if c < 0:
        raise ValueError("coefficient must be nonnegative")
    samples = samples or SamplingSpec()
    _validate_anticommuter(game.n, anticommuter)
    if qG is None:
        qG, _ = optimal_score(game)
    d = 2**game.n
    anti = anticommuter.entries
    rev = _is_reverse_diagonal(anti)
    anti_diag = np.array([anti[b, d - 1 - b] for b in range(d)]) if rev else None

    def norms(th):
        if rev:
            entries = reverse_diagonal_entries(game, th)
            return np.max(np.abs(entries - c * anti_diag), axis=-1)
        out = np.empty(th.shape[:-1])
        it = np.ndindex(th.shape[:-1])
        for idx in it:
            m = scoring_operator(game, np.exp(1j * th[idx])).entries
            out[idx] = np.linalg.norm(np.linalg.eigvalsh(m - c * anti), ord=np.inf)
        return out

    rng = np.random.default_rng(samples.seed)
    axes = np.linspace(0, np.pi, samples.grid_points)
    grid = np.stack(np.meshgrid(*[axes] * game.n, indexing="ij"), axis=-1)
    grid = grid.reshape(-1, game.n)
    rand = rng.uniform(0, np.pi, size=(samples.random_samples, game.n))
    th_all = np.vstack([grid, rand])
    vals = norms(th_all)
    best = int(np.argmax(vals))
    best_val, best_th = float(vals[best]), th_all[best]

    # local ascent sharpens the sampled maximum
    step0 = np.pi / max(samples.grid_points, 8)
    starts = [best_th] + list(rng.uniform(0, np.pi, size=(max(samples.multistarts - 1, 0), game.n)))
    for s in starts:
        th = np.array(s, dtype=float)
        step = step0
        val = float(norms(th[None, :])[0])
        for _ in range(200):
            trials = np.clip(th + step * np.vstack([np.eye(game.n), -np.eye(game.n)]),
                             0.0, np.pi)
            tvals = norms(trials)
            j = int(np.argmax(tvals))
            if tvals[j] > val + 1e-14:
                th, val = trials[j], float(tvals[j])
            else:
                step *= 0.5
                if step < 1e-10:
                    break
        if val > best_val:
            best_val, best_th = val, th

    violation = best_val - (qG - c)
    analytic = -1
    if (game.entries == ghz_game().entries and abs(c - 0.14) < 1e-12 and rev
            and anti_diag is not None
            and np.allclose(anti_diag.real, [1, 1, -1, -1, -1, -1, 1, 1])):
        analytic = ghz_analytic_entry_checks(th_all, c)
    return TrustCheckResult(
        passed=bool(violation <= 1e-9),
        max_violation=float(violation),
        witness=tuple(np.exp(1j * best_th)),
        samples_used=len(th_all),
        analytic_failures=analytic,
    )


def _anticommuter_orbit_pairs(n: int):
    """Pairs of top-half reverse-diagonal positions coupled by the constraints.

    Hermiticity mirrors entry b onto its bitwise complement, and
    anticommutation with the generation observable negates the entry when
    the first bit flips; composing the two keeps the position in the top
    half and forces entry(partner) = -conj(entry(b)).
    """
    half = 2 ** (n - 1)
    full = 2**n - 1
    seen, pairs = set(), []
    for b in range(half):
        if b in seen:
            continue
        partner = (full ^ b) ^ half
        seen.update((b, partner))
        pairs.append((b, partner))
    return pairs


def anticommuter_family(n: int, phases=(1.0, -1.0)):
    """All valid reverse-diagonal anticommuters with per-orbit entries drawn
    from the given unit phases.

    The constraints leave one free unit phase per orbit pair; real phases
    (+-1 sign patterns) suffice when the game's corner direction is real,
    and the trust-coefficient search adds the corner phase of the score
    polynomial otherwise.
    """
    pairs = _anticommuter_orbit_pairs(n)
    half = 2 ** (n - 1)
    options = [complex(p) for p in phases]
    for assign in np.ndindex(*([len(options)] * len(pairs))):
        top = np.zeros(half, dtype=np.complex128)
        for (b, partner), k in zip(pairs, assign):
            phi = options[k]
            top[b] = phi
            top[partner] = -np.conj(phi)
        yield reverse_diagonal_anticommuter(n, top)


def trust_coefficient_search(game: XorGame, samples: SamplingSpec | None = None,
                             resolution: float = 1e-3,
                             classification: str | None = None) -> float:
    """Sampled lower-confidence bound on the trust coefficient.

    Bisects the largest coefficient passing trust_coefficient_check over the
    reverse-diagonal sign-pattern family, then subtracts the bisection
    resolution.  This is a sampled estimate, not a proof.
    """
    classification = classification or classify_selftest(game)
    if classification != "strong-self-test":
        raise ValueError(
            f"trust-coefficient search requires a strong self-test, got {classification}")
    samples = samples or SamplingSpec(grid_points=24, random_samples=2000, multistarts=4)
    qG, maximizer = optimal_score(game)
    corner = _pg_batch(game, np.exp(1j * np.asarray(maximizer[1:]))[None, :])[0]
    phases = [1.0 + 0j, -1.0 + 0j]
    if abs(corner) > 1e-12:
        phase = corner / abs(corner)
        if min(abs(phase - 1), abs(phase + 1)) > 1e-9:
            phases.extend([phase, -phase])
    best = 0.0
    for anti in anticommuter_family(game.n, phases=phases):
        try:
            _validate_anticommuter(game.n, anti)
        except InvalidOperatorError:
            continue
        lo, hi = 0.0, qG
        if not trust_coefficient_check(game, 0.0, anti, samples, qG=qG).passed:
            continue
        for _ in range(int(np.ceil(np.log2(max(qG, 1e-12) / resolution))) + 1):
            mid = 0.5 * (lo + hi)
            if trust_coefficient_check(game, mid, anti, samples, qG=qG).passed:
                lo = mid
            else:
                hi = mid
        best = max(best, lo)
    return max(best - resolution, 0.0)


def analyze_game(game: XorGame, vg_lower: float | None = None,
                 provenance: str = "") -> GameConstants:
    """Compute the constants bundle; the trust bound may be supplied or searched."""
    qG, maximizer = optimal_score(game)
    classification = classify_selftest(game)
    if vg_lower is None:
        vg_lower = trust_coefficient_search(game, classification=classification)
        provenance = provenance or "sampled bisection search"
    wG = (1 + qG) / 2
    return GameConstants(
        qG=qG, wG=wG, fG=1 - wG, maximizer=tuple(maximizer),
        classification=classification, vG_lower=float(vg_lower),
        provenance=provenance,
    )


def ghz_constants() -> GameConstants:
    """Constants for the GHZ game with the certified 0.14 trust bound."""
    return GameConstants(
        qG=1.0, wG=1.0, fG=0.0,
        maximizer=(0.0, np.pi / 2, np.pi / 2, np.pi / 2),
        classification="strong-self-test",
        vG_lower=0.14,
        provenance="grid + analytic entry bounds at c = 0.14",
    )


def chsh_constants(vg_lower: float = 0.10) -> GameConstants:
    """Constants for the CHSH game; trust bound from the sampled search."""
    s = float(np.sqrt(2) / 2)
    return GameConstants(
        qG=s, wG=(1 + s) / 2, fG=(1 - s) / 2,
        maximizer=(-np.pi / 4, np.pi / 2, np.pi / 2),
        classification="strong-self-test",
        vG_lower=vg_lower,
        provenance="sampled bisection search",
    )


def named_constants(name: str) -> GameConstants:
    name = name.lower()
    if name == "ghz":
        return ghz_constants()
    if name == "chsh":
        return chsh_constants()
    raise KeyError(f"no stored constants for {name!r}")
