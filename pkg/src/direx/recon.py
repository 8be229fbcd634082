"""Efficient information reconciliation at desk scale.

One-way syndrome transmission over a binary linear code; unique decoding
when the promised error fraction is below a quarter, list decoding plus
almost-pairwise-independent hash disambiguation above it.  Codes are
structured (Hamming, the 3-error BCH of length 15, repetition,
interleavings) with known distance, or random with exhaustively verified
distance for lengths up to 24.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DecodeFailureError, ListOverflowError
from .seeding import BitStream

EXHAUSTIVE_LENGTH_CAP = 24


# ---------------------------------------------------------------------------
# GF(2) and GF(2^m) helpers


def gf2_rref(mat: np.ndarray):
    """Reduced row echelon form over GF(2); returns (rref, pivot columns)."""
    m = mat.copy() % 2
    rows, cols = m.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        hit = np.nonzero(m[r:, c])[0]
        if hit.size == 0:
            continue
        i = r + hit[0]
        m[[r, i]] = m[[i, r]]
        for j in range(rows):
            if j != r and m[j, c]:
                m[j] ^= m[r]
        pivots.append(c)
        r += 1
    return m, pivots


def gf2_null_space(mat: np.ndarray) -> np.ndarray:
    """Basis (rows) of the null space of mat over GF(2)."""
    rref, pivots = gf2_rref(mat)
    cols = mat.shape[1]
    free = [c for c in range(cols) if c not in pivots]
    basis = []
    for f in free:
        v = np.zeros(cols, dtype=np.uint8)
        v[f] = 1
        for r, p in enumerate(pivots):
            if rref[r, f]:
                v[p] = 1
        basis.append(v)
    return np.array(basis, dtype=np.uint8) if basis else np.zeros((0, cols), np.uint8)


def _poly_mul_mod2(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def _poly_mod(a: int, f: int) -> int:
    df = f.bit_length() - 1
    while a.bit_length() - 1 >= df and a:
        a ^= f << (a.bit_length() - 1 - df)
    return a


def _poly_powmod(base: int, e: int, f: int) -> int:
    out = 1
    base = _poly_mod(base, f)
    while e:
        if e & 1:
            out = _poly_mod(_poly_mul_mod2(out, base), f)
        base = _poly_mod(_poly_mul_mod2(base, base), f)
        e >>= 1
    return out


def _poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, _poly_mod(a, b)
    return a


def irreducible_poly(m: int) -> int:
    """Deterministically pick an irreducible degree-m polynomial over GF(2).

    Scans low-weight candidates in a fixed order and applies the standard
    irreducibility test (x^(2^m) = x mod f, and gcd(x^(2^(m/p)) - x, f) = 1
    for prime divisors p of m).
    """
    if m == 1:
        return 0b10
    primes = sorted({p for p in range(2, m + 1) if m % p == 0 and _is_prime(p)})

    def is_irreducible(f):
        if _poly_powmod(0b10, 2**m, f) != _poly_mod(0b10, f):
            return False
        for p in primes:
            g = _poly_gcd(_poly_powmod(0b10, 2 ** (m // p), f) ^ 0b10, f)
            if g.bit_length() - 1 > 0:
                return False
        return True

    for weight in range(1, m + 1):
        for mids in itertools.combinations(range(1, m), weight):
            f = (1 << m) | 1
            for e in mids:
                f |= 1 << e
            if is_irreducible(f):
                return f
    raise RuntimeError(f"no irreducible polynomial of degree {m} found")


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in range(2, int(n**0.5) + 1):
        if n % p == 0:
            return False
    return True


class GF2m:
    """Arithmetic in GF(2^m) with a fixed irreducible modulus."""

    def __init__(self, m: int):
        self.m = m
        self.modulus = irreducible_poly(m)

    def mul(self, a: int, b: int) -> int:
        return _poly_mod(_poly_mul_mod2(a, b), self.modulus)

    def pow(self, a: int, e: int) -> int:
        out = 1
        a = _poly_mod(a, self.modulus)
        while e:
            if e & 1:
                out = self.mul(out, a)
            a = self.mul(a, a)
            e >>= 1
        return out


# ---------------------------------------------------------------------------
# Linear codes


@dataclass(frozen=True)
class LinearCode:
    """Binary linear code given by its parity check matrix.

    regime "unique" promises unique decodability within half the minimum
    distance; regime "list" bounds the coset list size instead.  interleave
    > 1 marks a block-diagonal stack of a base code: the global distance is
    the base distance, and decoding runs per block.
    """

    name: str
    check_matrix: np.ndarray = field(repr=False)
    min_distance: int
    regime: str = "unique"
    list_cap: int = 0
    interleave: int = 1
    distance_provenance: str = "by construction"

    def __post_init__(self):
        h = np.asarray(self.check_matrix, dtype=np.uint8) % 2
        h.setflags(write=False)
        object.__setattr__(self, "check_matrix", h)
        if self.regime not in ("unique", "list"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "list" and self.list_cap < 1:
            raise ValueError("list regime needs a positive list cap")

    @property
    def length(self) -> int:
        return self.check_matrix.shape[1]

    @property
    def n_checks(self) -> int:
        return self.check_matrix.shape[0]

    @property
    def rate(self) -> float:
        return 1.0 - self.n_checks / self.length

    @property
    def unique_radius(self) -> int:
        """Guaranteed unique-decoding radius: half the minimum distance.

        For interleaved codes this is the global guarantee; per-block
        decoding corrects up to the base radius in every block.
        """
        return (self.min_distance - 1) // 2

    @property
    def block_length(self) -> int:
        return self.length // self.interleave

    def supported_lambda(self) -> float:
        """Largest disagreement parameter this code's radius backs:
        1/2 - radius/length."""
        return 0.5 - self.unique_radius / self.length


def syndrome(code: LinearCode, word) -> np.ndarray:
    w = np.asarray(word, dtype=np.uint8)
    if w.shape != (code.length,):
        raise ValueError(f"word length {w.shape} does not match code length {code.length}")
    return (code.check_matrix @ w) % 2


def verify_min_distance(code: LinearCode) -> int:
    """Exhaustive minimum distance (codeword enumeration), length <= 24."""
    if code.length > EXHAUSTIVE_LENGTH_CAP:
        raise ValueError("exhaustive distance check capped at length 24")
    basis = gf2_null_space(code.check_matrix)
    k = basis.shape[0]
    best = code.length + 1
    for mask in range(1, 2**k):
        v = np.zeros(code.length, dtype=np.uint8)
        for i in range(k):
            if (mask >> i) & 1:
                v ^= basis[i]
        best = min(best, int(v.sum()))
    return best


_SYNDROME_TABLES: dict = {}


def _syndrome_key(s: np.ndarray) -> bytes:
    return np.packbits(s).tobytes()


def _code_key(code: LinearCode) -> tuple:
    return (code.check_matrix.tobytes(), code.check_matrix.shape,
            code.min_distance, code.interleave)


def _unique_table(code: LinearCode) -> dict:
    """Coset-leader table for weights up to the unique radius (one block)."""
    key = _code_key(code)
    tab = _SYNDROME_TABLES.get(key)
    if tab is not None:
        return tab
    n = code.block_length
    h = code.check_matrix[: code.n_checks // code.interleave, :n] \
        if code.interleave > 1 else code.check_matrix
    radius = code.unique_radius
    tab = {}
    for w in range(radius + 1):
        for positions in itertools.combinations(range(n), w):
            e = np.zeros(n, dtype=np.uint8)
            e[list(positions)] = 1
            s = _syndrome_key((h @ e) % 2)
            if s in tab:
                raise ValueError(
                    "syndrome collision within the radius; distance too small")
            tab[s] = e
    _SYNDROME_TABLES[key] = tab
    return tab


def unique_decode(code: LinearCode, synd) -> np.ndarray:
    """Minimum-weight coset leader within the unique-decoding radius.

    Interleaved codes decode blockwise.  Raises DecodeFailureError when no
    error pattern within the radius matches the syndrome.
    """
    if code.regime != "unique":
        raise ValueError("code is not in the unique regime")
    s = np.asarray(synd, dtype=np.uint8) % 2
    if s.shape != (code.n_checks,):
        raise ValueError("syndrome length mismatch")
    tab = _unique_table(code)
    per = code.n_checks // code.interleave
    blocks = []
    for b in range(code.interleave):
        part = _syndrome_key(s[b * per:(b + 1) * per])
        hit = tab.get(part)
        if hit is None:
            raise DecodeFailureError(
                f"no error of weight <= {code.unique_radius} in block {b}")
        blocks.append(hit)
    return np.concatenate(blocks)


_COSET_TABLES: dict = {}


def _coset_table(code: LinearCode, radius: int) -> dict:
    key = (_code_key(code), radius)
    tab = _COSET_TABLES.get(key)
    if tab is not None:
        return tab
    if code.length > EXHAUSTIVE_LENGTH_CAP:
        raise ValueError("exhaustive list decoding capped at length 24")
    tab = {}
    n = code.length
    h = code.check_matrix
    cols = [np.packbits(h[:, j]).tobytes() for j in range(n)]
    col_ints = [int.from_bytes(c, "big") for c in cols]
    for w in range(radius + 1):
        for positions in itertools.combinations(range(n), w):
            acc = 0
            for p in positions:
                acc ^= col_ints[p]
            tab.setdefault(acc, []).append(positions)
    _COSET_TABLES[key] = tab
    return tab


def list_decode(code: LinearCode, synd, radius: int) -> list:
    """All coset members of weight at most the radius, as error vectors.

    Raises ListOverflowError when the list exceeds the configured cap.
    """
    if code.regime != "list":
        raise ValueError("code is not in the list regime")
    s = np.asarray(synd, dtype=np.uint8) % 2
    tab = _coset_table(code, radius)
    acc = int.from_bytes(np.packbits(s).tobytes(), "big")
    hits = tab.get(acc, [])
    if len(hits) > code.list_cap:
        raise ListOverflowError(
            f"list size {len(hits)} exceeds the cap {code.list_cap}")
    out = []
    for positions in hits:
        e = np.zeros(code.length, dtype=np.uint8)
        e[list(positions)] = 1
        out.append(e)
    return out


def expected_list_size(code: LinearCode, radius: int) -> float:
    """Average coset list size at the radius: ball volume / 2^checks."""
    vol = sum(comb(code.length, w) for w in range(radius + 1))
    return vol / 2.0**code.n_checks


# constructors -------------------------------------------------------------


def hamming_code(length: int) -> LinearCode:
    """Shortened Hamming code of any length >= 3: columns are the binary
    representations of 1..length, distance 3, corrects one error."""
    if length < 3:
        raise ValueError("need length at least 3")
    m = max(int(np.ceil(np.log2(length + 1))), 2)
    h = np.zeros((m, length), dtype=np.uint8)
    for j in range(length):
        for i in range(m):
            h[i, j] = ((j + 1) >> i) & 1
    return LinearCode(name=f"hamming-{length}", check_matrix=h, min_distance=3)


def bch_15_5() -> LinearCode:
    """The length-15, dimension-5, distance-7 cyclic code (corrects 3)."""
    # generator polynomial x^10+x^8+x^5+x^4+x^2+x+1
    g = 0b10100110111
    gen = np.zeros((5, 15), dtype=np.uint8)
    for row in range(5):
        for j in range(11):
            gen[row, row + j] = (g >> j) & 1
    h = gf2_null_space(gen)
    code = LinearCode(name="bch-15-5", check_matrix=h, min_distance=7,
                      distance_provenance="verified exhaustively")
    if verify_min_distance(code) != 7:
        raise RuntimeError("distance check failed for the length-15 code")
    return code


def repetition_code(length: int) -> LinearCode:
    h = np.zeros((length - 1, length), dtype=np.uint8)
    for i in range(length - 1):
        h[i, 0] = h[i, i + 1] = 1
    return LinearCode(name=f"repetition-{length}", check_matrix=h,
                      min_distance=length)


def interleaved(base: LinearCode, copies: int) -> LinearCode:
    """Block-diagonal stack of a base code; distance stays the base's."""
    if base.interleave != 1:
        raise ValueError("base code must not already be interleaved")
    n, c = base.length, base.n_checks
    h = np.zeros((c * copies, n * copies), dtype=np.uint8)
    for b in range(copies):
        h[b * c:(b + 1) * c, b * n:(b + 1) * n] = base.check_matrix
    return LinearCode(name=f"{base.name}-x{copies}", check_matrix=h,
                      min_distance=base.min_distance, regime=base.regime,
                      list_cap=base.list_cap, interleave=copies,
                      distance_provenance=base.distance_provenance)


def random_linear_code(length: int, checks: int, rng: np.random.Generator,
                       list_cap: int, verify_distance: bool = False) -> LinearCode:
    h = rng.integers(0, 2, size=(checks, length)).astype(np.uint8)
    # keep full row rank so the advertised leak length is honest
    for _ in range(100):
        _, pivots = gf2_rref(h)
        if len(pivots) == checks:
            break
        h = rng.integers(0, 2, size=(checks, length)).astype(np.uint8)
    code = LinearCode(name=f"random-{length}x{checks}", check_matrix=h,
                      min_distance=1, regime="list", list_cap=list_cap,
                      distance_provenance="not applicable (list regime)")
    if verify_distance:
        d = verify_min_distance(code)
        object.__setattr__(code, "min_distance", d)
    return code


def code_to_record(code: LinearCode) -> dict:
    return {
        "name": code.name,
        "rows": ["".join(map(str, row)) for row in code.check_matrix],
        "min_distance": code.min_distance,
        "regime": code.regime,
        "list_cap": code.list_cap,
        "interleave": code.interleave,
    }


def code_from_record(rec: dict) -> LinearCode:
    h = np.array([[int(c) for c in row] for row in rec["rows"]], dtype=np.uint8)
    return LinearCode(name=rec["name"], check_matrix=h,
                      min_distance=int(rec["min_distance"]),
                      regime=rec.get("regime", "unique"),
                      list_cap=int(rec.get("list_cap", 0)),
                      interleave=int(rec.get("interleave", 1)))


def load_code(path: str) -> LinearCode:
    """Load a code from a JSON file of dense bit rows (see code_to_record)."""
    import json

    with open(path) as f:
        return code_from_record(json.load(f))


# ---------------------------------------------------------------------------
# Hash families


@dataclass(frozen=True)
class AffineHashFamily:
    """Exactly pairwise independent: h(x) = b + sum a_i x_i over GF(2^k),
    the input split into k-bit field elements."""

    n_bits: int
    k: int

    @property
    def chunks(self) -> int:
        return -(-self.n_bits // self.k)

    @property
    def seed_bits(self) -> int:
        return (self.chunks + 1) * self.k

    @property
    def bias(self) -> float:
        return 0.0

    def evaluate(self, seed: int, x_bits) -> int:
        gf = _gf_cache(self.k)
        x = _bits_to_int(x_bits)
        out = seed & ((1 << self.k) - 1)  # affine constant
        seed >>= self.k
        for _ in range(self.chunks):
            chunk = x & ((1 << self.k) - 1)
            x >>= self.k
            a = seed & ((1 << self.k) - 1)
            seed >>= self.k
            out ^= gf.mul(a, chunk)
        return out


@dataclass(frozen=True)
class SmallBiasHashFamily:
    """Almost pairwise independent family from a powering small-bias
    generator: output bit j of h(x) is the inner product of the coefficient
    vectors of r^(index(x, j)) and s in GF(2^m).

    Any parity over positions up to 2^n * k is biased by at most
    (max index)/2^m, so with m = n + log k + k + log(1/eps) + 1 the joint
    distribution of any hash-value pair is within eps of uniform.
    """

    n_bits: int
    k: int
    eps: float

    def __post_init__(self):
        m = (self.n_bits + int(np.ceil(np.log2(max(self.k, 2))))
             + self.k + int(np.ceil(np.log2(1.0 / self.eps))) + 1)
        object.__setattr__(self, "_m", m)

    @property
    def field_bits(self) -> int:
        return self._m

    @property
    def seed_bits(self) -> int:
        return 2 * self._m

    @property
    def bias(self) -> float:
        return self.eps

    def evaluate(self, seed: int, x_bits) -> int:
        gf = _gf_cache(self._m)
        mask = (1 << self._m) - 1
        r = seed & mask
        s = (seed >> self._m) & mask
        x = _bits_to_int(x_bits)
        out = 0
        base_index = x * self.k + 1
        rpow = gf.pow(r, base_index)
        for j in range(self.k):
            bit = (rpow & s).bit_count() & 1
            out = (out << 1) | bit
            if j + 1 < self.k:
                rpow = gf.mul(rpow, r)
        return out


_GF_FIELDS: dict = {}


def _gf_cache(m: int) -> GF2m:
    f = _GF_FIELDS.get(m)
    if f is None:
        f = GF2m(m)
        _GF_FIELDS[m] = f
    return f


def _bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def hash_bits_required(list_cap: int, eps: float) -> int:
    """Output length that pins the disambiguation failure under eps:
    ceil(log2(2 L / eps))."""
    return int(np.ceil(np.log2(2.0 * list_cap / eps)))


def hash_draw_eval(family, seed_bits, x_bits) -> tuple:
    """Evaluate a family member on an input; seed given as a bit list."""
    if len(seed_bits) != family.seed_bits:
        raise ValueError(
            f"family needs {family.seed_bits} seed bits, got {len(seed_bits)}")
    val = family.evaluate(_bits_to_int(seed_bits), x_bits)
    return tuple((val >> (family.k - 1 - i)) & 1 for i in range(family.k))


# ---------------------------------------------------------------------------
# The reconciliation protocol


@dataclass(frozen=True)
class EirResult:
    estimate: np.ndarray
    aborted: bool
    leaked_bits: int
    randomness_used: int
    correction_weight: int
    promise_violated: bool
    list_size: int = 0
    measured_rate: float = 0.0
    hash_value: int = -1  # -1 outside the list regime


def eir_run(x_bits, y_bits, code: LinearCode, lam: float, epsilon: float,
            shared: BitStream | None = None, hash_family=None) -> EirResult:
    """One-way reconciliation: the holder of x sends its syndrome (plus a
    hash value in the list regime) and the y side outputs an estimate of x.

    Unique regime: deterministic, consumes no shared randomness.  List
    regime: the coset is list-decoded within radius (1/2 - lam) * N and
    disambiguated by an almost-pairwise hash of ceil(log2(2L/eps)) bits.
    A promise violation (actual distance beyond the radius) is reported in
    the result, never silently accepted.
    """
    x = np.asarray(x_bits, dtype=np.uint8) % 2
    y = np.asarray(y_bits, dtype=np.uint8) % 2
    if x.shape != y.shape or x.shape != (code.length,):
        raise ValueError("inputs must both match the code length")
    if not 0 < lam < 0.5:
        raise ValueError("disagreement parameter must lie in (0, 1/2)")
    radius = int(np.floor((0.5 - lam) * code.length + 1e-9))
    actual = int(np.sum(x ^ y))
    sx = syndrome(code, x)
    s = (sx + syndrome(code, y)) % 2
    leaked = code.n_checks
    if code.regime == "unique":
        if radius > code.unique_radius:
            raise ValueError(
                f"promise radius {radius} exceeds the code's unique-decoding "
                f"radius {code.unique_radius}")
        try:
            d = unique_decode(code, s)
        except DecodeFailureError:
            return EirResult(estimate=y.copy(), aborted=True, leaked_bits=leaked,
                             randomness_used=0, correction_weight=0,
                             promise_violated=actual > radius,
                             measured_rate=code.rate)
        return EirResult(estimate=(y + d) % 2, aborted=False, leaked_bits=leaked,
                         randomness_used=0, correction_weight=int(d.sum()),
                         promise_violated=actual > radius,
                         measured_rate=code.rate)
    if shared is None:
        raise ValueError("list regime needs shared randomness")
    if hash_family is None:
        k = hash_bits_required(code.list_cap, epsilon)
        hash_family = AffineHashFamily(n_bits=code.length, k=k)
    try:
        cands = list_decode(code, s, radius)
    except ListOverflowError:
        return EirResult(estimate=y.copy(), aborted=True, leaked_bits=leaked,
                         randomness_used=0, correction_weight=0,
                         promise_violated=actual > radius,
                         measured_rate=code.rate)
    before = shared.consumed
    seed = shared.take(hash_family.seed_bits)
    used = shared.consumed - before
    hx = hash_family.evaluate(seed, x)
    leaked += hash_family.k
    matches = [d for d in cands if hash_family.evaluate(seed, (y + d) % 2) == hx]
    if len(matches) != 1:
        return EirResult(estimate=y.copy(), aborted=True, leaked_bits=leaked,
                         randomness_used=used, correction_weight=0,
                         promise_violated=actual > radius,
                         list_size=len(cands), measured_rate=code.rate,
                         hash_value=hx)
    d = matches[0]
    return EirResult(estimate=(y + d) % 2, aborted=False, leaked_bits=leaked,
                     randomness_used=used, correction_weight=int(d.sum()),
                     promise_violated=actual > radius, list_size=len(cands),
                     measured_rate=code.rate, hash_value=hx)
