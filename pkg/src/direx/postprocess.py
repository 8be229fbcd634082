"""Strong-extractor post-processing and the two-device cross-feeding engine.

Extraction is Toeplitz (2-universal) hashing over GF(2): a stand-in for a
quantum-proof strong extractor whose quantum-proofness is taken from the
leftover hashing literature and recorded as an external assumption in the
results.  Its seed is linear in the source length, so at desk scale a
stage's seed demand exceeds the previous stage's output; the shortfall is
drawn from the master pool and reported honestly in the seed ledger.

Cross-feeding alternates two devices, feeding each stage's extracted output
forward as the next stage's seed material; soundness and completeness
entries accumulate additively in exact dyadic arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InfeasibleError
from .protocols import ProtocolConfig, run_protocol_r, symbols_to_bits
from .rates import RateReport, certified_bound, tune_parameters
from .seeding import BitStream, numpy_rng, substream
from .xorgames import GameConstants, XorGame


@dataclass(frozen=True)
class ExtractorSpec:
    """Toeplitz extraction plan: m output bits from an N-bit source under a
    claimed min-entropy k, with leftover-hash slack 2 log(1/ext_error)."""

    source_len: int
    output_len: int
    claimed_min_entropy: float
    ext_error_exp: float  # log2(1/ext_error)

    def __post_init__(self):
        if self.output_len > self.claimed_min_entropy - 2 * self.ext_error_exp:
            raise InfeasibleError(
                f"output length {self.output_len} exceeds the hashing budget "
                f"{self.claimed_min_entropy - 2 * self.ext_error_exp:.1f}")

    @property
    def seed_len(self) -> int:
        return self.source_len + self.output_len - 1

    @property
    def ext_error(self) -> Fraction:
        return Fraction(1, 2 ** int(np.ceil(self.ext_error_exp)))


def _bits_to_int_lsb(bits: np.ndarray) -> int:
    padded = np.zeros(-(-bits.size // 8) * 8, dtype=np.uint8)
    padded[: bits.size] = bits
    return int.from_bytes(np.packbits(padded, bitorder="little").tobytes(), "little")


def toeplitz_extract(source, seed, m: int) -> np.ndarray:
    """Multiply the source by the Toeplitz matrix packed in the seed.

    Row i, column j of the matrix is seed[i - j + N - 1], so the product is
    a slice of the GF(2) convolution of seed and source, computed here as a
    carryless product of big integers (exact and fast at desk sizes).
    """
    src = np.asarray(source, dtype=np.uint8) % 2
    sd = np.asarray(seed, dtype=np.uint8) % 2
    n = src.size
    if sd.size != n + m - 1:
        raise ValueError(f"seed must have {n + m - 1} bits, got {sd.size}")
    seed_int = _bits_to_int_lsb(sd)
    prod = 0
    for j in np.nonzero(src)[0]:
        prod ^= seed_int << int(j)
    window = (prod >> (n - 1)) & ((1 << m) - 1)
    raw = np.frombuffer(window.to_bytes(-(-m // 8), "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:m].astype(np.uint8)


def dyadic_upper(log2_value: float, cap_at_one: bool = True) -> Fraction:
    """Smallest power of two at or above 2**log2_value, as an exact Fraction."""
    e = int(np.ceil(log2_value))
    frac = Fraction(2) ** e
    if cap_at_one and frac > 1:
        return Fraction(1)
    return frac


@dataclass(frozen=True)
class LedgerEntry:
    stage: int
    device_id: int
    soundness: Fraction
    completeness: Fraction
    vacuous: bool
    seed_from_stage: int  # -1 means the initial pool


@dataclass
class ErrorLedger:
    """Additive error bookkeeping across composition stages, in exact
    dyadic rationals."""

    entries: list = field(default_factory=list)

    def add(self, entry: LedgerEntry):
        self.entries.append(entry)

    @property
    def total_soundness(self) -> Fraction:
        return sum((e.soundness for e in self.entries), Fraction(0))

    @property
    def total_completeness(self) -> Fraction:
        return sum((e.completeness for e in self.entries), Fraction(0))

    def check_totals(self) -> bool:
        return (self.total_soundness == sum((e.soundness for e in self.entries),
                                            Fraction(0))
                and self.total_completeness == sum(
                    (e.completeness for e in self.entries), Fraction(0)))

    def check_wiring(self) -> bool:
        """No stage may be seeded by its own device's previous output."""
        by_stage = {e.stage: e for e in self.entries}
        for e in self.entries:
            if e.seed_from_stage >= 0:
                feeder = by_stage[e.seed_from_stage]
                if feeder.device_id == e.device_id:
                    return False
        return True

    def to_record(self) -> dict:
        return {
            "entries": [
                {"stage": e.stage, "device": e.device_id,
                 "soundness": str(e.soundness), "completeness": str(e.completeness),
                 "vacuous": e.vacuous, "seed_from_stage": e.seed_from_stage}
                for e in self.entries
            ],
            "total_soundness": str(self.total_soundness),
            "total_completeness": str(self.total_completeness),
        }


class ChainedBitSource(BitStream):
    """Seed source that serves queued bits first (the previous stage's
    output), then tops up from a fallback stream, counting the shortfall."""

    def __init__(self, bits, fallback: BitStream):
        self._queue = list(int(b) for b in bits)
        self._fallback = fallback
        self.consumed = 0
        self.from_queue = 0
        self.topped_up = 0
        self.limit = None

    def take(self, k: int) -> int:
        out = 0
        for _ in range(k):
            if self._queue:
                bit = self._queue.pop(0)
                self.from_queue += 1
            else:
                bit = self._fallback.take_bit()
                self.topped_up += 1
            out = (out << 1) | bit
        self.consumed += k
        return out


@dataclass(frozen=True)
class CrossFeedStage:
    """One composition stage: protocol size, rate parameters, and the
    requested extraction length."""

    N: int
    q: float
    eta: float
    kappa: float
    epsilon_exp: float  # smoothing parameter = 2**(-epsilon_exp)
    m_out: int
    ext_error_exp: float = 20.0


@dataclass(frozen=True)
class StageResult:
    stage: int
    device_id: int
    success: bool
    output_bits: np.ndarray
    report: RateReport
    extractor: ExtractorSpec
    seed_bits_used: int
    seed_from_previous: int
    seed_topped_up: int
    extractor_seed_bits: int


class CrossFeedAbort(RuntimeError):
    def __init__(self, stage: int, msg: str):
        super().__init__(msg)
        self.stage = stage


@dataclass(frozen=True)
class CrossFeedResult:
    final_bits: np.ndarray
    ledger: ErrorLedger
    stages: tuple
    notes: tuple


def cross_feed(game: XorGame, constants: GameConstants, device_a, device_b,
               stages, master: bytes, tune_delta: float = 0.1) -> CrossFeedResult:
    """Run the alternating two-device composition.

    Stage i runs the game protocol on device i mod 2 and extracts m_out
    bits; the extracted output is queued as the next stage's protocol seed.
    Any stage abort aborts the composition with its index.  Ledger entries
    price each stage's soundness with the tuned error exponent and its
    completeness with the honest-abort bound; entries beyond their premise
    regime are capped at one and flagged vacuous.
    """
    tuned = tune_parameters(constants, stages[0].eta, tune_delta)
    ledger = ErrorLedger()
    results = []
    notes = [
        "extractor substitution: Toeplitz 2-universal hashing; quantum-proofness "
        "taken from leftover hashing against quantum side information",
        "composition soundness relies on output-to-input uniformity switching "
        "between devices (no device-adversary interaction); flagged, not reproved",
    ]
    prev_bits: np.ndarray = np.zeros(0, dtype=np.uint8)
    devices = (device_a, device_b)
    for i, stage in enumerate(stages):
        device_id = i % 2
        behavior = devices[device_id]
        report = certified_bound(constants, stage.N, stage.q, stage.eta,
                                 stage.kappa, 2.0 ** (-stage.epsilon_exp))
        spec = ExtractorSpec(
            source_len=2 * stage.N, output_len=stage.m_out,
            claimed_min_entropy=report.bound, ext_error_exp=stage.ext_error_exp)
        seed_source = ChainedBitSource(prev_bits,
                                       substream(master, "stage-topup", i))
        config = ProtocolConfig(mode="R", N=stage.N, q=stage.q, eta=stage.eta,
                                game=game, w_G=constants.wG)
        outcome = run_protocol_r(config, behavior, seed_source,
                                 numpy_rng(master, "stage-device", i),
                                 record_rounds=False)
        if not outcome.success:
            raise CrossFeedAbort(i, f"stage {i} aborted "
                                    f"({outcome.transcript.failures} failures)")
        source = symbols_to_bits(outcome.transcript.symbols)
        ext_stream = substream(master, "extractor-seed", i)
        seed = ext_stream.take_bits(spec.seed_len)
        out_bits = toeplitz_extract(source, seed, stage.m_out)
        log2_sound = 0.5 - tuned.b * stage.q * stage.N
        soundness = dyadic_upper(log2_sound) + spec.ext_error
        completeness = dyadic_upper(-stage.eta**2 * stage.q * stage.N
                                    / (3.0 * np.log(2.0)))
        vacuous = stage.q > tuned.q0 or soundness >= 1
        ledger.add(LedgerEntry(stage=i, device_id=device_id,
                               soundness=min(soundness, Fraction(1)),
                               completeness=completeness, vacuous=vacuous,
                               seed_from_stage=i - 1))
        results.append(StageResult(
            stage=i, device_id=device_id, success=True, output_bits=out_bits,
            report=report, extractor=spec,
            seed_bits_used=seed_source.consumed,
            seed_from_previous=seed_source.from_queue,
            seed_topped_up=seed_source.topped_up,
            extractor_seed_bits=spec.seed_len,
        ))
        prev_bits = out_bits
    if not ledger.check_wiring():
        raise RuntimeError("wiring invariant violated")
    return CrossFeedResult(final_bits=prev_bits, ledger=ledger,
                           stages=tuple(results), notes=tuple(notes))


@dataclass(frozen=True)
class SchedulePlan:
    stages: tuple  # of dicts with seed_bits, N_uncapped (int or float inf), N, q
    theoretical_output: float  # log2 of the uncapped final length


def expansion_schedule(k: int, omega: float, desk_cap: int,
                       max_stages: int = 16) -> SchedulePlan:
    """Stage plan for iterated expansion from k seed bits.

    A stage with k_i seed bits targets 2**(k_i**(1-omega)) output bits at
    test probability k_i**omega / 2**(k_i**(1-omega)); execution sizes are
    capped per stage at desk_cap, and the uncapped targets are reported
    alongside.  Seed lengths are tracked in log2 so the tower can be
    followed past float range; planning stops when the uncapped output
    stops growing.
    """
    if not 0 < omega < 1:
        raise ValueError("exponent must lie in the open interval (0, 1)")
    if k < 2:
        raise ValueError("need at least 2 seed bits")
    stages = []
    log_ki = float(np.log2(k))
    for _ in range(max_stages):
        # log2 of the uncapped output length: k_i**(1-omega)
        log_out = _pow2_safe((1.0 - omega) * log_ki)
        n_uncapped = 2.0**log_out if log_out < 63 else float("inf")
        n_capped = int(min(n_uncapped, desk_cap))
        log_q = omega * log_ki - log_out  # log2 of k_i**omega / 2**log_out
        q = 2.0**log_q if log_q > -300 else 0.0
        stages.append({
            "seed_bits_log2": log_ki,
            "N_uncapped": n_uncapped,
            "N": n_capped,
            "q": q,
        })
        if log_out <= log_ki + 1e-12:
            break
        log_ki = log_out
    return SchedulePlan(stages=tuple(stages), theoretical_output=log_ki)


def stages_to_reach(k: int, omega: float, target_log2: float,
                    max_stages: int = 64) -> int:
    """Number of uncapped stages before the output length passes a target
    length (given as its log2); pure tower arithmetic."""
    if not 0 < omega < 1:
        raise ValueError("exponent must lie in the open interval (0, 1)")
    log_ki = float(np.log2(k))
    for i in range(1, max_stages + 1):
        log_out = _pow2_safe((1.0 - omega) * log_ki)
        if log_out >= target_log2:
            return i
        if log_out <= log_ki + 1e-12:
            raise InfeasibleError("schedule stalls before reaching the target")
        log_ki = log_out
    raise InfeasibleError("target not reached within the stage budget")


def _pow2_safe(x: float) -> float:
    return 2.0**x if x < 1023 else float("inf")
